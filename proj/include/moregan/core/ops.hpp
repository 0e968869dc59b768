#pragma once

#include <cmath>
#include <vector>

#include "moregan/core/autograd.hpp"

namespace moregan::ops {

namespace detail {
/// Gradient buffer of parent `i`, or nullptr when it needs none.
template <typename T>
Tensor<T>* parent_grad(Node<T>& node, std::size_t i) {
    auto& p = node.parents[i];
    return p->requires_grad ? &p->grad_buffer() : nullptr;
}

template <typename T>
Var<T> scalar_var(T v, std::vector<Var<T>> parents, std::function<void(Node<T>&)> bw) {
    return Var<T>::make(Tensor<T>(Shape{1, 1, 1, 1}, v), std::move(parents), std::move(bw));
}
}  // namespace detail

template <typename T>
Var<T> constant(Tensor<T> t) {
    return Var<T>(std::move(t), false);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (auto* g = detail::parent_grad(n, k)) {
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
            }
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
        if (auto* g = detail::parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
        }
        if (auto* g = detail::parent_grad(n, 1)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= n.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        if (auto* g = detail::parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * bv[i];
        }
        if (auto* g = detail::parent_grad(n, 1)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * av[i];
        }
    });
}

/// features [N,C,H,W] scaled per pixel by gate [N,1,H,W].
template <typename T>
Var<T> mul_broadcast_channels(const Var<T>& features, const Var<T>& gate) {
    const Shape fs = features.shape();
    const Shape gs = gate.shape();
    if (gs.n != fs.n || gs.c != 1 || gs.h != fs.h || gs.w != fs.w) {
        throw InvalidArgument("mul_broadcast_channels: gate " + gs.str() + " vs features " + fs.str());
    }
    Tensor<T> out = features.value();
    const std::size_t plane = fs.plane();
    for (int n = 0; n < fs.n; ++n) {
        const T* g = gate.value().plane(n, 0);
        for (int c = 0; c < fs.c; ++c) {
            T* o = out.plane(n, c);
            for (std::size_t p = 0; p < plane; ++p) o[p] *= g[p];
        }
    }
    return Var<T>::make(std::move(out), {features, gate}, [fs, plane](Node<T>& node) {
        const auto& fv = node.parents[0]->value;
        const auto& gv = node.parents[1]->value;
        auto* gf = detail::parent_grad(node, 0);
        auto* gg = detail::parent_grad(node, 1);
        for (int n = 0; n < fs.n; ++n) {
            for (int c = 0; c < fs.c; ++c) {
                const T* up = node.grad.plane(n, c);
                for (std::size_t p = 0; p < plane; ++p) {
                    if (gf) gf->plane(n, c)[p] += up[p] * gv.plane(n, 0)[p];
                    if (gg) gg->plane(n, 0)[p] += up[p] * fv.plane(n, c)[p];
                }
            }
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a.value();
    for (auto& v : out.values()) v *= s;
    return Var<T>::make(std::move(out), {a}, [s](Node<T>& n) {
        if (auto* g = detail::parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * n.grad[i];
        }
    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.values()) v = v > T(0) ? v : T(0);
    return Var<T>::make(std::move(out), {a}, [](Node<T>& n) {
        if (auto* g = detail::parent_grad(n, 0)) {
            const auto& x = n.parents[0]->value;
            for (std::size_t i = 0; i < g->size(); ++i) {
                if (x[i] > T(0)) (*g)[i] += n.grad[i];
            }
        }
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.values()) v = T(1) / (T(1) + std::exp(-v));
    return Var<T>::make(std::move(out), {a}, [](Node<T>& n) {
        if (auto* g = detail::parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                const T y = n.value[i];
                (*g)[i] += n.grad[i] * y * (T(1) - y);
            }
        }
    });
}

/// Elementwise clamp; gradient passes only strictly inside (lo, hi).
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
    Tensor<T> out = a.value();
    for (auto& v : out.values()) v = std::min(hi, std::max(lo, v));
    return Var<T>::make(std::move(out), {a}, [lo, hi](Node<T>& n) {
        if (auto* g = detail::parent_grad(n, 0)) {
            const auto& x = n.parents[0]->value;
            for (std::size_t i = 0; i < g->size(); ++i) {
                if (x[i] > lo && x[i] < hi) (*g)[i] += n.grad[i];
            }
        }
    });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw InvalidArgument("concat_channels: no inputs");
    Shape s = parts.front().shape();
    int channels = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        if (ps.n != s.n || ps.h != s.h || ps.w != s.w) {
            throw InvalidArgument("concat_channels: spatial mismatch " + ps.str() + " vs " + s.str());
        }
        channels += ps.c;
    }
    Shape os{s.n, channels, s.h, s.w};
    Tensor<T> out(os);
    const std::size_t plane = s.plane();
    int c0 = 0;
    for (const auto& p : parts) {
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < p.shape().c; ++c) {
                std::copy_n(p.value().plane(n, c), plane, out.plane(n, c0 + c));
            }
        }
        c0 += p.shape().c;
    }
    return Var<T>::make(std::move(out), parts, [plane](Node<T>& node) {
        int c0 = 0;
        for (std::size_t k = 0; k < node.parents.size(); ++k) {
            const Shape ps = node.parents[k]->value.shape();
            if (auto* g = detail::parent_grad(node, k)) {
                for (int n = 0; n < ps.n; ++n) {
                    for (int c = 0; c < ps.c; ++c) {
                        const T* src = node.grad.plane(n, c0 + c);
                        T* dst = g->plane(n, c);
                        for (std::size_t p = 0; p < plane; ++p) dst[p] += src[p];
                    }
                }
            }
            c0 += ps.c;
        }
    });
}

/// Same data, new extents.
template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
    return Var<T>::make(a.value().reshaped(s), {a}, [](Node<T>& n) {
        if (auto* g = detail::parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
        }
    });
}

// ---- reductions (scalar results) ----

template <typename T>
Var<T> mean(const Var<T>& a) {
    double s = 0.0;
    for (T v : a.value().values()) s += static_cast<double>(v);
    const T inv = T(1) / static_cast<T>(a.value().size());
    return detail::scalar_var<T>(static_cast<T>(s) * inv, {a}, [inv](Node<T>& n) {
        if (auto* g = detail::parent_grad(n, 0)) {
            const T up = n.grad[0] * inv;
            for (auto& v : g->values()) v += up;
        }
    });
}

/// mean |a - b|
template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mean_abs_diff");
    const auto& av = a.value();
    const auto& bv = b.value();
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += std::abs(static_cast<double>(av[i]) - static_cast<double>(bv[i]));
    const T inv = T(1) / static_cast<T>(av.size());
    return detail::scalar_var<T>(static_cast<T>(s) * inv, {a, b}, [inv](Node<T>& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        const T up = n.grad[0] * inv;
        auto* ga = detail::parent_grad(n, 0);
        auto* gb = detail::parent_grad(n, 1);
        for (std::size_t i = 0; i < av.size(); ++i) {
            const T d = av[i] - bv[i];
            const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
            if (ga) (*ga)[i] += up * sgn;
            if (gb) (*gb)[i] -= up * sgn;
        }
    });
}

/// mean (a - b)^2
template <typename T>
Var<T> mean_sq_diff(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mean_sq_diff");
    const auto& av = a.value();
    const auto& bv = b.value();
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
        s += d * d;
    }
    const T inv = T(1) / static_cast<T>(av.size());
    return detail::scalar_var<T>(static_cast<T>(s) * inv, {a, b}, [inv](Node<T>& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        const T up = n.grad[0] * inv * T(2);
        auto* ga = detail::parent_grad(n, 0);
        auto* gb = detail::parent_grad(n, 1);
        for (std::size_t i = 0; i < av.size(); ++i) {
            const T d = av[i] - bv[i];
            if (ga) (*ga)[i] += up * d;
            if (gb) (*gb)[i] -= up * d;
        }
    });
}

/// mean (a - target)^2 for a scalar target
template <typename T>
Var<T> mean_sq_to(const Var<T>& a, T target) {
    const auto& av = a.value();
    double s = 0.0;
    for (T v : av.values()) {
        const double d = static_cast<double>(v) - static_cast<double>(target);
        s += d * d;
    }
    const T inv = T(1) / static_cast<T>(av.size());
    return detail::scalar_var<T>(static_cast<T>(s) * inv, {a}, [inv, target](Node<T>& n) {
        if (auto* g = detail::parent_grad(n, 0)) {
            const auto& av = n.parents[0]->value;
            const T up = n.grad[0] * inv * T(2);
            for (std::size_t i = 0; i < av.size(); ++i) (*g)[i] += up * (av[i] - target);
        }
    });
}

/// Weighted sum of scalar vars.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
    if (terms.size() != weights.size()) throw InvalidArgument("weighted_sum: size mismatch");
    T total = T(0);
    for (std::size_t k = 0; k < terms.size(); ++k) {
        if (terms[k].value().size() != 1) throw InvalidArgument("weighted_sum: terms must be scalars");
        total += weights[k] * terms[k].item();
    }
    return detail::scalar_var<T>(total, terms, [weights](Node<T>& n) {
        for (std::size_t k = 0; k < weights.size(); ++k) {
            if (auto* g = detail::parent_grad(n, k)) (*g)[0] += weights[k] * n.grad[0];
        }
    });
}

}  // namespace moregan::ops
