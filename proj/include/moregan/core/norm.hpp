#pragma once

#include <cmath>
#include <memory>

#include "moregan/core/ops.hpp"

namespace moregan::ops {

namespace detail {

/// Shared normalization kernel. Groups are (channel) for batch stats or
/// (sample, channel) for instance stats.
template <typename T>
struct NormStats {
    std::vector<T> mean;
    std::vector<T> inv_std;
};

template <typename T>
void check_affine(const Shape& xs, const Var<T>& gamma, const Var<T>& beta, const char* where) {
    if (gamma.value().size() != static_cast<std::size_t>(xs.c) || beta.value().size() != static_cast<std::size_t>(xs.c)) {
        throw InvalidArgument(std::string(where) + ": affine parameters do not match channels of " + xs.str());
    }
}

/// Backward of y = gamma * (x - mean) * inv_std + beta where the statistics
/// were computed from the same group of M values.
template <typename T>
void norm_backward_group(T mean, T inv_std, T gamma, std::size_t count, const std::vector<const T*>& xs_ptrs,
                         const std::vector<const T*>& up_ptrs, const std::vector<T*>& gx_ptrs, T& dgamma, T& dbeta) {
    T sum_dy = 0;
    T sum_dy_xhat = 0;
    for (std::size_t k = 0; k < xs_ptrs.size(); ++k) {
        for (std::size_t p = 0; p < count; ++p) {
            const T xhat = (xs_ptrs[k][p] - mean) * inv_std;
            sum_dy += up_ptrs[k][p];
            sum_dy_xhat += up_ptrs[k][p] * xhat;
        }
    }
    dgamma += sum_dy_xhat;
    dbeta += sum_dy;
    const T m = static_cast<T>(count * xs_ptrs.size());
    for (std::size_t k = 0; k < xs_ptrs.size(); ++k) {
        if (!gx_ptrs[k]) continue;
        for (std::size_t p = 0; p < count; ++p) {
            const T xhat = (xs_ptrs[k][p] - mean) * inv_std;
            gx_ptrs[k][p] += gamma * inv_std / m * (m * up_ptrs[k][p] - sum_dy - xhat * sum_dy_xhat);
        }
    }
}

}  // namespace detail

/// Batch normalization over (N, H, W) per channel. In training mode the batch
/// statistics are used and the running buffers are updated in place.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum = T(0.1), T eps = T(1e-5)) {
    const Shape xs = x.shape();
    detail::check_affine(xs, gamma, beta, "batch_norm");
    const std::size_t plane = xs.plane();
    const std::size_t count = plane * xs.n;
    auto stats = std::make_shared<detail::NormStats<T>>();
    stats->mean.resize(xs.c);
    stats->inv_std.resize(xs.c);
    for (int c = 0; c < xs.c; ++c) {
        if (training) {
            double s = 0.0;
            for (int n = 0; n < xs.n; ++n) {
                const T* p = x.value().plane(n, c);
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
            }
            const double mu = s / static_cast<double>(count);
            double v = 0.0;
            for (int n = 0; n < xs.n; ++n) {
                const T* p = x.value().plane(n, c);
                for (std::size_t i = 0; i < plane; ++i) v += (p[i] - mu) * (p[i] - mu);
            }
            const double var = v / static_cast<double>(count);
            stats->mean[c] = static_cast<T>(mu);
            stats->inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : var;
            running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mu);
            running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
        } else {
            stats->mean[c] = running_mean[c];
            stats->inv_std[c] = T(1) / std::sqrt(running_var[c] + eps);
        }
    }
    Tensor<T> out(xs);
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
            const T g = gamma.value()[c];
            const T b = beta.value()[c];
            const T* src = x.value().plane(n, c);
            T* dst = out.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) dst[i] = g * (src[i] - stats->mean[c]) * stats->inv_std[c] + b;
        }
    }
    return Var<T>::make(std::move(out), {x, gamma, beta}, [=](Node<T>& node) {
        const auto& xv = node.parents[0]->value;
        const auto& gv = node.parents[1]->value;
        auto* gx = detail::parent_grad(node, 0);
        auto* gg = detail::parent_grad(node, 1);
        auto* gb = detail::parent_grad(node, 2);
        for (int c = 0; c < xs.c; ++c) {
            const T mu = stats->mean[c];
            const T is = stats->inv_std[c];
            if (training) {
                std::vector<const T*> xp, up;
                std::vector<T*> gp;
                for (int n = 0; n < xs.n; ++n) {
                    xp.push_back(xv.plane(n, c));
                    up.push_back(node.grad.plane(n, c));
                    gp.push_back(gx ? gx->plane(n, c) : nullptr);
                }
                T dg = 0, db = 0;
                detail::norm_backward_group<T>(mu, is, gv[c], plane, xp, up, gp, dg, db);
                if (gg) (*gg)[c] += dg;
                if (gb) (*gb)[c] += db;
            } else {
                T dg = 0, db = 0;
                for (int n = 0; n < xs.n; ++n) {
                    const T* xsrc = xv.plane(n, c);
                    const T* u = node.grad.plane(n, c);
                    for (std::size_t i = 0; i < plane; ++i) {
                        dg += u[i] * (xsrc[i] - mu) * is;
                        db += u[i];
                        if (gx) gx->plane(n, c)[i] += u[i] * gv[c] * is;
                    }
                }
                if (gg) (*gg)[c] += dg;
                if (gb) (*gb)[c] += db;
            }
        }
    });
}

/// Per-sample, per-channel normalization with a learned affine.
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const Shape xs = x.shape();
    detail::check_affine(xs, gamma, beta, "instance_norm");
    const std::size_t plane = xs.plane();
    auto stats = std::make_shared<detail::NormStats<T>>();
    stats->mean.resize(static_cast<std::size_t>(xs.n) * xs.c);
    stats->inv_std.resize(stats->mean.size());
    Tensor<T> out(xs);
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
            const T* p = x.value().plane(n, c);
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += p[i];
            const double mu = s / static_cast<double>(plane);
            double v = 0.0;
            for (std::size_t i = 0; i < plane; ++i) v += (p[i] - mu) * (p[i] - mu);
            const std::size_t k = static_cast<std::size_t>(n) * xs.c + c;
            stats->mean[k] = static_cast<T>(mu);
            stats->inv_std[k] = static_cast<T>(1.0 / std::sqrt(v / static_cast<double>(plane) + eps));
            T* dst = out.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) {
                dst[i] = gamma.value()[c] * (p[i] - stats->mean[k]) * stats->inv_std[k] + beta.value()[c];
            }
        }
    }
    return Var<T>::make(std::move(out), {x, gamma, beta}, [=](Node<T>& node) {
        const auto& xv = node.parents[0]->value;
        const auto& gv = node.parents[1]->value;
        auto* gx = detail::parent_grad(node, 0);
        auto* gg = detail::parent_grad(node, 1);
        auto* gb = detail::parent_grad(node, 2);
        for (int n = 0; n < xs.n; ++n) {
            for (int c = 0; c < xs.c; ++c) {
                const std::size_t k = static_cast<std::size_t>(n) * xs.c + c;
                T dg = 0, db = 0;
                detail::norm_backward_group<T>(stats->mean[k], stats->inv_std[k], gv[c], plane, {xv.plane(n, c)},
                                               {node.grad.plane(n, c)}, {gx ? gx->plane(n, c) : nullptr}, dg, db);
                if (gg) (*gg)[c] += dg;
                if (gb) (*gb)[c] += db;
            }
        }
    });
}

}  // namespace moregan::ops
