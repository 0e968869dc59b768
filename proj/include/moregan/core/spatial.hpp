#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "moregan/core/matrix.hpp"

namespace moregan::ops {

/// Nearest-neighbour upsampling by an integer factor.
template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int factor) {
    const Shape s = x.shape();
    const Shape os{s.n, s.c, s.h * factor, s.w * factor};
    Tensor<T> out(os);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const T* src = x.value().plane(n, c);
            T* dst = out.plane(n, c);
            for (int y = 0; y < os.h; ++y) {
                for (int xx = 0; xx < os.w; ++xx) dst[y * os.w + xx] = src[(y / factor) * s.w + xx / factor];
            }
        }
    }
    return Var<T>::make(std::move(out), {x}, [s, os, factor](Node<T>& node) {
        if (auto* g = detail::parent_grad(node, 0)) {
            for (int n = 0; n < s.n; ++n) {
                for (int c = 0; c < s.c; ++c) {
                    const T* up = node.grad.plane(n, c);
                    T* dst = g->plane(n, c);
                    for (int y = 0; y < os.h; ++y) {
                        for (int xx = 0; xx < os.w; ++xx) dst[(y / factor) * s.w + xx / factor] += up[y * os.w + xx];
                    }
                }
            }
        }
    });
}

namespace detail {
/// Half-pixel-centred linear interpolation taps along one axis.
struct LerpTap {
    int i0;
    int i1;
    double t;
};

inline std::vector<LerpTap> lerp_taps(int in, int out) {
    std::vector<LerpTap> taps(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        taps[o] = {i0, i1, src - i0};
    }
    return taps;
}
}  // namespace detail

/// Bilinear resize to (out_h, out_w) with half-pixel centres.
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w) {
    const Shape s = x.shape();
    auto ty = std::make_shared<std::vector<detail::LerpTap>>(detail::lerp_taps(s.h, out_h));
    auto tx = std::make_shared<std::vector<detail::LerpTap>>(detail::lerp_taps(s.w, out_w));
    Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const T* src = x.value().plane(n, c);
            T* dst = out.plane(n, c);
            for (int y = 0; y < out_h; ++y) {
                const auto& a = (*ty)[y];
                for (int xx = 0; xx < out_w; ++xx) {
                    const auto& b = (*tx)[xx];
                    const double top = src[a.i0 * s.w + b.i0] * (1 - b.t) + src[a.i0 * s.w + b.i1] * b.t;
                    const double bot = src[a.i1 * s.w + b.i0] * (1 - b.t) + src[a.i1 * s.w + b.i1] * b.t;
                    dst[y * out_w + xx] = static_cast<T>(top * (1 - a.t) + bot * a.t);
                }
            }
        }
    }
    return Var<T>::make(std::move(out), {x}, [s, out_h, out_w, ty, tx](Node<T>& node) {
        if (auto* g = detail::parent_grad(node, 0)) {
            for (int n = 0; n < s.n; ++n) {
                for (int c = 0; c < s.c; ++c) {
                    const T* up = node.grad.plane(n, c);
                    T* dst = g->plane(n, c);
                    for (int y = 0; y < out_h; ++y) {
                        const auto& a = (*ty)[y];
                        for (int xx = 0; xx < out_w; ++xx) {
                            const auto& b = (*tx)[xx];
                            const T u = up[y * out_w + xx];
                            dst[a.i0 * s.w + b.i0] += static_cast<T>(u * (1 - a.t) * (1 - b.t));
                            dst[a.i0 * s.w + b.i1] += static_cast<T>(u * (1 - a.t) * b.t);
                            dst[a.i1 * s.w + b.i0] += static_cast<T>(u * a.t * (1 - b.t));
                            dst[a.i1 * s.w + b.i1] += static_cast<T>(u * a.t * b.t);
                        }
                    }
                }
            }
        }
    });
}

/// Picks every `stride`-th pixel starting at the origin.
template <typename T>
Var<T> strided_sample(const Var<T>& x, int stride) {
    const Shape s = x.shape();
    if (s.h % stride != 0 || s.w % stride != 0) {
        throw InvalidArgument("strided_sample: " + s.str() + " not divisible by " + std::to_string(stride));
    }
    const Shape os{s.n, s.c, s.h / stride, s.w / stride};
    Tensor<T> out(os);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < os.h; ++y) {
                for (int xx = 0; xx < os.w; ++xx) out.at(n, c, y, xx) = x.value().at(n, c, y * stride, xx * stride);
            }
        }
    }
    return Var<T>::make(std::move(out), {x}, [os, stride](Node<T>& node) {
        if (auto* g = detail::parent_grad(node, 0)) {
            for (int n = 0; n < os.n; ++n) {
                for (int c = 0; c < os.c; ++c) {
                    for (int y = 0; y < os.h; ++y) {
                        for (int xx = 0; xx < os.w; ++xx) g->at(n, c, y * stride, xx * stride) += node.grad.at(n, c, y, xx);
                    }
                }
            }
        }
    });
}

/// 2x2 max pooling, stride 2 (odd trailing rows/columns are dropped).
template <typename T>
Var<T> max_pool2(const Var<T>& x) {
    const Shape s = x.shape();
    if (s.h < 2 || s.w < 2) throw InvalidArgument("max_pool2: input too small " + s.str());
    const Shape os{s.n, s.c, s.h / 2, s.w / 2};
    Tensor<T> out(os);
    auto argmax = std::make_shared<std::vector<std::size_t>>(os.numel());
    std::size_t k = 0;
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < os.h; ++y) {
                for (int xx = 0; xx < os.w; ++xx, ++k) {
                    std::size_t best = x.value().offset(n, c, 2 * y, 2 * xx);
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t o = x.value().offset(n, c, 2 * y + dy, 2 * xx + dx);
                            if (x.value()[o] > x.value()[best]) best = o;
                        }
                    }
                    (*argmax)[k] = best;
                    out[k] = x.value()[best];
                }
            }
        }
    }
    return Var<T>::make(std::move(out), {x}, [argmax](Node<T>& node) {
        if (auto* g = detail::parent_grad(node, 0)) {
            for (std::size_t i = 0; i < argmax->size(); ++i) (*g)[(*argmax)[i]] += node.grad[i];
        }
    });
}

/// Pixel range of bin `i` out of `bins` along an axis of length `extent`.
inline std::pair<int, int> pyramid_bin_range(int i, int bins, int extent) {
    const int start = (i * extent) / bins;
    const int end = ((i + 1) * extent + bins - 1) / bins;
    return {start, end};
}

/// Attention-weighted pyramid pooling. x [N,C,H,W], logits [N,1,H,W] -> [N,1,L,C]
/// with L = sum(b^2); within each bin the weights are a softmax of the logits.
template <typename T>
Var<T> pyramid_pool(const Var<T>& x, const Var<T>& logits, const std::vector<int>& bins) {
    const Shape s = x.shape();
    const Shape ls = logits.shape();
    if (ls.n != s.n || ls.c != 1 || ls.h != s.h || ls.w != s.w) {
        throw InvalidArgument("pyramid_pool: logits " + ls.str() + " vs features " + s.str());
    }
    int total = 0;
    for (int b : bins) {
        if (b <= 0 || b > s.h || b > s.w) {
            throw InvalidArgument("pyramid_pool: bin size " + std::to_string(b) + " leaves empty bins on " + s.str());
        }
        total += b * b;
    }
    if (total == 0) throw InvalidArgument("pyramid_pool: no bins");

    struct Cell {
        std::vector<int> pixels;
    };
    auto cells = std::make_shared<std::vector<Cell>>();
    cells->reserve(total);
    for (int b : bins) {
        for (int i = 0; i < b; ++i) {
            const auto [y0, y1] = pyramid_bin_range(i, b, s.h);
            for (int j = 0; j < b; ++j) {
                const auto [x0, x1] = pyramid_bin_range(j, b, s.w);
                Cell cell;
                for (int y = y0; y < y1; ++y) {
                    for (int xx = x0; xx < x1; ++xx) cell.pixels.push_back(y * s.w + xx);
                }
                cells->push_back(std::move(cell));
            }
        }
    }

    // weights[n][cell][k]
    auto weights = std::make_shared<std::vector<std::vector<T>>>(static_cast<std::size_t>(s.n) * total);
    Tensor<T> out(Shape{s.n, 1, total, s.c});
    for (int n = 0; n < s.n; ++n) {
        const T* lg = logits.value().plane(n, 0);
        for (int l = 0; l < total; ++l) {
            const auto& px = (*cells)[l].pixels;
            auto& wv = (*weights)[static_cast<std::size_t>(n) * total + l];
            wv.resize(px.size());
            T m = lg[px[0]];
            for (int p : px) m = std::max(m, lg[p]);
            T sum = 0;
            for (std::size_t k = 0; k < px.size(); ++k) {
                wv[k] = std::exp(lg[px[k]] - m);
                sum += wv[k];
            }
            for (auto& v : wv) v /= sum;
            T* row = out.plane(n, 0) + static_cast<std::size_t>(l) * s.c;
            for (int c = 0; c < s.c; ++c) {
                const T* xp = x.value().plane(n, c);
                T acc = 0;
                for (std::size_t k = 0; k < px.size(); ++k) acc += wv[k] * xp[px[k]];
                row[c] = acc;
            }
        }
    }
    return Var<T>::make(std::move(out), {x, logits}, [s, total, cells, weights](Node<T>& node) {
        const auto& xv = node.parents[0]->value;
        auto* gx = detail::parent_grad(node, 0);
        auto* gl = detail::parent_grad(node, 1);
        for (int n = 0; n < s.n; ++n) {
            for (int l = 0; l < total; ++l) {
                const auto& px = (*cells)[l].pixels;
                const auto& wv = (*weights)[static_cast<std::size_t>(n) * total + l];
                const T* up = node.grad.plane(n, 0) + static_cast<std::size_t>(l) * s.c;
                const T* pooled = node.value.plane(n, 0) + static_cast<std::size_t>(l) * s.c;
                if (gx) {
                    for (int c = 0; c < s.c; ++c) {
                        T* dst = gx->plane(n, c);
                        for (std::size_t k = 0; k < px.size(); ++k) dst[px[k]] += wv[k] * up[c];
                    }
                }
                if (gl) {
                    T base = 0;
                    for (int c = 0; c < s.c; ++c) base += up[c] * pooled[c];
                    T* dst = gl->plane(n, 0);
                    for (std::size_t k = 0; k < px.size(); ++k) {
                        T dotp = 0;
                        for (int c = 0; c < s.c; ++c) dotp += up[c] * xv.plane(n, c)[px[k]];
                        dst[px[k]] += wv[k] * (dotp - base);
                    }
                }
            }
        }
    });
}

}  // namespace moregan::ops
