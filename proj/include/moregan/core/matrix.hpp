#pragma once

#include <Eigen/Core>
#include <cmath>

#include "moregan/core/conv.hpp"

namespace moregan::ops {

/// [N,C,H,W] -> [N,1,H*W,C] (one row per pixel).
template <typename T>
Var<T> to_tokens(const Var<T>& x) {
    const Shape s = x.shape();
    const int p = s.h * s.w;
    Tensor<T> out(Shape{s.n, 1, p, s.c});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const T* src = x.value().plane(n, c);
            T* dst = out.plane(n, 0);
            for (int i = 0; i < p; ++i) dst[static_cast<std::size_t>(i) * s.c + c] = src[i];
        }
    }
    return Var<T>::make(std::move(out), {x}, [s, p](Node<T>& node) {
        if (auto* g = detail::parent_grad(node, 0)) {
            for (int n = 0; n < s.n; ++n) {
                const T* up = node.grad.plane(n, 0);
                for (int c = 0; c < s.c; ++c) {
                    T* dst = g->plane(n, c);
                    for (int i = 0; i < p; ++i) dst[i] += up[static_cast<std::size_t>(i) * s.c + c];
                }
            }
        }
    });
}

/// [N,1,H*W,C] -> [N,C,H,W]
template <typename T>
Var<T> from_tokens(const Var<T>& t, int h, int w) {
    const Shape ts = t.shape();
    if (ts.c != 1 || ts.h != h * w) throw InvalidArgument("from_tokens: " + ts.str() + " is not " + std::to_string(h * w) + " tokens");
    const int channels = ts.w;
    const int p = h * w;
    Tensor<T> out(Shape{ts.n, channels, h, w});
    for (int n = 0; n < ts.n; ++n) {
        const T* src = t.value().plane(n, 0);
        for (int c = 0; c < channels; ++c) {
            T* dst = out.plane(n, c);
            for (int i = 0; i < p; ++i) dst[i] = src[static_cast<std::size_t>(i) * channels + c];
        }
    }
    return Var<T>::make(std::move(out), {t}, [ts, channels, p](Node<T>& node) {
        if (auto* g = detail::parent_grad(node, 0)) {
            for (int n = 0; n < ts.n; ++n) {
                T* dst = g->plane(n, 0);
                for (int c = 0; c < channels; ++c) {
                    const T* up = node.grad.plane(n, c);
                    for (int i = 0; i < p; ++i) dst[static_cast<std::size_t>(i) * channels + c] += up[i];
                }
            }
        }
    });
}

/// Batched a·b (or a·bᵀ). a is [N,1,r,k]; b is [N or 1,1,k,c] ([.,1,c,k] when transposed).
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_b = false) {
    using Mat = moregan::detail::RowMat<T>;
    const Shape as = a.shape();
    const Shape bs = b.shape();
    if (as.c != 1 || bs.c != 1 || (bs.n != 1 && bs.n != as.n)) {
        throw InvalidArgument("matmul: batch layout " + as.str() + " x " + bs.str());
    }
    const int r = as.h;
    const int k = as.w;
    const int kb = transpose_b ? bs.w : bs.h;
    const int c = transpose_b ? bs.h : bs.w;
    if (kb != k) throw InvalidArgument("matmul: inner dimension mismatch " + as.str() + " x " + bs.str());
    const bool shared_b = bs.n == 1 && as.n > 1;
    Tensor<T> out(Shape{as.n, 1, r, c});
    for (int n = 0; n < as.n; ++n) {
        Eigen::Map<const Mat> am(a.value().plane(n, 0), r, k);
        Eigen::Map<Mat> om(out.plane(n, 0), r, c);
        const T* bp = b.value().plane(shared_b ? 0 : n, 0);
        if (transpose_b) {
            Eigen::Map<const Mat> bm(bp, c, k);
            om.noalias() = am * bm.transpose();
        } else {
            Eigen::Map<const Mat> bm(bp, k, c);
            om.noalias() = am * bm;
        }
    }
    return Var<T>::make(std::move(out), {a, b}, [=](Node<T>& node) {
        const auto& av = node.parents[0]->value;
        const auto& bv = node.parents[1]->value;
        auto* ga = detail::parent_grad(node, 0);
        auto* gb = detail::parent_grad(node, 1);
        for (int n = 0; n < as.n; ++n) {
            Eigen::Map<const Mat> up(node.grad.plane(n, 0), r, c);
            Eigen::Map<const Mat> am(av.plane(n, 0), r, k);
            const int bn = shared_b ? 0 : n;
            if (transpose_b) {
                Eigen::Map<const Mat> bm(bv.plane(bn, 0), c, k);
                if (ga) Eigen::Map<Mat>(ga->plane(n, 0), r, k).noalias() += up * bm;
                if (gb) Eigen::Map<Mat>(gb->plane(bn, 0), c, k).noalias() += up.transpose() * am;
            } else {
                Eigen::Map<const Mat> bm(bv.plane(bn, 0), k, c);
                if (ga) Eigen::Map<Mat>(ga->plane(n, 0), r, k).noalias() += up * bm.transpose();
                if (gb) Eigen::Map<Mat>(gb->plane(bn, 0), k, c).noalias() += am.transpose() * up;
            }
        }
    });
}

/// Adds a [1,1,1,c] row vector to every row of a [N,1,r,c] matrix.
template <typename T>
Var<T> add_row_bias(const Var<T>& a, const Var<T>& bias) {
    const Shape as = a.shape();
    if (bias.value().size() != static_cast<std::size_t>(as.w)) throw InvalidArgument("add_row_bias: width mismatch");
    Tensor<T> out = a.value();
    const std::size_t rows = static_cast<std::size_t>(as.n) * as.h;
    for (std::size_t i = 0; i < rows; ++i) {
        for (int j = 0; j < as.w; ++j) out[i * as.w + j] += bias.value()[j];
    }
    return Var<T>::make(std::move(out), {a, bias}, [rows, as](Node<T>& node) {
        if (auto* g = detail::parent_grad(node, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += node.grad[i];
        }
        if (auto* g = detail::parent_grad(node, 1)) {
            for (std::size_t i = 0; i < rows; ++i) {
                for (int j = 0; j < as.w; ++j) (*g)[j] += node.grad[i * as.w + j];
            }
        }
    });
}

/// Softmax along the last axis of [N,C,r,c].
template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
    const Shape s = a.shape();
    const std::size_t rows = static_cast<std::size_t>(s.n) * s.c * s.h;
    const int cols = s.w;
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < rows; ++i) {
        T* row = out.data() + i * cols;
        T m = row[0];
        for (int j = 1; j < cols; ++j) m = std::max(m, row[j]);
        T sum = 0;
        for (int j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - m);
            sum += row[j];
        }
        for (int j = 0; j < cols; ++j) row[j] /= sum;
    }
    return Var<T>::make(std::move(out), {a}, [rows, cols](Node<T>& node) {
        if (auto* g = detail::parent_grad(node, 0)) {
            for (std::size_t i = 0; i < rows; ++i) {
                const T* y = node.value.data() + i * cols;
                const T* up = node.grad.data() + i * cols;
                T dot = 0;
                for (int j = 0; j < cols; ++j) dot += y[j] * up[j];
                T* dst = g->data() + i * cols;
                for (int j = 0; j < cols; ++j) dst[j] += y[j] * (up[j] - dot);
            }
        }
    });
}

}  // namespace moregan::ops
