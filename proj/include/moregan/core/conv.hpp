#pragma once

#include <Eigen/Core>
#include <memory>
#include <optional>

#include "moregan/core/ops.hpp"

namespace moregan {

/// Stride, dilation and (possibly asymmetric) zero padding of a 2-D convolution.
struct ConvSpec {
    int stride = 1;
    int dilation = 1;
    int pad_top = 0;
    int pad_left = 0;
    int pad_bottom = 0;
    int pad_right = 0;

    /// Size-preserving padding at stride 1; even kernels put the extra row/column at the end.
    static ConvSpec same(int kernel, int dilation = 1) {
        const int total = dilation * (kernel - 1);
        ConvSpec s;
        s.dilation = dilation;
        s.pad_top = s.pad_left = total / 2;
        s.pad_bottom = s.pad_right = total - total / 2;
        return s;
    }
    static ConvSpec strided(int stride, int pad) {
        ConvSpec s;
        s.stride = stride;
        s.pad_top = s.pad_left = s.pad_bottom = s.pad_right = pad;
        return s;
    }

    int out_extent(int in, int kernel, int pad_a, int pad_b) const {
        const int span = dilation * (kernel - 1) + 1;
        const int padded = in + pad_a + pad_b;
        if (padded < span) return 0;
        return (padded - span) / stride + 1;
    }
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void im2col(const T* img, int channels, int h, int w, int kh, int kw, const ConvSpec& s, int ho, int wo, T* cols) {
    for (int c = 0; c < channels; ++c) {
        const T* plane = img + static_cast<std::size_t>(c) * h * w;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                T* row = cols + (static_cast<std::size_t>((c * kh + ki) * kw + kj)) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s.stride - s.pad_top + ki * s.dilation;
                    T* dst = row + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill_n(dst, wo, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s.stride - s.pad_left + kj * s.dilation;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* cols, int channels, int h, int w, int kh, int kw, const ConvSpec& s, int ho, int wo, T* img) {
    for (int c = 0; c < channels; ++c) {
        T* plane = img + static_cast<std::size_t>(c) * h * w;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const T* row = cols + (static_cast<std::size_t>((c * kh + ki) * kw + kj)) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s.stride - s.pad_top + ki * s.dilation;
                    if (iy < 0 || iy >= h) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * wo;
                    T* dst = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s.stride - s.pad_left + kj * s.dilation;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

namespace ops {

/// 2-D cross-correlation. x [N,Cin,H,W], weight [Cout,Cin,kh,kw], bias [1,Cout,1,1] (optional).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias, const ConvSpec& spec) {
    using Mat = moregan::detail::RowMat<T>;
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (ws.c != xs.c) {
        throw InvalidArgument("conv2d: input channels " + std::to_string(xs.c) + " vs weight " + ws.str());
    }
    if (bias && (bias->shape().c != ws.n || bias->value().size() != static_cast<std::size_t>(ws.n))) {
        throw InvalidArgument("conv2d: bias " + bias->shape().str() + " vs weight " + ws.str());
    }
    const int kh = ws.h;
    const int kw = ws.w;
    const int ho = spec.out_extent(xs.h, kh, spec.pad_top, spec.pad_bottom);
    const int wo = spec.out_extent(xs.w, kw, spec.pad_left, spec.pad_right);
    if (ho <= 0 || wo <= 0) throw InvalidArgument("conv2d: kernel larger than padded input " + xs.str());

    const int K = xs.c * kh * kw;
    const int P = ho * wo;
    const bool pointwise = kh == 1 && kw == 1 && spec.stride == 1 && spec.pad_top == 0 && spec.pad_left == 0 &&
                           spec.pad_bottom == 0 && spec.pad_right == 0;

    Tensor<T> out(Shape{xs.n, ws.n, ho, wo});
    Eigen::Map<const Mat> wm(weight.value().data(), ws.n, K);
    const bool keep_cols = grad_enabled() && weight.requires_grad() && !pointwise;
    auto saved = std::make_shared<AlignedVector<T>>();
    AlignedVector<T> scratch;
    if (!pointwise) {
        if (keep_cols) {
            saved->resize(static_cast<std::size_t>(xs.n) * K * P);
        } else {
            scratch.resize(static_cast<std::size_t>(K) * P);
        }
    }
    for (int n = 0; n < xs.n; ++n) {
        const T* cols_ptr = nullptr;
        if (pointwise) {
            cols_ptr = x.value().plane(n, 0);
        } else {
            T* dst = keep_cols ? saved->data() + static_cast<std::size_t>(n) * K * P : scratch.data();
            moregan::detail::im2col(x.value().plane(n, 0), xs.c, xs.h, xs.w, kh, kw, spec, ho, wo, dst);
            cols_ptr = dst;
        }
        Eigen::Map<const Mat> cols(cols_ptr, K, P);
        Eigen::Map<Mat> o(out.plane(n, 0), ws.n, P);
        o.noalias() = wm * cols;
        if (bias) {
            const T* b = bias->value().data();
            for (int co = 0; co < ws.n; ++co) o.row(co).array() += b[co];
        }
    }

    std::vector<Var<T>> parents{x, weight};
    if (bias) parents.push_back(*bias);
    return Var<T>::make(std::move(out), std::move(parents), [=](Node<T>& node) {
        const auto& xv = node.parents[0]->value;
        const auto& wv = node.parents[1]->value;
        auto* gx = ops::detail::parent_grad(node, 0);
        auto* gw = ops::detail::parent_grad(node, 1);
        Tensor<T>* gb = node.parents.size() > 2 ? ops::detail::parent_grad(node, 2) : nullptr;
        Eigen::Map<const Mat> wmat(wv.data(), ws.n, K);
        AlignedVector<T> cols_buf;
        AlignedVector<T> dcols(pointwise ? 0 : static_cast<std::size_t>(K) * P);
        for (int n = 0; n < xs.n; ++n) {
            Eigen::Map<const Mat> up(node.grad.plane(n, 0), ws.n, P);
            if (gw) {
                const T* cols_ptr = nullptr;
                if (pointwise) {
                    cols_ptr = xv.plane(n, 0);
                } else if (!saved->empty()) {
                    cols_ptr = saved->data() + static_cast<std::size_t>(n) * K * P;
                } else {
                    cols_buf.resize(static_cast<std::size_t>(K) * P);
                    moregan::detail::im2col(xv.plane(n, 0), xs.c, xs.h, xs.w, kh, kw, spec, ho, wo, cols_buf.data());
                    cols_ptr = cols_buf.data();
                }
                Eigen::Map<const Mat> cols(cols_ptr, K, P);
                Eigen::Map<Mat> gwm(gw->data(), ws.n, K);
                gwm.noalias() += up * cols.transpose();
            }
            if (gb) {
                for (int co = 0; co < ws.n; ++co) (*gb)[co] += up.row(co).sum();
            }
            if (gx) {
                if (pointwise) {
                    Eigen::Map<Mat> gxm(gx->plane(n, 0), K, P);
                    gxm.noalias() += wmat.transpose() * up;
                } else {
                    Eigen::Map<Mat> dc(dcols.data(), K, P);
                    dc.noalias() = wmat.transpose() * up;
                    moregan::detail::col2im(dcols.data(), xs.c, xs.h, xs.w, kh, kw, spec, ho, wo, gx->plane(n, 0));
                }
            }
        }
    });
}

}  // namespace ops
}  // namespace moregan
