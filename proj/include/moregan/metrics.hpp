#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "moregan/core/tensor.hpp"

namespace moregan::metrics {

struct Psnr {
    double db = 0.0;
    /// Set when the images are identical; `db` is then +infinity.
    bool identical = false;
};

/// 10 log10(1 / MSE) over every pixel and channel, for images in [0,1].
template <typename T>
Psnr psnr(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        se += d * d;
    }
    if (se == 0.0) return {std::numeric_limits<double>::infinity(), true};
    return {10.0 * std::log10(static_cast<double>(a.size()) / se), false};
}

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    /// Compare Rec.601 luma instead of averaging the RGB channels.
    bool luminance_only = false;
};

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> g(size);
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double x = i - (size - 1) / 2.0;
        g[i] = std::exp(-x * x / (2.0 * sigma * sigma));
        sum += g[i];
    }
    for (auto& v : g) v /= sum;
    return g;
}

/// Separable Gaussian filter over fully-contained windows: h x w -> (h-k+1) x (w-k+1).
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& g) {
    const int k = static_cast<int>(g.size());
    const int ho = h - k + 1;
    const int wo = w - k + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * wo);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < wo; ++x) {
            double s = 0.0;
            for (int i = 0; i < k; ++i) s += g[i] * img[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * wo + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(ho) * wo);
    for (int y = 0; y < ho; ++y) {
        for (int x = 0; x < wo; ++x) {
            double s = 0.0;
            for (int i = 0; i < k; ++i) s += g[i] * tmp[static_cast<std::size_t>(y + i) * wo + x];
            out[static_cast<std::size_t>(y) * wo + x] = s;
        }
    }
    return out;
}

inline double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                         const SsimOptions& opt) {
    const auto g = gaussian_window(opt.window, opt.sigma);
    std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter_valid(a, h, w, g);
    const auto mu_b = filter_valid(b, h, w, g);
    const auto e_aa = filter_valid(aa, h, w, g);
    const auto e_bb = filter_valid(bb, h, w, g);
    const auto e_ab = filter_valid(ab, h, w, g);
    const double c1 = (opt.k1) * (opt.k1);
    const double c2 = (opt.k2) * (opt.k2);
    double sum = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = e_aa[i] - mu_a[i] * mu_a[i];
        const double vb = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        sum += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return sum / static_cast<double>(mu_a.size());
}

}  // namespace detail

/// Mean SSIM with a Gaussian window (dynamic range 1), averaged over channels and images.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& opt = {}) {
    require_same_shape(a.shape(), b.shape(), "ssim");
    const Shape s = a.shape();
    if (s.h < opt.window || s.w < opt.window) {
        throw InvalidArgument("ssim: image " + s.str() + " is smaller than the " + std::to_string(opt.window) +
                              "-pixel window");
    }
    if (opt.luminance_only && s.c != 3) throw InvalidArgument("ssim: luminance mode needs 3 channels");
    const std::size_t plane = s.plane();
    double total = 0.0;
    int count = 0;
    for (int n = 0; n < s.n; ++n) {
        if (opt.luminance_only) {
            std::vector<double> ya(plane), yb(plane);
            for (std::size_t p = 0; p < plane; ++p) {
                ya[p] = 0.299 * a.plane(n, 0)[p] + 0.587 * a.plane(n, 1)[p] + 0.114 * a.plane(n, 2)[p];
                yb[p] = 0.299 * b.plane(n, 0)[p] + 0.587 * b.plane(n, 1)[p] + 0.114 * b.plane(n, 2)[p];
            }
            total += detail::ssim_plane(ya, yb, s.h, s.w, opt);
            ++count;
            continue;
        }
        for (int c = 0; c < s.c; ++c) {
            std::vector<double> pa(a.plane(n, c), a.plane(n, c) + plane);
            std::vector<double> pb(b.plane(n, c), b.plane(n, c) + plane);
            total += detail::ssim_plane(pa, pb, s.h, s.w, opt);
            ++count;
        }
    }
    return total / count;
}

}  // namespace moregan::metrics
