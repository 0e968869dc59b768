#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "moregan/pdnl.hpp"

namespace moregan::testing {

/// Brute-force reference for the pyramid block when every downsampled position
/// is its own key and the depth relation is all ones:
///   F_ds = entry(F) by direct convolution, R_f = softmax(theta . phi),
///   fused = softmax(R_f), out = upsample(fused . g) + F.
inline Tensor<double> dense_block_reference(const Tensor<double>& f, const pdnl::PdnlParams<double>& p) {
    const int c = f.c(), h = f.h(), w = f.w();
    const auto& we = p.entry.weight.value();
    const auto& be = p.entry.bias->value();
    const int k = we.h();
    const int hd = h / k, wd = w / k, t = hd * wd;
    std::vector<std::vector<double>> ds(t, std::vector<double>(c, 0.0));
    for (int y = 0; y < hd; ++y) {
        for (int x = 0; x < wd; ++x) {
            for (int o = 0; o < c; ++o) {
                double acc = be[o];
                for (int i = 0; i < c; ++i) {
                    for (int a = 0; a < k; ++a) {
                        for (int b = 0; b < k; ++b) acc += we.at(o, i, a, b) * f.at(0, i, y * k + a, x * k + b);
                    }
                }
                ds[y * wd + x][o] = acc;
            }
        }
    }
    auto linear = [&](const std::vector<double>& row, const Var<double>& wm, const Var<double>& bv) {
        std::vector<double> out(c);
        for (int o = 0; o < c; ++o) {
            double acc = bv.value()[o];
            for (int i = 0; i < c; ++i) acc += row[i] * wm.value().at(0, 0, i, o);
            out[o] = acc;
        }
        return out;
    };
    auto softmax = [](std::vector<double> v) {
        const double m = *std::max_element(v.begin(), v.end());
        double s = 0.0;
        for (auto& x : v) s += (x = std::exp(x - m));
        for (auto& x : v) x /= s;
        return v;
    };
    std::vector<std::vector<double>> theta, phi, g;
    for (const auto& r : ds) {
        theta.push_back(linear(r, p.w_theta, p.b_theta));
        phi.push_back(linear(r, p.w_phi, p.b_phi));
        g.push_back(linear(r, p.w_g, p.b_g));
    }
    Tensor<double> out = f;
    for (int i = 0; i < t; ++i) {
        std::vector<double> logits(t);
        for (int j = 0; j < t; ++j) logits[j] = std::inner_product(theta[i].begin(), theta[i].end(), phi[j].begin(), 0.0);
        const auto fused = softmax(softmax(logits));
        std::vector<double> ctx(c, 0.0);
        for (int j = 0; j < t; ++j) {
            for (int o = 0; o < c; ++o) ctx[o] += fused[j] * g[j][o];
        }
        // nearest upsample back to full resolution
        const int y = i / wd, x = i % wd;
        for (int o = 0; o < c; ++o) {
            for (int a = 0; a < k; ++a) {
                for (int b = 0; b < k; ++b) out.at(0, o, y * k + a, x * k + b) += ctx[o];
            }
        }
    }
    return out;
}

}  // namespace moregan::testing
