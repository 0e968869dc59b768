#pragma once

#include <cmath>
#include <filesystem>
#include <utility>

#include "moregan/rainsim.hpp"

namespace moregan::rainsim {

/// Procedural street-like scene: sky at the far plane, a ground plane whose
/// depth shrinks toward the bottom edge, and box-shaped buildings standing on
/// the ground. Used when no photographic clean set is available.
inline std::pair<Image, DepthMap> make_scene(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<double> px(Shape{1, 3, h, w});
    Tensor<double> depth(Shape{1, 1, h, w});
    const int horizon = static_cast<int>(h * rng.uniform(0.3, 0.45));
    const double sky_r = rng.uniform(0.08, 0.2), sky_g = rng.uniform(0.25, 0.4), sky_b = rng.uniform(0.6, 0.8);
    const double grd_r = rng.uniform(0.2, 0.35), grd_g = rng.uniform(0.3, 0.45), grd_b = rng.uniform(0.03, 0.12);
    const double stripe = rng.uniform(0.15, 0.35);

    auto ground_depth = [&](int y) {
        const double t = static_cast<double>(h - y) / std::max(1, h - horizon);
        return 0.08 + 0.87 * std::pow(std::clamp(t, 0.0, 1.0), 1.5);
    };

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (y < horizon) {
                const double t = static_cast<double>(y) / std::max(1, horizon);
                px.at(0, 0, y, x) = sky_r + 0.1 * t;
                px.at(0, 1, y, x) = sky_g + 0.15 * t;
                px.at(0, 2, y, x) = sky_b - 0.05 * t;
                depth.at(0, 0, y, x) = 1.0;
            } else {
                const double d = ground_depth(y);
                const double tex = 0.5 + 0.5 * std::sin(x * stripe + 3.0 / d);
                px.at(0, 0, y, x) = grd_r + 0.08 * tex;
                px.at(0, 1, y, x) = grd_g + 0.06 * tex;
                px.at(0, 2, y, x) = grd_b;
                depth.at(0, 0, y, x) = d;
            }
        }
    }

    const int buildings = rng.uniform_int(3, 6);
    for (int b = 0; b < buildings; ++b) {
        const int base = rng.uniform_int(horizon + 1, std::max(horizon + 1, h - h / 6));
        const int height = rng.uniform_int(h / 6, std::max(h / 6, base - h / 8));
        const int bw = rng.uniform_int(w / 10, w / 4);
        const int x0 = rng.uniform_int(0, std::max(0, w - bw));
        const double d = ground_depth(base);
        // saturated facade: one channel kept dark
        double col[3] = {rng.uniform(0.35, 0.85), rng.uniform(0.35, 0.85), rng.uniform(0.35, 0.85)};
        col[rng.uniform_int(0, 2)] = rng.uniform(0.0, 0.08);
        const int win = std::max(3, bw / 5);
        for (int y = std::max(0, base - height); y < base; ++y) {
            for (int x = x0; x < std::min(w, x0 + bw); ++x) {
                const bool window = ((y - base) % win + win) % win < win / 2 && ((x - x0) % win) < win / 2 &&
                                    x > x0 + 1 && x < x0 + bw - 2;
                for (int c = 0; c < 3; ++c) px.at(0, c, y, x) = window ? 0.6 * col[c] + 0.25 : col[c];
                depth.at(0, 0, y, x) = d;
            }
        }
    }
    for (auto& v : px.values()) v = std::clamp(v, 0.0, 1.0);
    return {Image(std::move(px)), DepthMap(std::move(depth))};
}

/// Writes `<out>/clean/NNNNN.png` and `<out>/depth/NNNNN.png` for n scenes.
inline void write_scenes(const std::filesystem::path& out, int n, int h, int w, std::uint64_t seed) {
    std::filesystem::create_directories(out / "clean");
    std::filesystem::create_directories(out / "depth");
    for (int i = 0; i < n; ++i) {
        auto [img, d] = make_scene(h, w, mix_seed(seed, static_cast<std::uint64_t>(i)));
        const std::string stem = sample_stem(i) + ".png";
        io::write_rgb((out / "clean" / stem).string(), img.pixels);
        io::write_depth((out / "depth" / stem).string(), d.depth);
    }
}

}  // namespace moregan::rainsim
