#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "moregan/core/params.hpp"
#include "moregan/imageio.hpp"

namespace moregan::rainsim {

inline constexpr double kDepthFloor = 1e-4;
inline constexpr double kInvertFloor = 1e-3;

using Layer = Tensor<double>;  // [1,1,H,W]

/// RGB image in [0,1], stored [1,3,H,W].
struct Image {
    Tensor<double> pixels;

    Image() = default;
    explicit Image(Tensor<double> px) : pixels(std::move(px)) {
        if (pixels.n() != 1 || pixels.c() != 3) throw InvalidArgument("Image: expected [1,3,H,W], got " + pixels.shape().str());
    }
    int height() const { return pixels.h(); }
    int width() const { return pixels.w(); }

    /// Network-facing dimension contract: at least 16 px and divisible by 8.
    void check_network_dims() const {
        if (height() < 16 || width() < 16 || height() % 8 != 0 || width() % 8 != 0) {
            throw InvalidArgument("Image: " + std::to_string(height()) + "x" + std::to_string(width()) +
                                  " must be >= 16 and divisible by 8");
        }
    }
};

/// Normalized scene depth in (0,1], stored [1,1,H,W], floored at kDepthFloor.
struct DepthMap {
    Tensor<double> depth;

    DepthMap() = default;
    explicit DepthMap(Tensor<double> d) : depth(std::move(d)) {
        if (depth.n() != 1 || depth.c() != 1) throw InvalidArgument("DepthMap: expected [1,1,H,W], got " + depth.shape().str());
        for (auto& v : depth.values()) v = std::max(v, kDepthFloor);
    }
    static DepthMap constant(int h, int w, double value) { return DepthMap(Tensor<double>(Shape{1, 1, h, w}, value)); }
    int height() const { return depth.h(); }
    int width() const { return depth.w(); }
};

/// Parameters of the streak pattern rasterizer.
struct StreakParams {
    int count = 0;
    double angle_deg = 0.0;
    int length_px = 12;
    int width_px = 1;
    double intensity = 0.8;
};

/// One degradation instance.
struct RainRecipe {
    Layer streak_pattern;
    double alpha = 1.0;
    double beta = 0.5;
    double atm_light = 0.8;
    double d1 = 0.1;
    std::uint64_t seed = 0;
    StreakParams streaks;

    void validate() const {
        if (!(alpha > 0.0)) throw InvalidArgument("RainRecipe: alpha must be > 0");
        if (!(beta >= 0.0)) throw InvalidArgument("RainRecipe: beta must be >= 0");
        if (!(d1 > 0.0 && d1 <= 1.0)) throw InvalidArgument("RainRecipe: d1 must lie in (0,1]");
        if (!(atm_light >= 0.0 && atm_light <= 1.0)) throw InvalidArgument("RainRecipe: atm_light must lie in [0,1]");
        for (double v : streak_pattern.values()) {
            if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("RainRecipe: streak pattern outside [0,1]");
        }
    }
};

/// Rasterizes `count` anti-aliased segments at seeded uniform positions, max-composited.
/// The angle is measured from the vertical axis.
inline Layer make_streak_pattern(int h, int w, int count, double angle_deg, int length_px, int width_px,
                                 double intensity, std::uint64_t seed) {
    if (h <= 0 || w <= 0) throw InvalidArgument("make_streak_pattern: empty image");
    if (!(intensity > 0.0 && intensity <= 1.0)) throw InvalidArgument("make_streak_pattern: intensity must lie in (0,1]");
    if (count < 0) throw InvalidArgument("make_streak_pattern: count must be >= 0");
    if (length_px < 1 || length_px > std::max(h, w)) throw InvalidArgument("make_streak_pattern: length exceeds image size");
    if (width_px < 1 || width_px > std::min(h, w)) throw InvalidArgument("make_streak_pattern: width exceeds image size");

    Layer pattern(Shape{1, 1, h, w}, 0.0);
    Rng rng(seed);
    const double theta = angle_deg * M_PI / 180.0;
    const double dx = std::sin(theta);
    const double dy = std::cos(theta);
    const double half_len = 0.5 * (length_px - 1);
    const double half_width = 0.5 * width_px;
    for (int s = 0; s < count; ++s) {
        const double cx = rng.uniform(0.0, w);
        const double cy = rng.uniform(0.0, h);
        const double ax = cx - half_len * dx, ay = cy - half_len * dy;
        const double bx = cx + half_len * dx, by = cy + half_len * dy;
        const double reach = half_width + 1.0;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - reach)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(ax, bx) + reach)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - reach)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(ay, by) + reach)));
        const double seg_len2 = (bx - ax) * (bx - ax) + (by - ay) * (by - ay);
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                // distance from the pixel centre to the segment
                const double px = x + 0.5, py = y + 0.5;
                double t = seg_len2 > 0 ? ((px - ax) * (bx - ax) + (py - ay) * (by - ay)) / seg_len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                const double qx = ax + t * (bx - ax) - px;
                const double qy = ay + t * (by - ay) - py;
                const double dist = std::sqrt(qx * qx + qy * qy);
                const double coverage = std::clamp(half_width + 0.5 - dist, 0.0, 1.0);
                if (coverage <= 0.0) continue;
                double& v = pattern.at(0, 0, y, x);
                v = std::max(v, intensity * coverage);
            }
        }
    }
    return pattern;
}

inline Layer make_streak_pattern(int h, int w, const StreakParams& p, std::uint64_t seed) {
    return make_streak_pattern(h, w, p.count, p.angle_deg, p.length_px, p.width_px, p.intensity, seed);
}

/// S = pattern * exp(-alpha * max(d1, d))
inline Layer streak_layer(const RainRecipe& recipe, const DepthMap& depth) {
    require_same_shape(recipe.streak_pattern.shape(), depth.depth.shape(), "streak_layer");
    Layer s(depth.depth.shape());
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = recipe.streak_pattern[i] * std::exp(-recipe.alpha * std::max(recipe.d1, depth.depth[i]));
    }
    return s;
}

/// A = 1 - exp(-beta * d)
inline Layer haze_layer(double beta, const DepthMap& depth) {
    if (beta < 0.0) throw InvalidArgument("haze_layer: beta must be >= 0");
    Layer a(depth.depth.shape());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::expm1(-beta * depth.depth[i]);
    return a;
}

struct Composite {
    Image rainy;
    /// 1 where any channel was clamped.
    Layer clamped;
    long clamped_pixels = 0;
};

/// I = B(1 - S - A) + S + atm*A, clamped to [0,1]; records clamped pixels.
inline Composite compose_tracked(const Image& clean, const Layer& s, const Layer& a, double atm_light) {
    const Shape& bs = clean.pixels.shape();
    const Shape ls{1, 1, bs.h, bs.w};
    require_same_shape(s.shape(), ls, "compose(streaks)");
    require_same_shape(a.shape(), ls, "compose(haze)");
    Composite out;
    out.rainy = Image(Tensor<double>(bs));
    out.clamped = Layer(ls, 0.0);
    const std::size_t plane = bs.plane();
    for (std::size_t p = 0; p < plane; ++p) {
        bool clamped = false;
        for (int c = 0; c < 3; ++c) {
            const double b = clean.pixels[c * plane + p];
            const double v = b * (1.0 - s[p] - a[p]) + s[p] + atm_light * a[p];
            const double cv = std::clamp(v, 0.0, 1.0);
            clamped = clamped || cv != v;
            out.rainy.pixels[c * plane + p] = cv;
        }
        if (clamped) {
            out.clamped[p] = 1.0;
            ++out.clamped_pixels;
        }
    }
    return out;
}

inline Image compose(const Image& clean, const Layer& s, const Layer& a, double atm_light) {
    return compose_tracked(clean, s, a, atm_light).rainy;
}

/// B = (I - S - atm*A) / (1 - S - A), clamped to [0,1].
inline Image invert(const Image& rainy, const Layer& s, const Layer& a, double atm_light) {
    const Shape& is = rainy.pixels.shape();
    const Shape ls{1, 1, is.h, is.w};
    require_same_shape(s.shape(), ls, "invert(streaks)");
    require_same_shape(a.shape(), ls, "invert(haze)");
    const std::size_t plane = is.plane();
    for (std::size_t p = 0; p < plane; ++p) {
        if (1.0 - s[p] - a[p] < kInvertFloor) {
            const int row = static_cast<int>(p / is.w);
            const int col = static_cast<int>(p % is.w);
            throw DegenerateInput("invert: 1 - S - A below floor at pixel (" + std::to_string(row) + ", " +
                                      std::to_string(col) + ")",
                                  row, col);
        }
    }
    Image out{Tensor<double>(is)};
    for (int c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < plane; ++p) {
            const double i = rainy.pixels[c * plane + p];
            out.pixels[c * plane + p] = std::clamp((i - s[p] - atm_light * a[p]) / (1.0 - s[p] - a[p]), 0.0, 1.0);
        }
    }
    return out;
}

struct SynthSample {
    Image rainy;
    Image clean;
    DepthMap depth;
    Layer streak_layer;
    Layer haze_layer;
    RainRecipe recipe;
    long clamped_pixels = 0;
};

inline SynthSample degrade(const Image& clean, const DepthMap& depth, RainRecipe recipe) {
    require_same_shape(Shape{1, 1, clean.height(), clean.width()}, depth.depth.shape(), "degrade");
    recipe.validate();
    SynthSample s;
    s.clean = clean;
    s.depth = depth;
    s.streak_layer = streak_layer(recipe, depth);
    s.haze_layer = haze_layer(recipe.beta, depth);
    auto comp = compose_tracked(clean, s.streak_layer, s.haze_layer, recipe.atm_light);
    s.rainy = std::move(comp.rainy);
    s.clamped_pixels = comp.clamped_pixels;
    s.recipe = std::move(recipe);
    return s;
}

/// Sampling ranges for random recipes. Defaults are a documented convention.
struct RecipeSpace {
    double alpha_min = 1.0, alpha_max = 2.5;
    double beta_min = 0.3, beta_max = 1.0;
    double atm_min = 0.7, atm_max = 0.9;
    double d1_min = 0.05, d1_max = 0.15;
    int count_min = 40, count_max = 120;
    double angle_min = -20.0, angle_max = 20.0;
    int length_min = 8, length_max = 20;
    int width_min = 1, width_max = 2;
    double intensity_min = 0.6, intensity_max = 1.0;

    RainRecipe sample(int h, int w, std::uint64_t seed) const {
        Rng rng(seed);
        RainRecipe r;
        r.seed = seed;
        r.alpha = rng.uniform(alpha_min, alpha_max);
        r.beta = rng.uniform(beta_min, beta_max);
        r.atm_light = rng.uniform(atm_min, atm_max);
        r.d1 = rng.uniform(d1_min, d1_max);
        r.streaks.count = rng.uniform_int(count_min, count_max);
        r.streaks.angle_deg = rng.uniform(angle_min, angle_max);
        r.streaks.length_px = std::min(rng.uniform_int(length_min, length_max), std::max(h, w));
        r.streaks.width_px = std::min(rng.uniform_int(width_min, width_max), std::min(h, w));
        r.streaks.intensity = rng.uniform(intensity_min, intensity_max);
        r.streak_pattern = make_streak_pattern(h, w, r.streaks, mix_seed(seed, 1));
        return r;
    }
};

inline nlohmann::json recipe_to_json(const RainRecipe& r) {
    return {{"alpha", r.alpha},
            {"beta", r.beta},
            {"atm_light", r.atm_light},
            {"d1", r.d1},
            {"seed", r.seed},
            {"streak_count", r.streaks.count},
            {"streak_angle_deg", r.streaks.angle_deg},
            {"streak_length_px", r.streaks.length_px},
            {"streak_width_px", r.streaks.width_px},
            {"streak_intensity", r.streaks.intensity}};
}

/// Rebuilds a recipe (including its pattern) from its manifest record.
inline RainRecipe recipe_from_json(const nlohmann::json& j, int h, int w) {
    RainRecipe r;
    r.alpha = j.at("alpha").get<double>();
    r.beta = j.at("beta").get<double>();
    r.atm_light = j.at("atm_light").get<double>();
    r.d1 = j.at("d1").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.streaks.count = j.at("streak_count").get<int>();
    r.streaks.angle_deg = j.at("streak_angle_deg").get<double>();
    r.streaks.length_px = j.at("streak_length_px").get<int>();
    r.streaks.width_px = j.at("streak_width_px").get<int>();
    r.streaks.intensity = j.at("streak_intensity").get<double>();
    r.streak_pattern = make_streak_pattern(h, w, r.streaks, mix_seed(r.seed, 1));
    return r;
}

/// Hash of an image after 8-bit quantization (what lands on disk).
inline std::uint64_t quantized_hash(const Tensor<double>& t) {
    std::vector<unsigned char> q(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) q[i] = io::detail::to_u8(t[i]);
    return fnv1a(q.data(), q.size());
}

struct Manifest {
    nlohmann::json records = nlohmann::json::array();
    std::size_t size() const { return records.size(); }
};

inline std::string sample_stem(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", index);
    return buf;
}

/// Writes n degraded samples under out_dir in the rainy/clean/depth layout plus
/// manifest.json. Sample i degrades clean image (i mod pool size).
inline Manifest synthesize_dataset(const std::filesystem::path& clean_dir,
                                   const std::optional<std::filesystem::path>& depth_dir, const RecipeSpace& space,
                                   int n, const std::filesystem::path& out_dir, std::uint64_t seed) {
    namespace fs = std::filesystem;
    if (n < 0) throw InvalidArgument("synthesize_dataset: n must be >= 0");
    const auto cleans = io::list_pngs(clean_dir);
    if (cleans.empty()) throw IoError("no clean images found", clean_dir.string());
    Manifest manifest;
    fs::create_directories(out_dir);
    if (n > 0) {
        for (const char* sub : {"rainy", "clean", "depth"}) fs::create_directories(out_dir / sub);
    }
    for (int i = 0; i < n; ++i) {
        const fs::path& clean_path = cleans[static_cast<std::size_t>(i) % cleans.size()];
        Image clean(io::read_rgb(clean_path.string()));
        DepthMap depth;
        if (depth_dir) {
            const fs::path dp = *depth_dir / clean_path.filename();
            if (!fs::exists(dp)) throw IoError("missing depth map", dp.string());
            depth = DepthMap(io::read_depth(dp.string(), kDepthFloor));
            if (depth.height() != clean.height() || depth.width() != clean.width()) {
                throw InvalidArgument("synthesize_dataset: depth " + depth.depth.shape().str() + " does not match " +
                                      clean.pixels.shape().str() + " for " + dp.string());
            }
        } else {
            depth = DepthMap::constant(clean.height(), clean.width(), 0.5);
        }
        const std::uint64_t sample_seed = mix_seed(seed, static_cast<std::uint64_t>(i));
        SynthSample s = degrade(clean, depth, space.sample(clean.height(), clean.width(), sample_seed));
        const std::string stem = sample_stem(i);
        const std::string rainy_rel = "rainy/" + stem + ".png";
        const std::string clean_rel = "clean/" + stem + ".png";
        const std::string depth_rel = "depth/" + stem + ".png";
        io::write_rgb((out_dir / rainy_rel).string(), s.rainy.pixels);
        io::write_rgb((out_dir / clean_rel).string(), s.clean.pixels);
        io::write_depth((out_dir / depth_rel).string(), s.depth.depth);
        manifest.records.push_back({{"index", i},
                                    {"paths", {{"rainy", rainy_rel}, {"clean", clean_rel}, {"depth", depth_rel}}},
                                    {"source", clean_path.filename().string()},
                                    {"recipe", recipe_to_json(s.recipe)},
                                    {"seed", sample_seed},
                                    {"clamped_pixel_count", s.clamped_pixels},
                                    {"rainy_hash", quantized_hash(s.rainy.pixels)}});
    }
    std::ofstream mf(out_dir / "manifest.json");
    if (!mf) throw IoError("cannot write manifest", (out_dir / "manifest.json").string());
    mf << manifest.records.dump(2) << '\n';
    return manifest;
}

}  // namespace moregan::rainsim
