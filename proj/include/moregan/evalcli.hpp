#pragma once

#include "json.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "moregan/metrics.hpp"
#include "moregan/semitrainer.hpp"

namespace moregan::eval {

namespace fs = std::filesystem;

/// Inference-only generator restored from a checkpoint's generator namespaces.
class Derainer {
public:
    struct Result {
        Tensor<float> derained;  // [1,3,H,W]
        Tensor<float> depth;     // [1,1,H,W]; empty when the variant predicts no depth
    };

    explicit Derainer(const ckpt::Checkpoint& ck) {
        if (ck.config.empty()) throw ConfigError("checkpoint carries no configuration echo");
        cfg_ = train::from_json(ck.config);
        Rng rng(cfg_.seed);
        gen_ = gan::Generator<float>(store_, cfg_.topology().generator, rng);
        ckpt::restore(store_, ck, {"gen.", "adpn.", "cfpn.", "pdnl."});
        store_.set_trainable("", false);
        id_ = store_.hash();
        min_side_ = std::max(16, gen_.min_side());
    }

    static Derainer from_file(const fs::path& path) { return Derainer(ckpt::load(path)); }

    const train::TrainConfig& config() const { return cfg_; }
    /// Content hash of the restored generator weights.
    std::uint64_t id() const { return id_; }

    /// Derains one image of any size: edge-pads up to a multiple of 16 (and at
    /// least the size the coarsest pyramid bin needs), runs the generator in
    /// inference mode and crops back.
    Result run(const Tensor<float>& rainy) const {
        if (rainy.n() != 1 || rainy.c() != 3) throw InvalidArgument("derain: expected [1,3,H,W], got " + rainy.shape().str());
        constexpr int kMultiple = 16;
        const int h = rainy.h();
        const int w = rainy.w();
        const int ph = std::max(min_side_, (h + kMultiple - 1) / kMultiple * kMultiple);
        const int pw = std::max(min_side_, (w + kMultiple - 1) / kMultiple * kMultiple);
        const Tensor<float> padded = pad_edge(rainy, ph, pw);
        NoGradGuard guard;
        const auto out = gen_.forward(Var<float>(padded), false);
        Result r;
        r.derained = train::crop(out.derained.value(), 0, 0, h, w);
        if (out.depth.defined()) r.depth = train::crop(out.depth.value(), 0, 0, h, w);
        return r;
    }

    static Tensor<float> pad_edge(const Tensor<float>& t, int ph, int pw) {
        if (ph == t.h() && pw == t.w()) return t;
        Tensor<float> out(Shape{1, t.c(), ph, pw});
        for (int c = 0; c < t.c(); ++c) {
            for (int y = 0; y < ph; ++y) {
                for (int x = 0; x < pw; ++x) out.at(0, c, y, x) = t.at(0, c, std::min(y, t.h() - 1), std::min(x, t.w() - 1));
            }
        }
        return out;
    }

private:
    train::TrainConfig cfg_;
    ParamStore<float> store_;
    gan::Generator<float> gen_;
    std::uint64_t id_ = 0;
    int min_side_ = 16;
};

struct ImageMetric {
    std::string stem;
    double psnr_db = 0.0;
    bool identical = false;
    double ssim = 0.0;
};

struct MetricReport {
    std::vector<ImageMetric> rows;
    /// Mean over rows that are not flagged identical (NaN when every row is).
    double mean_psnr = std::numeric_limits<double>::quiet_NaN();
    int identical_count = 0;
    double mean_ssim = 0.0;
    nlohmann::json meta = nlohmann::json::object();

    void finalize() {
        double ps = 0.0;
        double ss = 0.0;
        int finite = 0;
        identical_count = 0;
        for (const auto& r : rows) {
            ss += r.ssim;
            if (r.identical) {
                ++identical_count;
            } else {
                ps += r.psnr_db;
                ++finite;
            }
        }
        mean_psnr = finite > 0 ? ps / finite : std::numeric_limits<double>::quiet_NaN();
        mean_ssim = rows.empty() ? 0.0 : ss / static_cast<double>(rows.size());
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["meta"] = meta;
        j["rows"] = nlohmann::json::array();
        for (const auto& r : rows) {
            nlohmann::json row{{"stem", r.stem}, {"ssim", r.ssim}, {"identical", r.identical}};
            row["psnr_db"] = r.identical ? nlohmann::json("identical") : nlohmann::json(r.psnr_db);
            j["rows"].push_back(row);
        }
        j["mean_psnr_db"] = std::isnan(mean_psnr) ? nlohmann::json("identical") : nlohmann::json(mean_psnr);
        j["identical_count"] = identical_count;
        j["mean_ssim"] = mean_ssim;
        return j;
    }
};

inline ImageMetric score(const std::string& stem, const Tensor<float>& pred, const Tensor<float>& ref,
                         const metrics::SsimOptions& opt = {}) {
    const auto p = metrics::psnr(pred, ref);
    return {stem, p.db, p.identical, metrics::ssim(pred, ref, opt)};
}

/// Side-by-side strip: rainy | derained | clean | depth (gray).
inline Tensor<double> make_grid(const Tensor<float>& rainy, const Tensor<float>& derained, const Tensor<float>& clean,
                                const Tensor<float>& depth) {
    const int h = rainy.h();
    const int w = rainy.w();
    const int panels = 4;
    Tensor<double> grid(Shape{1, 3, h, w * panels}, 0.0);
    auto put = [&](int k, const Tensor<float>& t) {
        if (t.empty()) return;
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) grid.at(0, c, y, k * w + x) = t.at(0, t.c() == 3 ? c : 0, y, x);
            }
        }
    };
    put(0, rainy);
    put(1, derained);
    put(2, clean);
    put(3, depth);
    return grid;
}

inline std::string hex_id(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct EvalOptions {
    bool write_grids = false;
    metrics::SsimOptions ssim;
};

/// Runs the generator over every pair of a dataset and scores it against the clean images.
inline MetricReport evaluate(const Derainer& model, const train::PairedDataset& data, const EvalOptions& opt = {},
                             const fs::path& grid_dir = {}) {
    MetricReport report;
    for (const auto& s : data.samples) {
        const auto out = model.run(s.rainy);
        report.rows.push_back(score(s.stem, out.derained, s.clean, opt.ssim));
        if (opt.write_grids && !grid_dir.empty()) {
            fs::create_directories(grid_dir);
            io::write_rgb((grid_dir / (s.stem + ".png")).string(), make_grid(s.rainy, out.derained, s.clean, out.depth));
        }
    }
    report.finalize();
    report.meta = {{"checkpoint", hex_id(model.id())},
                   {"dataset", data.id},
                   {"config", train::to_json(model.config())}};
    return report;
}

struct EvalFiles {
    fs::path json;
    fs::path csv;
    fs::path grids;
};

inline void write_csv(const MetricReport& r, const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write report", path.string());
    f << "stem,psnr_db,ssim\n";
    f.precision(10);
    for (const auto& row : r.rows) {
        f << row.stem << ",";
        if (row.identical) {
            f << "identical";
        } else {
            f << row.psnr_db;
        }
        f << "," << row.ssim << "\n";
    }
    f << "mean,";
    if (std::isnan(r.mean_psnr)) {
        f << "identical";
    } else {
        f << r.mean_psnr;
    }
    f << "," << r.mean_ssim << "\n";
}

/// Loads a checkpoint and a paired dataset, evaluates, and writes
/// `eval_<checkpoint>_<dataset>.{json,csv}` (plus grids) into `out_dir`.
inline MetricReport evaluate(const fs::path& checkpoint, const fs::path& dataset_root, const fs::path& out_dir,
                             const EvalOptions& opt = {}, EvalFiles* files = nullptr) {
    const Derainer model = Derainer::from_file(checkpoint);
    const auto data = train::load_paired(dataset_root);
    fs::create_directories(out_dir);
    const std::string base = "eval_" + hex_id(model.id()) + "_" + data.id;
    EvalFiles f{out_dir / (base + ".json"), out_dir / (base + ".csv"), out_dir / (base + "_grids")};
    auto report = evaluate(model, data, opt, f.grids);
    std::ofstream js(f.json);
    if (!js) throw IoError("cannot write report", f.json.string());
    js << report.to_json().dump(2) << "\n";
    write_csv(report, f.csv);
    if (files) *files = f;
    return report;
}

// ---------------------------------------------------------------------------
// Non-local cost profile

struct ProfileRow {
    int h = 0;
    int w = 0;
    int c = 0;
    std::int64_t n = 0;
    std::int64_t keys = 0;
    std::int64_t dense_interactions = 0;
    std::int64_t pdnl_interactions = 0;
    double interaction_ratio = 0.0;
    double dense_ms = std::numeric_limits<double>::quiet_NaN();
    double pdnl_ms = std::numeric_limits<double>::quiet_NaN();
    bool dense_skipped = false;
    std::string note;
};

struct ProfileOptions {
    int repeats = 5;
    /// Dense runs whose affinity matrices would exceed this many bytes are skipped.
    double memory_budget_bytes = 2.0e9;
    std::uint64_t seed = 7;
};

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Interaction counts plus measured forward time (median of `repeats`) of a
/// full-resolution non-local block versus the pyramid block, per (H, W, C).
inline std::vector<ProfileRow> profile_pdnl(const std::vector<std::array<int, 3>>& dims, const pdnl::PyramidPoolSpec& spec,
                                            const ProfileOptions& opt = {}) {
    std::vector<ProfileRow> rows;
    for (const auto& [h, w, c] : dims) {
        if (h <= 0 || w <= 0 || c <= 0 || h % 4 != 0 || w % 4 != 0) {
            throw ConfigError("profile dims must be positive with H and W divisible by 4");
        }
        ProfileRow row;
        row.h = h;
        row.w = w;
        row.c = c;
        row.n = static_cast<std::int64_t>(h) * w;
        row.keys = spec.key_count(h / 4, w / 4);
        const auto counts = pdnl::interaction_count(h, w, c, spec);
        row.dense_interactions = counts.dense;
        row.pdnl_interactions = counts.pyramid;
        row.interaction_ratio = static_cast<double>(counts.dense) / static_cast<double>(counts.pyramid);

        ParamStore<float> store;
        Rng rng(opt.seed);
        const pdnl::PdnlParams<float> params(store, "pdnl", c, 4, InitSpec{}, rng);
        store.set_trainable("", false);
        Tensor<float> x(Shape{1, c, h, w});
        for (auto& v : x.values()) v = static_cast<float>(rng.uniform());
        Tensor<float> d(Shape{1, 1, h, w});
        for (auto& v : d.values()) v = static_cast<float>(rng.uniform(0.05, 1.0));
        const Var<float> xv(x);
        const Var<float> dv(d);
        pdnl::PdnlConfig cfg;
        cfg.pool = spec;

        NoGradGuard guard;
        auto time_ms = [&](auto&& fn) {
            std::vector<double> t;
            for (int i = 0; i < opt.repeats; ++i) {
                const auto t0 = std::chrono::steady_clock::now();
                fn();
                t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
            }
            return median(t);
        };
        try {
            row.pdnl_ms = time_ms([&] { (void)pdnl::pdnl_forward(xv, dv, params, cfg); });
        } catch (const InvalidArgument& e) {
            row.note = e.what();
        }
        // logits + softmax copies of an N x N float matrix
        const double dense_bytes = 2.0 * static_cast<double>(row.n) * static_cast<double>(row.n) * sizeof(float);
        if (dense_bytes > opt.memory_budget_bytes) {
            row.dense_skipped = true;
            if (!row.note.empty()) row.note += "; ";
            row.note += "dense run skipped: needs " + std::to_string(static_cast<long long>(dense_bytes / 1e6)) +
                        " MB over the memory budget";
        } else {
            row.dense_ms = time_ms([&] { (void)pdnl::dense_nonlocal(xv, params); });
        }
        rows.push_back(row);
    }
    return rows;
}

inline void write_profile_csv(const std::vector<ProfileRow>& rows, const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write profile", path.string());
    f << "H,W,C,N,L,dense_interactions,pdnl_interactions,interaction_ratio,dense_ms,pdnl_ms,time_ratio,note\n";
    f.precision(10);
    for (const auto& r : rows) {
        f << r.h << "," << r.w << "," << r.c << "," << r.n << "," << r.keys << "," << r.dense_interactions << ","
          << r.pdnl_interactions << "," << r.interaction_ratio << ",";
        if (r.dense_skipped) {
            f << "skipped";
        } else {
            f << r.dense_ms;
        }
        f << "," << r.pdnl_ms << ",";
        if (!r.dense_skipped && r.pdnl_ms > 0) f << r.dense_ms / r.pdnl_ms;
        f << "," << '"' << r.note << '"' << "\n";
    }
}

/// Log-log scatter of time vs N: dense in red, pyramid in blue, on a light grid
/// of decades.
inline void write_profile_plot(const std::vector<ProfileRow>& rows, const fs::path& path) {
    const int width = 640;
    const int height = 420;
    const int margin = 40;
    Tensor<double> img(Shape{1, 3, height, width}, 1.0);
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& r : rows) {
        const double lx = std::log10(static_cast<double>(r.n));
        xmin = std::min(xmin, lx);
        xmax = std::max(xmax, lx);
        for (double t : {r.dense_ms, r.pdnl_ms}) {
            if (std::isfinite(t) && t > 0) {
                ymin = std::min(ymin, std::log10(t));
                ymax = std::max(ymax, std::log10(t));
            }
        }
    }
    if (rows.empty() || !(ymax >= ymin)) {
        io::write_rgb(path.string(), img);
        return;
    }
    xmin = std::floor(xmin);
    xmax = std::max(std::ceil(xmax), xmin + 1);
    ymin = std::floor(ymin);
    ymax = std::max(std::ceil(ymax), ymin + 1);
    auto px = [&](double lx) { return margin + static_cast<int>((lx - xmin) / (xmax - xmin) * (width - 2 * margin)); };
    auto py = [&](double ly) {
        return height - margin - static_cast<int>((ly - ymin) / (ymax - ymin) * (height - 2 * margin));
    };
    auto dot = [&](int x, int y, std::array<double, 3> col, int r) {
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
                const int yy = y + dy, xx = x + dx;
                if (yy >= 0 && yy < height && xx >= 0 && xx < width) {
                    for (int c = 0; c < 3; ++c) img.at(0, c, yy, xx) = col[c];
                }
            }
        }
    };
    auto line = [&](int x0, int y0, int x1, int y1, std::array<double, 3> col) {
        const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
        for (int i = 0; i <= steps; ++i) {
            dot(x0 + (x1 - x0) * i / steps, y0 + (y1 - y0) * i / steps, col, 0);
        }
    };
    const std::array<double, 3> grid{0.85, 0.85, 0.85};
    const std::array<double, 3> axis{0.0, 0.0, 0.0};
    for (double d = xmin; d <= xmax; d += 1.0) line(px(d), py(ymin), px(d), py(ymax), grid);
    for (double d = ymin; d <= ymax; d += 1.0) line(px(xmin), py(d), px(xmax), py(d), grid);
    line(px(xmin), py(ymin), px(xmax), py(ymin), axis);
    line(px(xmin), py(ymin), px(xmin), py(ymax), axis);
    auto series = [&](auto get, std::array<double, 3> col) {
        int lx = -1, ly = -1;
        for (const auto& r : rows) {
            const double t = get(r);
            if (!(std::isfinite(t) && t > 0)) continue;
            const int x = px(std::log10(static_cast<double>(r.n)));
            const int y = py(std::log10(t));
            if (lx >= 0) line(lx, ly, x, y, col);
            dot(x, y, col, 3);
            lx = x;
            ly = y;
        }
    };
    series([](const ProfileRow& r) { return r.dense_ms; }, {0.85, 0.1, 0.1});
    series([](const ProfileRow& r) { return r.pdnl_ms; }, {0.1, 0.2, 0.85});
    io::write_rgb(path.string(), img);
}

// ---------------------------------------------------------------------------
// Ablation harness

struct AblationEntry {
    std::string variant = "Ours";
    std::string loss_mask = "V7";
};

struct AblationRow {
    std::string variant;
    std::string loss_mask;
    double psnr_db = 0.0;
    double ssim = 0.0;
    long steps = 0;
    double seconds = 0.0;
};

/// Trains and evaluates (on the training pairs) one run per entry, each with the
/// base configuration and its own component set and loss mask.
inline std::vector<AblationRow> ablate(const train::TrainConfig& base, const std::vector<AblationEntry>& matrix,
                                       const train::PairedDataset& paired, const train::UnpairedDataset* unpaired,
                                       const fs::path& out_dir) {
    for (const auto& e : matrix) {
        train::TrainConfig cfg = base;
        cfg.variant = e.variant;
        cfg.loss_mask = e.loss_mask;
        cfg.validate();
    }
    std::vector<AblationRow> rows;
    for (const auto& e : matrix) {
        train::TrainConfig cfg = base;
        cfg.variant = e.variant;
        cfg.loss_mask = e.loss_mask;
        const fs::path run_dir = out_dir / (e.variant + "_" + e.loss_mask);
        const auto t0 = std::chrono::steady_clock::now();
        const auto result = train::train(cfg, paired, unpaired, run_dir);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto report = evaluate(Derainer::from_file(result.checkpoint), paired);
        rows.push_back({e.variant, e.loss_mask, report.mean_psnr, report.mean_ssim, result.steps, seconds});
    }
    return rows;
}

inline void write_ablation(const std::vector<AblationRow>& rows, const fs::path& csv, const fs::path& json) {
    std::ofstream f(csv);
    if (!f) throw IoError("cannot write ablation table", csv.string());
    f << "variant,loss_mask,psnr_db,ssim,steps,seconds\n";
    f.precision(10);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
        f << r.variant << "," << r.loss_mask << "," << r.psnr_db << "," << r.ssim << "," << r.steps << "," << r.seconds
          << "\n";
        j.push_back({{"variant", r.variant},
                     {"loss_mask", r.loss_mask},
                     {"psnr_db", r.psnr_db},
                     {"ssim", r.ssim},
                     {"steps", r.steps},
                     {"seconds", r.seconds}});
    }
    std::ofstream js(json);
    if (!js) throw IoError("cannot write ablation table", json.string());
    js << j.dump(2) << "\n";
}

}  // namespace moregan::eval
