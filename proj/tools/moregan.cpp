// Command-line front end: synth, train, derain, eval, profile, ablate.
//
// Every verb takes --config <file> (key = value lines), --seed, and repeated
// --set key=value overrides that win over the file. Exit codes: 0 ok,
// 2 configuration error, 3 I/O error, 4 numeric abort.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "moregan/evalcli.hpp"
#include "moregan/scenes.hpp"

namespace {

namespace fs = std::filesystem;
using namespace moregan;

enum ExitCode { kOk = 0, kConfigError = 2, kIoError = 3, kNumericAbort = 4 };

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "key = value configuration file");
    app->add_option("--seed", c.seed, "random seed");
    app->add_option("--set", c.overrides, "override, key=value (repeatable)");
}

std::string read_text(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config file", path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

/// Config file text followed by the overrides, so later lines win.
std::string merged_text(const Common& c) {
    std::string text = c.config.empty() ? std::string() : read_text(c.config);
    text += "\n";
    for (const auto& o : c.overrides) {
        if (o.find('=') == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
        text += o + "\n";
    }
    return text;
}

train::TrainConfig train_config(const Common& c) {
    train::TrainConfig cfg;
    train::apply_text(cfg, merged_text(c));
    if (c.seed) cfg.seed = *c.seed;
    cfg.validate();
    return cfg;
}

/// Flat settings for the verbs that do not train; every key must be known.
class Settings {
public:
    Settings(const Common& c, std::map<std::string, std::string> defaults) : values_(std::move(defaults)) {
        std::istringstream in(merged_text(c));
        std::string line;
        while (std::getline(in, line)) {
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                if (line.find_first_not_of(" \t\r") != std::string::npos) throw ConfigError("expected key = value: " + line);
                continue;
            }
            const std::string key = trim(line.substr(0, eq));
            if (!values_.count(key)) throw ConfigError("unknown setting '" + key + "'");
            values_[key] = trim(line.substr(eq + 1));
        }
    }

    const std::string& str(const std::string& k) const { return values_.at(k); }
    double num(const std::string& k) const {
        try {
            std::size_t used = 0;
            const double v = std::stod(values_.at(k), &used);
            if (used != values_.at(k).size()) throw std::invalid_argument(k);
            return v;
        } catch (const std::logic_error&) {
            throw ConfigError("setting '" + k + "' is not a number: " + values_.at(k));
        }
    }
    int integer(const std::string& k) const {
        const double v = num(k);
        if (v != static_cast<int>(v)) throw ConfigError("setting '" + k + "' must be an integer");
        return static_cast<int>(v);
    }
    bool flag(const std::string& k) const {
        const auto& v = values_.at(k);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("setting '" + k + "' must be true or false");
    }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
    }
    std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------

struct SynthArgs {
    Common common;
    std::string clean_dir;
    std::string depth_dir;
    std::string out;
    int count = 8;
    int scenes = 0;
    int height = 64;
    int width = 128;
};

int run_synth(const SynthArgs& a) {
    const Settings s(a.common, {{"alpha_min", "1.0"},  {"alpha_max", "2.5"},  {"beta_min", "0.3"},
                                {"beta_max", "1.0"},   {"atm_min", "0.7"},    {"atm_max", "0.9"},
                                {"d1_min", "0.05"},    {"d1_max", "0.15"},    {"count_min", "40"},
                                {"count_max", "120"},  {"angle_min", "-20"},  {"angle_max", "20"},
                                {"length_min", "8"},   {"length_max", "20"},  {"width_min", "1"},
                                {"width_max", "2"},    {"intensity_min", "0.6"}, {"intensity_max", "1.0"}});
    rainsim::RecipeSpace space;
    space.alpha_min = s.num("alpha_min");
    space.alpha_max = s.num("alpha_max");
    space.beta_min = s.num("beta_min");
    space.beta_max = s.num("beta_max");
    space.atm_min = s.num("atm_min");
    space.atm_max = s.num("atm_max");
    space.d1_min = s.num("d1_min");
    space.d1_max = s.num("d1_max");
    space.count_min = s.integer("count_min");
    space.count_max = s.integer("count_max");
    space.angle_min = s.num("angle_min");
    space.angle_max = s.num("angle_max");
    space.length_min = s.integer("length_min");
    space.length_max = s.integer("length_max");
    space.width_min = s.integer("width_min");
    space.width_max = s.integer("width_max");
    space.intensity_min = s.num("intensity_min");
    space.intensity_max = s.num("intensity_max");

    const std::uint64_t seed = a.common.seed.value_or(0);
    fs::path clean_dir = a.clean_dir;
    std::optional<fs::path> depth_dir;
    if (!a.depth_dir.empty()) depth_dir = a.depth_dir;
    if (a.scenes > 0) {
        const fs::path scene_root = fs::path(a.out) / "scenes";
        rainsim::write_scenes(scene_root, a.scenes, a.height, a.width, mix_seed(seed, 17));
        clean_dir = scene_root / "clean";
        depth_dir = scene_root / "depth";
    }
    if (clean_dir.empty()) throw ConfigError("synth needs --clean <dir> or --scenes <n>");
    try {
        const auto m = rainsim::synthesize_dataset(clean_dir, depth_dir, space, a.count, a.out, seed);
        std::printf("wrote %zu samples to %s\n", m.size(), a.out.c_str());
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    return kOk;
}

struct TrainArgs {
    Common common;
    std::string paired;
    std::string unpaired;
    std::string out;
    bool quiet = false;
};

int run_train(const TrainArgs& a) {
    const auto cfg = train_config(a.common);
    const auto paired = train::load_paired(a.paired);
    std::optional<train::UnpairedDataset> unpaired;
    if (!a.unpaired.empty()) unpaired = train::load_unpaired(a.unpaired);
    const auto result = train::train(cfg, paired, unpaired ? &*unpaired : nullptr, a.out,
                                     [&](long step, const losses::LossReport& r) {
                                         if (!a.quiet && (step % 50 == 0 || step + 1 == cfg.max_steps)) {
                                             std::printf("step %6ld  %-12s total %.5f\n", step, r.branch.c_str(), r.total);
                                             std::fflush(stdout);
                                         }
                                     });
    std::printf("trained %ld steps; checkpoint %s\n", result.steps, result.checkpoint.string().c_str());
    return kOk;
}

struct DerainArgs {
    Common common;
    std::string checkpoint;
    std::string in;
    std::string out;
    std::string depth_out;
};

int run_derain(const DerainArgs& a) {
    (void)Settings(a.common, {});
    const auto model = eval::Derainer::from_file(a.checkpoint);
    const auto rainy = io::read_rgb(a.in).cast<float>();
    const auto r = model.run(rainy);
    io::write_rgb(a.out, r.derained.cast<double>());
    if (!a.depth_out.empty()) {
        if (r.depth.empty()) throw ConfigError("this checkpoint's variant predicts no depth");
        io::write_depth(a.depth_out, r.depth.cast<double>());
    }
    return kOk;
}

struct EvalArgs {
    Common common;
    std::string checkpoint;
    std::string data;
    std::string out;
    bool grids = false;
};

int run_eval(const EvalArgs& a) {
    const Settings s(a.common, {{"ssim_luminance_only", "false"}, {"ssim_window", "11"}, {"ssim_sigma", "1.5"}});
    eval::EvalOptions opt;
    opt.write_grids = a.grids;
    opt.ssim.luminance_only = s.flag("ssim_luminance_only");
    opt.ssim.window = s.integer("ssim_window");
    opt.ssim.sigma = s.num("ssim_sigma");
    if (opt.ssim.window < 1 || opt.ssim.window % 2 == 0 || !(opt.ssim.sigma > 0)) {
        throw ConfigError("ssim_window must be odd and positive, ssim_sigma positive");
    }
    eval::EvalFiles files;
    const auto report = eval::evaluate(a.checkpoint, a.data, a.out, opt, &files);
    for (const auto& r : report.rows) {
        if (r.identical) {
            std::printf("%-10s  PSNR identical  SSIM %.4f\n", r.stem.c_str(), r.ssim);
        } else {
            std::printf("%-10s  PSNR %7.3f dB  SSIM %.4f\n", r.stem.c_str(), r.psnr_db, r.ssim);
        }
    }
    std::printf("mean PSNR %.3f dB (%d identical)  mean SSIM %.4f\nreport %s\n", report.mean_psnr,
                report.identical_count, report.mean_ssim, files.json.string().c_str());
    return kOk;
}

std::vector<std::array<int, 3>> parse_dims(const std::string& text) {
    std::vector<std::array<int, 3>> dims;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::array<int, 3> d{};
        char x1 = 0, x2 = 0;
        std::istringstream is(item);
        if (!(is >> d[0] >> x1 >> d[1] >> x2 >> d[2]) || x1 != 'x' || x2 != 'x') {
            throw ConfigError("dims entry '" + item + "' is not HxWxC");
        }
        dims.push_back(d);
    }
    if (dims.empty()) throw ConfigError("profile needs at least one HxWxC entry");
    return dims;
}

std::vector<int> parse_ints(const std::string& text, const std::string& key) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::logic_error&) {
            throw ConfigError("setting '" + key + "' must be a comma-separated integer list");
        }
    }
    return out;
}

struct ProfileArgs {
    Common common;
    std::string out;
};

int run_profile(const ProfileArgs& a) {
    const Settings s(a.common, {{"dims", "16x32x64,32x64x64,64x128x64"},
                                {"bins", "1,2,4,8"},
                                {"repeats", "5"},
                                {"memory_budget_mb", "2000"}});
    pdnl::PyramidPoolSpec spec;
    spec.bin_sizes = parse_ints(s.str("bins"), "bins");
    eval::ProfileOptions opt;
    opt.repeats = s.integer("repeats");
    opt.memory_budget_bytes = s.num("memory_budget_mb") * 1e6;
    opt.seed = a.common.seed.value_or(7);
    if (opt.repeats < 1) throw ConfigError("repeats must be positive");
    const auto rows = eval::profile_pdnl(parse_dims(s.str("dims")), spec, opt);
    fs::create_directories(a.out);
    eval::write_profile_csv(rows, fs::path(a.out) / "pdnl_profile.csv");
    eval::write_profile_plot(rows, fs::path(a.out) / "pdnl_profile.png");
    for (const auto& r : rows) {
        std::printf("%4dx%-4d C=%-4d N=%-7lld L=%-4lld ratio %9.2f  dense %s ms  pdnl %.3f ms\n", r.h, r.w, r.c,
                    static_cast<long long>(r.n), static_cast<long long>(r.keys), r.interaction_ratio,
                    r.dense_skipped ? "skipped" : std::to_string(r.dense_ms).c_str(), r.pdnl_ms);
    }
    return kOk;
}

struct AblateArgs {
    Common common;
    std::string paired;
    std::string unpaired;
    std::string out;
    std::vector<std::string> runs;
};

int run_ablate(const AblateArgs& a) {
    const auto cfg = train_config(a.common);
    std::vector<eval::AblationEntry> matrix;
    for (const auto& r : a.runs) {
        const auto colon = r.find(':');
        if (colon == std::string::npos) throw ConfigError("run '" + r + "' is not VARIANT:MASK");
        matrix.push_back({r.substr(0, colon), r.substr(colon + 1)});
    }
    const auto paired = train::load_paired(a.paired);
    std::optional<train::UnpairedDataset> unpaired;
    if (!a.unpaired.empty()) unpaired = train::load_unpaired(a.unpaired);
    const auto rows = eval::ablate(cfg, matrix, paired, unpaired ? &*unpaired : nullptr, a.out);
    fs::create_directories(a.out);
    eval::write_ablation(rows, fs::path(a.out) / "ablation.csv", fs::path(a.out) / "ablation.json");
    for (const auto& r : rows) {
        std::printf("%-6s %-4s  PSNR %7.3f dB  SSIM %.4f  (%ld steps, %.1f s)\n", r.variant.c_str(),
                    r.loss_mask.c_str(), r.psnr_db, r.ssim, r.steps, r.seconds);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Depth-guided semi-supervised deraining"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "render a paired rainy/clean/depth dataset");
    add_common(s, synth.common);
    s->add_option("--clean", synth.clean_dir, "directory of clean PNGs");
    s->add_option("--depth", synth.depth_dir, "directory of depth PNGs matched by file name");
    s->add_option("--scenes", synth.scenes, "generate this many procedural scenes instead of --clean");
    s->add_option("--height", synth.height, "procedural scene height");
    s->add_option("--width", synth.width, "procedural scene width");
    s->add_option("-n,--count", synth.count, "number of samples");
    s->add_option("--out", synth.out, "output root")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "run semi-supervised training");
    add_common(t, tr.common);
    t->add_option("--paired", tr.paired, "paired dataset root (rainy/, clean/, depth/)")->required();
    t->add_option("--unpaired", tr.unpaired, "unpaired real rainy images");
    t->add_option("--out", tr.out, "run directory")->required();
    t->add_flag("--quiet", tr.quiet, "no per-step progress");

    DerainArgs dr;
    auto* d = app.add_subcommand("derain", "derain one image");
    add_common(d, dr.common);
    d->add_option("--checkpoint", dr.checkpoint, "checkpoint file")->required();
    d->add_option("in", dr.in, "rainy PNG")->required();
    d->add_option("out", dr.out, "derained PNG")->required();
    d->add_option("--depth-out", dr.depth_out, "also write the predicted depth map");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "score a checkpoint on a paired dataset");
    add_common(e, ev.common);
    e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
    e->add_option("--data", ev.data, "paired dataset root")->required();
    e->add_option("--out", ev.out, "report directory")->required();
    e->add_flag("--grids", ev.grids, "write rainy|derained|clean|depth strips");

    ProfileArgs pr;
    auto* p = app.add_subcommand("profile", "time dense vs pyramid non-local attention");
    add_common(p, pr.common);
    p->add_option("--out", pr.out, "report directory")->required();

    AblateArgs ab;
    auto* b = app.add_subcommand("ablate", "train and score a matrix of variants");
    add_common(b, ab.common);
    b->add_option("--paired", ab.paired, "paired dataset root")->required();
    b->add_option("--unpaired", ab.unpaired, "unpaired real rainy images");
    b->add_option("--out", ab.out, "output directory")->required();
    b->add_option("--run", ab.runs, "VARIANT:MASK, e.g. M-A:V7 (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? kOk : kConfigError;
    }

    try {
        if (*s) return run_synth(synth);
        if (*t) return run_train(tr);
        if (*d) return run_derain(dr);
        if (*e) return run_eval(ev);
        if (*p) return run_profile(pr);
        if (*b) return run_ablate(ab);
    } catch (const ConfigError& err) {
        std::cerr << "configuration error: " << err.what() << "\n";
        return kConfigError;
    } catch (const InvalidArgument& err) {
        std::cerr << "configuration error: " << err.what() << "\n";
        return kConfigError;
    } catch (const IoError& err) {
        std::cerr << "I/O error: " << err.what() << "\n";
        return kIoError;
    } catch (const fs::filesystem_error& err) {
        std::cerr << "I/O error: " << err.what() << "\n";
        return kIoError;
    } catch (const NumericAbort& err) {
        std::cerr << "numeric abort: " << err.what() << "\n";
        return kNumericAbort;
    }
    return kOk;
}
