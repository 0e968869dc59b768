#pragma once

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "moregan/checkpoint.hpp"
#include "moregan/config.hpp"
#include "moregan/core/optim.hpp"
#include "moregan/imageio.hpp"

namespace moregan::train {

namespace fs = std::filesystem;

/// Depth substituted when a dataset ships no depth maps.
inline constexpr float kConstantDepth = 0.5f;

struct PairedSample {
    std::string stem;
    Tensor<float> rainy;  // [1,3,H,W]
    Tensor<float> clean;  // [1,3,H,W]
    Tensor<float> depth;  // [1,1,H,W]
};

struct PairedDataset {
    std::string id;
    bool has_depth = false;
    std::vector<PairedSample> samples;
    std::size_t size() const { return samples.size(); }
};

struct UnpairedSample {
    std::string stem;
    Tensor<float> rainy;
};

struct UnpairedDataset {
    std::string id;
    std::vector<UnpairedSample> samples;
    std::size_t size() const { return samples.size(); }
};

/// Reads `<root>/rainy`, `<root>/clean` and (optionally) `<root>/depth`, matched by file name.
inline PairedDataset load_paired(const fs::path& root) {
    const fs::path rainy_dir = root / "rainy";
    const fs::path clean_dir = root / "clean";
    const fs::path depth_dir = root / "depth";
    std::error_code ec;
    if (!fs::is_directory(rainy_dir, ec)) throw ConfigError("paired dataset has no rainy/ directory: " + root.string());
    PairedDataset ds;
    ds.id = root.filename().string();
    ds.has_depth = fs::is_directory(depth_dir, ec);
    for (const auto& path : io::list_pngs(rainy_dir)) {
        PairedSample s;
        s.stem = path.stem().string();
        s.rainy = io::read_rgb(path.string()).cast<float>();
        s.clean = io::read_rgb((clean_dir / path.filename()).string()).cast<float>();
        if (!(s.rainy.shape() == s.clean.shape())) {
            throw IoError("clean image size differs from its rainy pair", (clean_dir / path.filename()).string());
        }
        if (ds.has_depth) {
            s.depth = io::read_depth((depth_dir / path.filename()).string(), 0.0).cast<float>();
            if (s.depth.h() != s.rainy.h() || s.depth.w() != s.rainy.w()) {
                throw IoError("depth map size differs from its rainy image", (depth_dir / path.filename()).string());
            }
        } else {
            s.depth = Tensor<float>(Shape{1, 1, s.rainy.h(), s.rainy.w()}, kConstantDepth);
        }
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw ConfigError("paired dataset is empty: " + rainy_dir.string());
    return ds;
}

/// Reads every PNG of `<root>/rainy` if present, else of `root` itself.
inline UnpairedDataset load_unpaired(const fs::path& root) {
    std::error_code ec;
    const fs::path dir = fs::is_directory(root / "rainy", ec) ? root / "rainy" : root;
    if (!fs::is_directory(dir, ec)) throw ConfigError("unpaired dataset directory not found: " + root.string());
    UnpairedDataset ds;
    ds.id = root.filename().string();
    for (const auto& path : io::list_pngs(dir)) {
        ds.samples.push_back({path.stem().string(), io::read_rgb(path.string()).cast<float>()});
    }
    if (ds.samples.empty()) throw ConfigError("unpaired dataset is empty: " + dir.string());
    return ds;
}

/// Cyclic batches over a fresh seeded permutation per epoch. An epoch is
/// ceil(n / batch) batches; the last batch wraps to the start of the permutation.
class EpochSampler {
public:
    EpochSampler(std::size_t n, std::size_t batch, std::uint64_t seed) : n_(n), batch_(batch), seed_(seed) {
        if (n == 0 || batch == 0) throw ConfigError("sampler needs a non-empty dataset and a positive batch");
        reshuffle();
    }

    std::size_t epoch_length() const { return (n_ + batch_ - 1) / batch_; }
    std::size_t epoch() const { return epoch_; }

    std::vector<std::size_t> next() {
        if (pos_ == epoch_length()) {
            ++epoch_;
            pos_ = 0;
            reshuffle();
        }
        std::vector<std::size_t> out(batch_);
        for (std::size_t j = 0; j < batch_; ++j) out[j] = perm_[(pos_ * batch_ + j) % n_];
        ++pos_;
        return out;
    }

private:
    void reshuffle() {
        perm_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
        Rng rng(mix_seed(seed_, epoch_));
        std::shuffle(perm_.begin(), perm_.end(), rng.engine());
    }

    std::size_t n_;
    std::size_t batch_;
    std::uint64_t seed_;
    std::size_t epoch_ = 0;
    std::size_t pos_ = 0;
    std::vector<std::size_t> perm_;
};

/// Draws clean "fake label" images without replacement per pass over the
/// pool, never returning an image whose stem matches the excluded one.
class FakeLabelSampler {
public:
    FakeLabelSampler(std::vector<std::string> stems, std::uint64_t seed) : stems_(std::move(stems)), seed_(seed) {
        if (stems_.empty()) throw ConfigError("fake-label pool is empty");
    }

    std::size_t next(const std::string& exclude) {
        for (int attempt = 0; attempt < 2; ++attempt) {
            for (std::size_t i = 0; i < remaining_.size(); ++i) {
                if (stems_[remaining_[i]] != exclude) {
                    const std::size_t pick = remaining_[i];
                    remaining_.erase(remaining_.begin() + static_cast<std::ptrdiff_t>(i));
                    return pick;
                }
            }
            refill();
        }
        throw ConfigError("fake-label pool has no image other than '" + exclude + "'");
    }

private:
    void refill() {
        std::vector<std::size_t> perm(stems_.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        Rng rng(mix_seed(seed_, pass_++));
        std::shuffle(perm.begin(), perm.end(), rng.engine());
        remaining_.insert(remaining_.end(), perm.begin(), perm.end());
    }

    std::vector<std::string> stems_;
    std::uint64_t seed_;
    std::uint64_t pass_ = 0;
    std::vector<std::size_t> remaining_;
};

/// Top-left corner of a random ph x pw window.
inline std::pair<int, int> random_crop_origin(int h, int w, int ph, int pw, Rng& rng) {
    if (h < ph || w < pw) {
        throw ConfigError("image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                          std::to_string(ph) + "x" + std::to_string(pw) + " training patch");
    }
    return {rng.uniform_int(0, h - ph), rng.uniform_int(0, w - pw)};
}

inline Tensor<float> crop(const Tensor<float>& t, int y0, int x0, int ph, int pw) {
    Tensor<float> out(Shape{1, t.c(), ph, pw});
    for (int c = 0; c < t.c(); ++c) {
        for (int y = 0; y < ph; ++y) {
            const float* src = &t.at(0, c, y0 + y, x0);
            std::copy(src, src + pw, &out.at(0, c, y, 0));
        }
    }
    return out;
}

struct PairedBatch {
    Tensor<float> rainy;  // x_r
    Tensor<float> clean;  // x_g
    Tensor<float> depth;  // d_g
    std::vector<std::string> stems;
};

struct UnpairedBatch {
    Tensor<float> rainy;       // y_r
    Tensor<float> fake_label;  // y_g
    std::vector<std::string> stems;
    std::vector<std::string> label_stems;
};

/// Deterministic batch stream for both branches.
class BatchSource {
public:
    BatchSource(const TrainConfig& cfg, const PairedDataset& paired, const UnpairedDataset* unpaired)
        : cfg_(cfg),
          paired_(paired),
          unpaired_(unpaired),
          paired_sampler_(paired.size(), static_cast<std::size_t>(cfg.batch), mix_seed(cfg.seed, 101)),
          crop_rng_(mix_seed(cfg.seed, 102)) {
        if (unpaired_) {
            unpaired_sampler_ = std::make_unique<EpochSampler>(unpaired_->size(), static_cast<std::size_t>(cfg.batch),
                                                               mix_seed(cfg.seed, 103));
            std::vector<std::string> stems;
            for (const auto& s : paired.samples) stems.push_back(s.stem);
            labels_ = std::make_unique<FakeLabelSampler>(std::move(stems), mix_seed(cfg.seed, 104));
        }
    }

    PairedBatch next_paired() {
        std::vector<Tensor<float>> r, c, d;
        PairedBatch b;
        for (std::size_t i : paired_sampler_.next()) {
            const auto& s = paired_.samples[i];
            const auto [y0, x0] = random_crop_origin(s.rainy.h(), s.rainy.w(), cfg_.patch_h, cfg_.patch_w, crop_rng_);
            r.push_back(crop(s.rainy, y0, x0, cfg_.patch_h, cfg_.patch_w));
            c.push_back(crop(s.clean, y0, x0, cfg_.patch_h, cfg_.patch_w));
            d.push_back(crop(s.depth, y0, x0, cfg_.patch_h, cfg_.patch_w));
            b.stems.push_back(s.stem);
        }
        b.rainy = stack_batch(r);
        b.clean = stack_batch(c);
        b.depth = stack_batch(d);
        return b;
    }

    UnpairedBatch next_unpaired() {
        if (!unpaired_) throw ConfigError("no unpaired dataset configured");
        std::vector<Tensor<float>> r, g;
        UnpairedBatch b;
        for (std::size_t i : unpaired_sampler_->next()) {
            const auto& s = unpaired_->samples[i];
            auto [y0, x0] = random_crop_origin(s.rainy.h(), s.rainy.w(), cfg_.patch_h, cfg_.patch_w, crop_rng_);
            r.push_back(crop(s.rainy, y0, x0, cfg_.patch_h, cfg_.patch_w));
            const auto& label = paired_.samples[labels_->next(s.stem)];
            std::tie(y0, x0) = random_crop_origin(label.clean.h(), label.clean.w(), cfg_.patch_h, cfg_.patch_w, crop_rng_);
            g.push_back(crop(label.clean, y0, x0, cfg_.patch_h, cfg_.patch_w));
            b.stems.push_back(s.stem);
            b.label_stems.push_back(label.stem);
        }
        b.rainy = stack_batch(r);
        b.fake_label = stack_batch(g);
        return b;
    }

private:
    const TrainConfig& cfg_;
    const PairedDataset& paired_;
    const UnpairedDataset* unpaired_;
    EpochSampler paired_sampler_;
    std::unique_ptr<EpochSampler> unpaired_sampler_;
    std::unique_ptr<FakeLabelSampler> labels_;
    Rng crop_rng_;
};

/// Owns the GAN topology, the two optimizers and the loss configuration.
class Trainer {
public:
    using Topology = gan::GanTopology<float>;

    explicit Trainer(const TrainConfig& cfg)
        : cfg_(validated(cfg)),
          weights_(cfg.effective_weights()),
          mask_(cfg.mask()),
          topo_(std::make_unique<Topology>(cfg.topology())),
          gen_opt_(AdamConfig{cfg.lr_gen, cfg.momentum1, cfg.momentum2, 1e-8, cfg.weight_decay}),
          disc_opt_(AdamConfig{cfg.lr_disc, cfg.momentum1, cfg.momentum2, 1e-8, cfg.weight_decay}) {
        gen_names_ = topo_->names_under(Topology::generator_side_prefixes());
        ds_names_ = topo_->store().names("ds.");
        dr_names_ = topo_->store().names("dr.");
        if (weights_.lambda[losses::kPerceptual] > 0.0) {
            extractor_ = std::make_unique<losses::ConvStackExtractor<float>>(cfg.extractor_width);
        }
    }

    const TrainConfig& config() const { return cfg_; }
    const losses::LossWeights& weights() const { return weights_; }
    const losses::LossMask& mask() const { return mask_; }
    Topology& topology() { return *topo_; }
    double last_disc_loss() const { return last_disc_loss_; }

    /// Replaces the perceptual feature extractor (e.g. with an identity map in tests).
    void set_extractor(std::unique_ptr<losses::FeatureExtractor<float>> e) { extractor_ = std::move(e); }

    /// Discriminator step on real clean vs generated, then the shared generator step
    /// on the multi-task and supervised adversarial terms.
    losses::LossReport supervised_step(const PairedBatch& batch) {
        const Var<float> x_r(batch.rainy);
        const Var<float> x_g(batch.clean);
        const Var<float> d_g(batch.depth);
        const auto out = topo_->gs().forward(x_r, true);
        const bool adversarial = weights_.lambda[losses::kAdvSuper] > 0.0;
        last_disc_loss_ = 0.0;
        if (adversarial) last_disc_loss_ = discriminator_step(topo_->ds(), "ds.", ds_names_, x_g, out.derained);

        std::array<Var<float>, losses::kTermCount> terms;
        const bool depth_term = mask_.depth_term && out.depth.defined();
        terms[losses::kMultiTask] =
            losses::multi_task(out.derained, x_g, depth_term ? out.depth : Var<float>(), depth_term ? d_g : Var<float>());
        if (adversarial) {
            topo_->store().set_trainable("ds.", false);
            terms[losses::kAdvSuper] = losses::lsgan_generator(topo_->ds().forward(out.derained));
        }
        auto report = generator_step(terms);
        topo_->store().set_trainable("ds.", true);
        report.branch = "supervised";
        return report;
    }

    /// Discriminator step on fake labels vs derained real images, then the
    /// generator step (shared generator + re-rain generator) on the unsupervised terms.
    losses::LossReport unsupervised_step(const UnpairedBatch& batch) {
        const Var<float> y_r(batch.rainy);
        const Var<float> y_g(batch.fake_label);
        const auto out = topo_->gr().forward(y_r, true);
        const Var<float>& y_d = out.derained;
        const auto& w = weights_.lambda;
        const bool adversarial = w[losses::kAdvUnsuper] > 0.0;
        last_disc_loss_ = 0.0;
        if (adversarial) last_disc_loss_ = discriminator_step(topo_->dr(), "dr.", dr_names_, y_g, y_d);

        std::array<Var<float>, losses::kTermCount> terms;
        if (w[losses::kCycle] > 0.0) terms[losses::kCycle] = losses::cycle(gan::reconstruct_rain(y_d, topo_->gr_prime(), true), y_r);
        if (adversarial) {
            topo_->store().set_trainable("dr.", false);
            terms[losses::kAdvUnsuper] = losses::lsgan_generator(topo_->dr().forward(y_d));
        }
        if (w[losses::kDarkChannel] > 0.0) terms[losses::kDarkChannel] = losses::dark_channel_loss(y_d, cfg_.dark_channel_patch);
        if (w[losses::kTotalVariation] > 0.0) terms[losses::kTotalVariation] = losses::total_variation(y_d);
        if (w[losses::kPerceptual] > 0.0) {
            if (!extractor_) throw ConfigError("perceptual term enabled without a feature extractor");
            terms[losses::kPerceptual] = losses::perceptual(y_d, y_r, *extractor_);
        }
        bool any = false;
        for (const auto& t : terms) any = any || t.defined();
        losses::LossReport report;
        if (any) report = generator_step(terms);
        topo_->store().set_trainable("dr.", true);
        report.branch = "unsupervised";
        return report;
    }

private:
    static const TrainConfig& validated(const TrainConfig& cfg) {
        cfg.validate();
        return cfg;
    }

    double discriminator_step(const gan::Discriminator<float>& d, const std::string& prefix,
                              const std::vector<std::string>& names, const Var<float>& real, const Var<float>& fake) {
        const Var<float> loss = losses::lsgan_discriminator(d.forward(real), d.forward(detach(fake)));
        const double value = loss.item();
        if (!std::isfinite(value)) throw NumericAbort("non-finite discriminator loss (" + prefix + ")");
        topo_->store().zero_grad();
        backward(loss);
        disc_opt_.step(topo_->store(), names);
        return value;
    }

    losses::LossReport generator_step(const std::array<Var<float>, losses::kTermCount>& terms) {
        losses::LossReport report;
        const Var<float> total = losses::total_loss(terms, weights_, &report);
        if (!std::isfinite(report.total) || !std::isfinite(total.item())) {
            throw NumericAbort("non-finite generator loss");
        }
        topo_->store().zero_grad();
        backward(total);
        gen_opt_.step(topo_->store(), gen_names_);
        return report;
    }

    TrainConfig cfg_;
    losses::LossWeights weights_;
    losses::LossMask mask_;
    std::unique_ptr<Topology> topo_;
    Adam<float> gen_opt_;
    Adam<float> disc_opt_;
    std::vector<std::string> gen_names_;
    std::vector<std::string> ds_names_;
    std::vector<std::string> dr_names_;
    std::unique_ptr<losses::FeatureExtractor<float>> extractor_;
    double last_disc_loss_ = 0.0;
};

/// Branch of global step `step` under an a:b interleave.
inline bool is_supervised_step(long step, int a, int b) {
    if (b == 0) return true;
    if (a == 0) return false;
    return step % (a + b) < a;
}

inline nlohmann::json log_line(long step, const losses::LossReport& r, const TrainConfig& cfg, double disc_loss) {
    nlohmann::json terms = nlohmann::json::object();
    for (int i = 0; i < losses::kTermCount; ++i) {
        if (r.present[i]) terms[losses::term_names()[i]] = r.terms[i];
    }
    return {{"step", step},
            {"branch", r.branch},
            {"terms", terms},
            {"total", r.total},
            {"disc", disc_loss},
            {"lr", {{"gen", cfg.lr_gen}, {"disc", cfg.lr_disc}}}};
}

struct TrainResult {
    fs::path checkpoint;
    fs::path log;
    long steps = 0;
};

using Progress = std::function<void(long step, const losses::LossReport&)>;

/// Runs `cfg.max_steps` branch steps. Writes `<out>/train_log.jsonl` (one line per
/// step) and `<out>/checkpoint.bin` at start, every `checkpoint_every` steps and at
/// the end. A non-finite loss aborts with the last checkpoint left in place.
inline TrainResult train(const TrainConfig& cfg, const PairedDataset& paired, const UnpairedDataset* unpaired,
                         const fs::path& out_dir, const Progress& progress = {}) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory", out_dir.string());

    Trainer trainer(cfg);
    const bool unsupervised =
        unpaired != nullptr && trainer.mask().unsupervised() && cfg.branch_unsupervised > 0;
    const int ratio_b = unsupervised ? cfg.branch_unsupervised : 0;
    const int ratio_a = unsupervised ? cfg.branch_supervised : 1;
    BatchSource source(cfg, paired, unsupervised ? unpaired : nullptr);

    TrainResult result;
    result.checkpoint = out_dir / "checkpoint.bin";
    result.log = out_dir / "train_log.jsonl";
    const nlohmann::json echo = to_json(cfg);
    auto save = [&](long step) {
        ckpt::save(result.checkpoint, trainer.topology().store(), echo, {},
                   {{"step", step}, {"dataset", paired.id}, {"unpaired", unpaired ? unpaired->id : ""}});
    };

    std::ofstream log(result.log, std::ios::trunc);
    if (!log) throw IoError("cannot write training log", result.log.string());
    save(0);
    for (long step = 0; step < cfg.max_steps; ++step) {
        losses::LossReport report;
        if (is_supervised_step(step, ratio_a, ratio_b)) {
            report = trainer.supervised_step(source.next_paired());
        } else {
            report = trainer.unsupervised_step(source.next_unpaired());
        }
        log << log_line(step, report, cfg, trainer.last_disc_loss()).dump() << "\n";
        log.flush();
        if (progress) progress(step, report);
        if ((step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.max_steps) save(step + 1);
        result.steps = step + 1;
    }
    return result;
}

}  // namespace moregan::train
