#pragma once

#include <algorithm>
#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "moregan/adpn.hpp"
#include "moregan/cfpn.hpp"
#include "moregan/pdnl.hpp"

namespace moregan::gan {

/// How predicted depth enters the derain path.
enum class Fusion {
    None,      // no depth branch
    Multiply,  // features * depth
    NonLocal,  // non-local block over every downsampled position
    Pyramid,   // depth-guided pyramid non-local block
};

struct GeneratorConfig {
    adpn::AdpnConfig adpn;
    cfpn::CfpnConfig cfpn;
    pdnl::PdnlConfig pdnl;
    Fusion fusion = Fusion::Pyramid;
    InitSpec init;
    /// Zero the last head conv so an untrained generator returns its input.
    bool identity_head = true;

    bool uses_depth() const { return fusion != Fusion::None; }
};

inline const std::vector<std::string>& variant_names() {
    static const std::vector<std::string> names{"M-A", "M-B", "M-C", "M-D", "M-E", "Ours"};
    return names;
}

/// Applies an ablation variant to a base configuration (widths are kept).
inline GeneratorConfig apply_variant(GeneratorConfig cfg, const std::string& name) {
    if (name == "M-A") {
        cfg.cfpn.cfab_count = 0;
        cfg.fusion = Fusion::None;
    } else if (name == "M-B") {
        cfg.fusion = Fusion::None;
    } else if (name == "M-C") {
        cfg.adpn.attention = false;
        cfg.fusion = Fusion::Multiply;
    } else if (name == "M-D") {
        cfg.adpn.attention = true;
        cfg.fusion = Fusion::Multiply;
    } else if (name == "M-E") {
        cfg.adpn.attention = true;
        cfg.fusion = Fusion::NonLocal;
        cfg.pdnl.pool.dense = true;
    } else if (name == "Ours") {
        cfg.adpn.attention = true;
        cfg.fusion = Fusion::Pyramid;
        cfg.pdnl.pool.dense = false;
    } else {
        throw InvalidArgument("unknown variant " + name);
    }
    if (cfg.cfpn.cfab_count == 0 && name != "M-A") cfg.cfpn.cfab_count = 4;
    return cfg;
}

template <typename T>
struct GeneratorOutput {
    Var<T> derained;  // [N,3,H,W] in [0,1]
    Var<T> depth;     // [N,1,H,W]; undefined when the variant has no depth branch
};

/// Rain-to-clean generator: optional depth branch, context trunk, fusion and a
/// residual head whose output is added to the input and clamped to [0,1].
/// Parameters live under `adpn_ns`, `cfpn_ns`, `pdnl_ns` and `head_ns`.
template <typename T>
class Generator {
public:
    struct Namespaces {
        std::string adpn = "adpn";
        std::string cfpn = "cfpn";
        std::string pdnl = "pdnl";
        std::string head = "gen";
    };

    Generator() = default;
    Generator(ParamStore<T>& store, const GeneratorConfig& cfg, Rng& rng, const Namespaces& ns = {}) : cfg_(cfg) {
        if (cfg.uses_depth()) adpn_ = adpn::Adpn<T>(store, ns.adpn, cfg.adpn, cfg.init, rng);
        cfpn_ = cfpn::Cfpn<T>(store, ns.cfpn, cfg.cfpn, cfg.init, rng);
        if (cfg.fusion == Fusion::NonLocal || cfg.fusion == Fusion::Pyramid) {
            pdnl_ = pdnl::PdnlParams<T>(store, ns.pdnl, cfg.cfpn.width, cfg.pdnl.downsample, cfg.init, rng);
        }
        head1_ = Conv2d<T>(store, ns.head + ".head0", cfg.cfpn.width, cfg.cfpn.width, 3, ConvSpec::same(3), cfg.init, rng);
        head2_ = Conv2d<T>(store, ns.head + ".head1", cfg.cfpn.width, 3, 3, ConvSpec::same(3), cfg.init, rng);
        if (cfg.identity_head) zero_conv(head2_);
    }

    const GeneratorConfig& config() const { return cfg_; }
    const adpn::Adpn<T>& depth_net() const { return adpn_; }
    const pdnl::PdnlParams<T>& pdnl_params() const { return pdnl_; }
    Conv2d<T>& head_out() { return head2_; }

    /// Spatial dims accepted by this generator.
    int divisor() const { return cfg_.uses_depth() ? 16 : 1; }

    /// Smallest accepted height/width: the coarsest pyramid bin needs one
    /// downsampled cell per bin row.
    int min_side() const {
        int m = divisor();
        if (cfg_.fusion == Fusion::Pyramid) {
            for (int b : cfg_.pdnl.pool.bin_sizes) m = std::max(m, b * cfg_.pdnl.downsample);
        }
        return (m + divisor() - 1) / divisor() * divisor();
    }

    GeneratorOutput<T> forward(const Var<T>& rainy, bool training) const {
        const Shape s = rainy.shape();
        if (s.c != 3) throw InvalidArgument("generator: expected 3 channels, got " + s.str());
        if (s.h % divisor() != 0 || s.w % divisor() != 0) {
            throw InvalidArgument("generator: spatial dims " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                                  " must be divisible by " + std::to_string(divisor()));
        }
        GeneratorOutput<T> out;
        Var<T> feats = cfpn_.forward(rainy);
        if (cfg_.uses_depth()) out.depth = adpn_.forward(rainy, training);
        switch (cfg_.fusion) {
            case Fusion::None:
                break;
            case Fusion::Multiply:
                feats = ops::mul_broadcast_channels(feats, out.depth);
                break;
            case Fusion::NonLocal:
            case Fusion::Pyramid:
                feats = pdnl::pdnl_forward(feats, out.depth, pdnl_, cfg_.pdnl);
                break;
        }
        const Var<T> residual = head2_(ops::relu(head1_(feats)));
        out.derained = ops::clamp(ops::add(rainy, residual), T(0), T(1));
        return out;
    }

private:
    GeneratorConfig cfg_;
    adpn::Adpn<T> adpn_;
    cfpn::Cfpn<T> cfpn_;
    pdnl::PdnlParams<T> pdnl_;
    Conv2d<T> head1_;
    Conv2d<T> head2_;
};

struct DiscriminatorConfig {
    std::array<int, 4> channels{64, 128, 256, 512};
};

/// Patch discriminator: five 4x4 convs with strides 2,2,2,1,1, instance norm on
/// layers 2-4, ReLU on layers 1-4, raw per-patch logits at 1/8 resolution.
template <typename T>
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(ParamStore<T>& store, const std::string& name, const DiscriminatorConfig& cfg, const InitSpec& init,
                  Rng& rng) {
        const std::array<int, 5> outs{cfg.channels[0], cfg.channels[1], cfg.channels[2], cfg.channels[3], 1};
        int in = 3;
        for (int i = 0; i < 5; ++i) {
            const ConvSpec spec = i < 3 ? ConvSpec::strided(2, 1) : ConvSpec::same(4);
            convs_[i] = Conv2d<T>(store, name + ".conv" + std::to_string(i), in, outs[i], 4, spec, init, rng);
            if (i >= 1 && i <= 3) norms_[i] = InstanceNorm2d<T>(store, name + ".norm" + std::to_string(i), outs[i]);
            in = outs[i];
        }
    }

    Var<T> forward(const Var<T>& image) const {
        const Shape s = image.shape();
        if (s.c != 3) throw InvalidArgument("discriminator: expected 3 channels, got " + s.str());
        if (s.h % 8 != 0 || s.w % 8 != 0) {
            throw InvalidArgument("discriminator: spatial dims " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                                  " must be divisible by 8");
        }
        Var<T> x = image;
        for (int i = 0; i < 5; ++i) {
            x = convs_[i](x);
            if (i >= 1 && i <= 3) x = norms_[i](x);
            if (i < 4) x = ops::relu(x);
        }
        return x;
    }

private:
    std::array<Conv2d<T>, 5> convs_;
    std::array<InstanceNorm2d<T>, 5> norms_;
};

struct TopologyConfig {
    GeneratorConfig generator;
    DiscriminatorConfig discriminator;
    std::uint64_t seed = 0;
};

/// The semi-supervised GAN: one derain generator shared by the supervised and
/// unsupervised branches, a rain-reconstruction generator, and two discriminators.
/// Checkpoint namespaces: gen/adpn/cfpn/pdnl (shared generator), genprime, ds, dr.
template <typename T>
class GanTopology {
public:
    explicit GanTopology(const TopologyConfig& cfg) : cfg_(cfg) {
        Rng rng(cfg.seed);
        gen_ = Generator<T>(store_, cfg.generator, rng);
        typename Generator<T>::Namespaces prime;
        prime.adpn = "genprime.adpn";
        prime.cfpn = "genprime.cfpn";
        prime.pdnl = "genprime.pdnl";
        prime.head = "genprime.gen";
        gen_prime_ = Generator<T>(store_, cfg.generator, rng, prime);
        ds_ = Discriminator<T>(store_, "ds", cfg.discriminator, cfg.generator.init, rng);
        dr_ = Discriminator<T>(store_, "dr", cfg.discriminator, cfg.generator.init, rng);
    }

    GanTopology(const GanTopology&) = delete;
    GanTopology& operator=(const GanTopology&) = delete;

    const TopologyConfig& config() const { return cfg_; }
    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }

    /// Supervised-branch generator.
    Generator<T>& gs() { return gen_; }
    /// Unsupervised-branch generator; the same object as gs().
    Generator<T>& gr() { return gen_; }
    Generator<T>& gr_prime() { return gen_prime_; }
    const Discriminator<T>& ds() const { return ds_; }
    const Discriminator<T>& dr() const { return dr_; }

    /// Parameter prefixes of the shared derain generator.
    static std::vector<std::string> generator_prefixes() { return {"gen.", "adpn.", "cfpn.", "pdnl."}; }
    static std::vector<std::string> generator_side_prefixes() {
        return {"gen.", "adpn.", "cfpn.", "pdnl.", "genprime."};
    }
    static std::vector<std::string> discriminator_prefixes() { return {"ds.", "dr."}; }

    std::vector<std::string> names_under(const std::vector<std::string>& prefixes) const {
        std::vector<std::string> out;
        for (const auto& p : prefixes) {
            auto n = store_.names(p);
            out.insert(out.end(), n.begin(), n.end());
        }
        return out;
    }

private:
    TopologyConfig cfg_;
    ParamStore<T> store_;
    Generator<T> gen_;
    Generator<T> gen_prime_;
    Discriminator<T> ds_;
    Discriminator<T> dr_;
};

/// Re-synthesizes a rainy image from a derained one with the reconstruction generator.
template <typename T>
Var<T> reconstruct_rain(const Var<T>& derained, const Generator<T>& gr_prime, bool training) {
    return gr_prime.forward(derained, training).derained;
}

}  // namespace moregan::gan
