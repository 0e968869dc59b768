#pragma once

#include <array>
#include <string>
#include <vector>

#include "moregan/core/layers.hpp"

namespace moregan::cfpn {

struct CfpnConfig {
    int width = 64;
    /// Number of chained fusion blocks; 0 gives a plain four-conv trunk.
    int cfab_count = 4;
    std::array<int, 3> dilations{1, 3, 5};
};

/// One fusion block: a 4x4 entry conv, three recursive dilated branches, a 1x1
/// fuse over their concatenation, and a 4x4 exit conv on (entry + fuse).
template <typename T>
struct Cfab {
    Conv2d<T> entry;
    std::array<std::array<Conv2d<T>, 3>, 3> branches;
    Conv2d<T> fuse;
    Conv2d<T> exit;

    Cfab() = default;
    Cfab(ParamStore<T>& store, const std::string& name, int width, const std::array<int, 3>& dilations,
         const InitSpec& init, Rng& rng) {
        entry = Conv2d<T>(store, name + ".entry", width, width, 4, ConvSpec::same(4), init, rng);
        for (int b = 0; b < 3; ++b) {
            for (int k = 0; k < 3; ++k) {
                branches[b][k] = Conv2d<T>(store, name + ".branch" + std::to_string(b) + ".conv" + std::to_string(k),
                                           width, width, 3, ConvSpec::same(3, dilations[k]), init, rng);
            }
        }
        fuse = Conv2d<T>(store, name + ".fuse", 3 * width, width, 1, ConvSpec{}, init, rng);
        exit = Conv2d<T>(store, name + ".exit", width, width, 4, ConvSpec::same(4), init, rng);
    }

    /// The dilated stack of branch b: conv + ReLU for each dilation.
    Var<T> branch(int b, const Var<T>& x) const {
        Var<T> y = x;
        for (const auto& conv : branches[b]) y = ops::relu(conv(y));
        return y;
    }

    /// Branch outputs for an already-computed entry map.
    std::vector<Var<T>> branch_outputs(const Var<T>& entry_map) const {
        std::vector<Var<T>> outs;
        Var<T> prev;
        for (int b = 0; b < 3; ++b) {
            const Var<T> in = b == 0 ? entry_map : ops::add(entry_map, prev);
            prev = branch(b, in);
            outs.push_back(prev);
        }
        return outs;
    }

    Var<T> operator()(const Var<T>& x) const {
        if (x.shape().c != entry.in_channels()) {
            throw InvalidArgument("cfab_forward: expected " + std::to_string(entry.in_channels()) + " channels, got " +
                                  x.shape().str());
        }
        const Var<T> fc = entry(x);
        const Var<T> fused = fuse(ops::concat_channels(branch_outputs(fc)));
        return exit(ops::add(fc, fused));
    }
};

/// Context feature trunk: 3x3 stem + ReLU followed by chained fusion blocks.
template <typename T>
class Cfpn {
public:
    Cfpn() = default;
    Cfpn(ParamStore<T>& store, const std::string& name, const CfpnConfig& cfg, const InitSpec& init, Rng& rng)
        : cfg_(cfg) {
        if (cfg.width <= 0 || cfg.cfab_count < 0) throw InvalidArgument("Cfpn: width must be positive and block count non-negative");
        stem_ = Conv2d<T>(store, name + ".stem", 3, cfg.width, 3, ConvSpec::same(3), init, rng);
        if (cfg.cfab_count == 0) {
            for (int i = 0; i < 3; ++i) {
                plain_.push_back(Conv2d<T>(store, name + ".plain" + std::to_string(i), cfg.width, cfg.width, 3,
                                           ConvSpec::same(3), init, rng));
            }
        }
        for (int i = 0; i < cfg.cfab_count; ++i) {
            blocks_.emplace_back(store, name + ".cfab" + std::to_string(i), cfg.width, cfg.dilations, init, rng);
        }
    }

    const CfpnConfig& config() const { return cfg_; }
    const std::vector<Cfab<T>>& blocks() const { return blocks_; }

    /// rainy [N,3,H,W] -> features [N,width,H,W].
    Var<T> forward(const Var<T>& rainy) const {
        if (rainy.shape().c != 3) throw InvalidArgument("cfpn_forward: expected 3 channels, got " + rainy.shape().str());
        Var<T> x = ops::relu(stem_(rainy));
        for (std::size_t i = 0; i < plain_.size(); ++i) {
            x = plain_[i](x);
            if (i + 1 < plain_.size()) x = ops::relu(x);
        }
        for (const auto& b : blocks_) x = b(x);
        return x;
    }

private:
    CfpnConfig cfg_;
    Conv2d<T> stem_;
    std::vector<Conv2d<T>> plain_;
    std::vector<Cfab<T>> blocks_;
};

}  // namespace moregan::cfpn
