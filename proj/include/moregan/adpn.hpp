#pragma once

#include <array>
#include <cmath>
#include <string>

#include "moregan/core/layers.hpp"

namespace moregan::adpn {

/// Encoder widths per stride-2 stage; the decoder mirrors them.
struct AdpnConfig {
    std::array<int, 4> channels{32, 64, 128, 256};
    bool attention = true;
    /// Adds 1/sqrt(C) to the attention logits (off by default).
    bool scaled_attention = false;
};

/// Query/key/value projections, each [1,1,C,C].
template <typename T>
struct AttentionParams {
    Var<T> w_q;
    Var<T> w_k;
    Var<T> w_v;

    AttentionParams() = default;
    AttentionParams(ParamStore<T>& store, const std::string& name, int channels, const InitSpec& init, Rng& rng) {
        const Shape s{1, 1, channels, channels};
        w_q = store.create(name + ".w_q", init_kernel<T>(s, init, rng));
        w_k = store.create(name + ".w_k", init_kernel<T>(s, init, rng));
        w_v = store.create(name + ".w_v", init_kernel<T>(s, init, rng));
    }
};

template <typename T>
struct AttentionResult {
    Var<T> output;   // [N,C,H,W]
    Var<T> weights;  // [N,1,HW,HW], row i = softmax over keys for query i
};

/// out_i = sum_j softmax_j(q_i . k_j) v_j + f_i over the H*W tokens of `features`.
template <typename T>
AttentionResult<T> self_attention_detailed(const Var<T>& features, const AttentionParams<T>& p, bool scaled = false) {
    const Shape s = features.shape();
    for (const Var<T>* w : {&p.w_q, &p.w_k, &p.w_v}) {
        if (w->shape().h != s.c) {
            throw InvalidArgument("self_attention: projection " + w->shape().str() + " does not accept " +
                                  std::to_string(s.c) + " channels");
        }
    }
    if (p.w_v.shape().w != s.c) {
        throw InvalidArgument("self_attention: value width " + std::to_string(p.w_v.shape().w) +
                              " does not match residual channels " + std::to_string(s.c));
    }
    if (p.w_q.shape().w != p.w_k.shape().w) throw InvalidArgument("self_attention: query/key widths differ");
    const Var<T> tokens = ops::to_tokens(features);
    const Var<T> q = ops::matmul(tokens, p.w_q);
    const Var<T> k = ops::matmul(tokens, p.w_k);
    const Var<T> v = ops::matmul(tokens, p.w_v);
    Var<T> logits = ops::matmul(q, k, true);
    if (scaled) logits = ops::scale(logits, T(1) / std::sqrt(static_cast<T>(p.w_q.shape().w)));
    const Var<T> attn = ops::softmax_rows(logits);
    const Var<T> mixed = ops::add(ops::matmul(attn, v), tokens);
    return {ops::from_tokens(mixed, s.h, s.w), attn};
}

template <typename T>
Var<T> self_attention(const Var<T>& features, const AttentionParams<T>& p, bool scaled = false) {
    return self_attention_detailed(features, p, scaled).output;
}

/// Auto-encoder depth predictor with skip connections and bottleneck attention.
/// Encoder: four stride-2 3x3 convs with batch norm + ReLU. Decoder: nearest x2
/// upsample, 3x3 conv, batch norm + ReLU, then concat with the matching encoder
/// map (the input image at full resolution) and a 1x1 conv back to width.
template <typename T>
class Adpn {
public:
    Adpn() = default;
    Adpn(ParamStore<T>& store, const std::string& name, const AdpnConfig& cfg, const InitSpec& init, Rng& rng)
        : cfg_(cfg) {
        int in = 3;
        for (int i = 0; i < 4; ++i) {
            const std::string p = name + ".enc" + std::to_string(i);
            enc_[i] = Conv2d<T>(store, p + ".conv", in, cfg.channels[i], 3, ConvSpec::strided(2, 1), init, rng);
            enc_bn_[i] = BatchNorm2d<T>(store, p + ".bn", cfg.channels[i]);
            in = cfg.channels[i];
        }
        if (cfg.attention) attn_ = AttentionParams<T>(store, name + ".attn", cfg.channels[3], init, rng);
        for (int i = 3; i >= 0; --i) {
            // decoder stage i lands on the resolution of encoder stage i-1
            const int out = i > 0 ? cfg.channels[i - 1] : cfg.channels[0];
            const int skip = i > 0 ? cfg.channels[i - 1] : 3;
            const std::string p = name + ".dec" + std::to_string(i);
            dec_[i] = Conv2d<T>(store, p + ".conv", cfg.channels[i], out, 3, ConvSpec::same(3), init, rng);
            dec_bn_[i] = BatchNorm2d<T>(store, p + ".bn", out);
            fuse_[i] = Conv2d<T>(store, p + ".skip", out + skip, out, 1, ConvSpec{}, init, rng);
        }
        head_ = Conv2d<T>(store, name + ".head", cfg.channels[0], 1, 1, ConvSpec{}, init, rng);
    }

    const AdpnConfig& config() const { return cfg_; }
    const AttentionParams<T>& attention() const { return attn_; }

    /// rainy [N,3,H,W] -> depth [N,1,H,W] in (0,1).
    Var<T> forward(const Var<T>& rainy, bool training) const {
        const Shape s = rainy.shape();
        if (s.c != 3) throw InvalidArgument("predict_depth: expected 3 channels, got " + s.str());
        if (s.h % 16 != 0 || s.w % 16 != 0) {
            throw InvalidArgument("predict_depth: spatial dims " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                                  " must be divisible by 16");
        }
        std::array<Var<T>, 4> skips;
        Var<T> x = rainy;
        for (int i = 0; i < 4; ++i) {
            x = ops::relu(enc_bn_[i](enc_[i](x), training));
            skips[i] = x;
        }
        if (cfg_.attention) x = self_attention(x, attn_, cfg_.scaled_attention);
        for (int i = 3; i >= 0; --i) {
            x = ops::relu(dec_bn_[i](dec_[i](ops::upsample_nearest(x, 2)), training));
            const Var<T>& skip = i > 0 ? skips[i - 1] : rainy;
            x = fuse_[i](ops::concat_channels<T>({x, skip}));
        }
        return ops::sigmoid(head_(x));
    }

private:
    AdpnConfig cfg_;
    std::array<Conv2d<T>, 4> enc_;
    std::array<BatchNorm2d<T>, 4> enc_bn_;
    AttentionParams<T> attn_;
    std::array<Conv2d<T>, 4> dec_;
    std::array<BatchNorm2d<T>, 4> dec_bn_;
    std::array<Conv2d<T>, 4> fuse_;
    Conv2d<T> head_;
};

}  // namespace moregan::adpn
