#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "moregan/core/layers.hpp"

namespace moregan::losses {

/// Order of the seven loss terms everywhere (weights, reports, logs).
enum Term { kMultiTask = 0, kAdvSuper, kCycle, kAdvUnsuper, kDarkChannel, kTotalVariation, kPerceptual, kTermCount };

inline const std::array<std::string, kTermCount>& term_names() {
    static const std::array<std::string, kTermCount> names{"multi_task", "adv_super",      "cycle",     "adv_unsuper",
                                                          "dark_channel", "total_variation", "perceptual"};
    return names;
}

/// Mean absolute error of the derained image plus, when given, of the depth map.
template <typename T>
Var<T> multi_task(const Var<T>& derained, const Var<T>& clean, const Var<T>& depth, const Var<T>& depth_gt) {
    require_same_shape(derained.shape(), clean.shape(), "multi_task");
    Var<T> loss = ops::mean_abs_diff(derained, clean);
    if (depth.defined()) {
        if (!depth_gt.defined()) throw InvalidArgument("multi_task: predicted depth without a ground-truth depth");
        require_same_shape(depth.shape(), depth_gt.shape(), "multi_task depth");
        loss = ops::add(loss, ops::mean_abs_diff(depth, depth_gt));
    }
    return loss;
}

/// Least-squares generator loss: mean((D(fake) - 1)^2).
template <typename T>
Var<T> lsgan_generator(const Var<T>& fake_logits) {
    return ops::mean_sq_to(fake_logits, T(1));
}

/// Least-squares discriminator loss: mean((D(real) - 1)^2) + mean(D(fake)^2).
template <typename T>
Var<T> lsgan_discriminator(const Var<T>& real_logits, const Var<T>& fake_logits) {
    return ops::add(ops::mean_sq_to(real_logits, T(1)), ops::mean_sq_to(fake_logits, T(0)));
}

template <typename T>
Var<T> cycle(const Var<T>& reconstructed, const Var<T>& rainy) {
    require_same_shape(reconstructed.shape(), rainy.shape(), "cycle");
    return ops::mean_abs_diff(reconstructed, rainy);
}

/// Per-pixel minimum over the colour channels and a patch x patch window
/// (edge-replicated). [N,3,H,W] -> [N,1,H,W]; the gradient flows to the argmin.
template <typename T>
Var<T> dark_channel(const Var<T>& img, int patch) {
    const Shape s = img.shape();
    if (patch <= 0 || patch % 2 == 0) throw InvalidArgument("dark_channel: patch must be odd and positive, got " + std::to_string(patch));
    const int r = patch / 2;
    const std::size_t plane = s.plane();
    Tensor<T> out(Shape{s.n, 1, s.h, s.w});
    // source index (into img) of each output value
    auto src = std::make_shared<std::vector<std::size_t>>(out.size());
    std::vector<T> cmin(plane);
    std::vector<std::size_t> carg(plane);
    std::vector<T> rmin(plane);
    std::vector<std::size_t> rarg(plane);
    for (int n = 0; n < s.n; ++n) {
        for (std::size_t p = 0; p < plane; ++p) {
            cmin[p] = img.value().plane(n, 0)[p];
            carg[p] = img.value().offset(n, 0, 0, 0) + p;
            for (int c = 1; c < s.c; ++c) {
                const T v = img.value().plane(n, c)[p];
                if (v < cmin[p]) {
                    cmin[p] = v;
                    carg[p] = img.value().offset(n, c, 0, 0) + p;
                }
            }
        }
        // separable min filter: rows, then columns
        for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) {
                std::size_t best = static_cast<std::size_t>(y) * s.w + std::clamp(x - r, 0, s.w - 1);
                for (int dx = -r + 1; dx <= r; ++dx) {
                    const std::size_t q = static_cast<std::size_t>(y) * s.w + std::clamp(x + dx, 0, s.w - 1);
                    if (cmin[q] < cmin[best]) best = q;
                }
                rmin[static_cast<std::size_t>(y) * s.w + x] = cmin[best];
                rarg[static_cast<std::size_t>(y) * s.w + x] = carg[best];
            }
        }
        T* o = out.plane(n, 0);
        for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) {
                std::size_t best = static_cast<std::size_t>(std::clamp(y - r, 0, s.h - 1)) * s.w + x;
                for (int dy = -r + 1; dy <= r; ++dy) {
                    const std::size_t q = static_cast<std::size_t>(std::clamp(y + dy, 0, s.h - 1)) * s.w + x;
                    if (rmin[q] < rmin[best]) best = q;
                }
                const std::size_t i = static_cast<std::size_t>(y) * s.w + x;
                o[i] = rmin[best];
                (*src)[static_cast<std::size_t>(n) * plane + i] = rarg[best];
            }
        }
    }
    return Var<T>::make(std::move(out), {img}, [src](Node<T>& node) {
        if (auto* g = ops::detail::parent_grad(node, 0)) {
            for (std::size_t i = 0; i < src->size(); ++i) (*g)[(*src)[i]] += node.grad[i];
        }
    });
}

/// Mean dark channel of an image (non-negative images only).
template <typename T>
Var<T> dark_channel_loss(const Var<T>& img, int patch = 15) {
    return ops::mean(dark_channel(img, patch));
}

/// Anisotropic total variation: mean |horizontal differences| + mean |vertical differences|.
template <typename T>
Var<T> total_variation(const Var<T>& img) {
    const Shape s = img.shape();
    if (s.h < 2 || s.w < 2) throw InvalidArgument("total_variation: needs at least 2x2 pixels, got " + s.str());
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    const T nx = static_cast<T>(planes * s.h * (s.w - 1));
    const T ny = static_cast<T>(planes * (s.h - 1) * s.w);
    T sx = 0;
    T sy = 0;
    const T* v = img.value().data();
    for (std::size_t p = 0; p < planes; ++p) {
        const T* pl = v + p * s.plane();
        for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) {
                const T c = pl[y * s.w + x];
                if (x + 1 < s.w) sx += std::abs(pl[y * s.w + x + 1] - c);
                if (y + 1 < s.h) sy += std::abs(pl[(y + 1) * s.w + x] - c);
            }
        }
    }
    return ops::detail::scalar_var<T>(sx / nx + sy / ny, {img}, [s, planes, nx, ny](Node<T>& node) {
        auto* g = ops::detail::parent_grad(node, 0);
        if (!g) return;
        const T up = node.grad[0];
        const T* v = node.parents[0]->value.data();
        auto sgn = [](T d) { return d > 0 ? T(1) : (d < 0 ? T(-1) : T(0)); };
        for (std::size_t p = 0; p < planes; ++p) {
            const T* pl = v + p * s.plane();
            T* gp = g->data() + p * s.plane();
            for (int y = 0; y < s.h; ++y) {
                for (int x = 0; x < s.w; ++x) {
                    const int i = y * s.w + x;
                    if (x + 1 < s.w) {
                        const T d = sgn(pl[i + 1] - pl[i]) * up / nx;
                        gp[i + 1] += d;
                        gp[i] -= d;
                    }
                    if (y + 1 < s.h) {
                        const T d = sgn(pl[i + s.w] - pl[i]) * up / ny;
                        gp[i + s.w] += d;
                        gp[i] -= d;
                    }
                }
            }
        }
    });
}

/// Frozen feature extractor exposing named tap points.
template <typename T>
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::vector<std::string> tap_names() const = 0;
    virtual std::vector<Var<T>> taps(const Var<T>& image) const = 0;
};

/// Single tap returning the image itself.
template <typename T>
class IdentityExtractor : public FeatureExtractor<T> {
public:
    std::vector<std::string> tap_names() const override { return {"identity"}; }
    std::vector<Var<T>> taps(const Var<T>& image) const override { return {image}; }
};

/// VGG-16 convolutional topology (13 3x3 convs in blocks of 2,2,3,3,3 with
/// max pooling after each block) tapped after the second and fifth pools.
/// Weights are drawn once from a fixed seed and never trained.
template <typename T>
class ConvStackExtractor : public FeatureExtractor<T> {
public:
    explicit ConvStackExtractor(int base_width = 8, std::uint64_t seed = 0x5eed) {
        Rng rng(seed);
        const InitSpec init{InitSpec::Kind::Kaiming, 0.0};
        const std::array<int, 5> convs{2, 2, 3, 3, 3};
        const std::array<int, 5> mult{1, 2, 4, 8, 8};
        int in = 3;
        for (int b = 0; b < 5; ++b) {
            for (int k = 0; k < convs[b]; ++k) {
                const int out = base_width * mult[b];
                blocks_[b].push_back(Conv2d<T>(store_, "extractor.block" + std::to_string(b) + ".conv" + std::to_string(k),
                                               in, out, 3, ConvSpec::same(3), init, rng));
                in = out;
            }
        }
        store_.set_trainable("", false);
    }

    std::vector<std::string> tap_names() const override { return {"pool2", "pool5"}; }

    std::vector<Var<T>> taps(const Var<T>& image) const override {
        const Shape s = image.shape();
        if (s.c != 3 || s.h % 32 != 0 || s.w % 32 != 0) {
            throw InvalidArgument("perceptual extractor: expected [N,3,H,W] with H,W divisible by 32, got " + s.str());
        }
        std::vector<Var<T>> out;
        Var<T> x = image;
        for (int b = 0; b < 5; ++b) {
            for (const auto& conv : blocks_[b]) x = ops::relu(conv(x));
            x = ops::max_pool2(x);
            if (b == 1 || b == 4) out.push_back(x);
        }
        return out;
    }

private:
    ParamStore<T> store_;
    std::array<std::vector<Conv2d<T>>, 5> blocks_;
};

/// Sum over tap points of the mean squared feature difference.
template <typename T>
Var<T> perceptual(const Var<T>& a, const Var<T>& b, const FeatureExtractor<T>& extractor) {
    require_same_shape(a.shape(), b.shape(), "perceptual");
    const auto fa = extractor.taps(a);
    const auto fb = extractor.taps(b);
    const std::size_t expected = extractor.tap_names().size();
    if (fa.size() != expected || fb.size() != expected || expected == 0) {
        throw InvalidArgument("perceptual: extractor returned " + std::to_string(fa.size()) + " taps, declared " +
                              std::to_string(expected));
    }
    Var<T> total;
    for (std::size_t i = 0; i < fa.size(); ++i) {
        if (!(fa[i].shape() == fb[i].shape())) throw InvalidArgument("perceptual: tap " + std::to_string(i) + " shape mismatch");
        const Var<T> term = ops::mean_sq_diff(fa[i], fb[i]);
        total = total.defined() ? ops::add(total, term) : term;
    }
    return total;
}

struct LossWeights {
    std::array<double, kTermCount> lambda{1.0, 0.5, 1.0, 0.5, 0.5, 0.1, 0.5};

    void validate() const {
        for (int i = 0; i < kTermCount; ++i) {
            if (!(lambda[i] >= 0.0) || !std::isfinite(lambda[i])) {
                throw InvalidArgument("loss weight " + term_names()[i] + " must be finite and non-negative");
            }
        }
    }
};

/// Which terms a loss configuration enables. V0 keeps only the image L1 of the
/// multi-task term; V1 adds depth; V2..V7 each add one more term.
struct LossMask {
    std::array<bool, kTermCount> enabled{true, true, true, true, true, true, true};
    bool depth_term = true;

    /// True when any unsupervised-branch term is active.
    bool unsupervised() const {
        return enabled[kCycle] || enabled[kAdvUnsuper] || enabled[kDarkChannel] || enabled[kTotalVariation] ||
               enabled[kPerceptual];
    }

    static LossMask variant(const std::string& name) {
        static const std::array<std::string, 8> names{"V0", "V1", "V2", "V3", "V4", "V5", "V6", "V7"};
        int level = -1;
        for (int i = 0; i < 8; ++i) {
            if (names[i] == name) level = i;
        }
        if (level < 0) throw InvalidArgument("unknown loss configuration " + name);
        LossMask m;
        m.enabled.fill(false);
        m.enabled[kMultiTask] = true;
        m.depth_term = level >= 1;
        // V2 adds adv_super, V3 cycle, V4 adv_unsuper, V5 dark channel, V6 TV, V7 perceptual
        for (int t = 1; t <= level - 1 && t < kTermCount; ++t) m.enabled[t] = true;
        return m;
    }

    LossWeights apply(LossWeights w) const {
        for (int i = 0; i < kTermCount; ++i) {
            if (!enabled[i]) w.lambda[i] = 0.0;
        }
        return w;
    }
};

/// Per-term values of one step plus the weighted total.
struct LossReport {
    std::array<double, kTermCount> terms{};
    std::array<bool, kTermCount> present{};
    double total = 0.0;
    std::string branch;
};

/// Weighted sum of the terms that are present; returns the scalar to backpropagate.
template <typename T>
Var<T> total_loss(const std::array<Var<T>, kTermCount>& terms, const LossWeights& weights, LossReport* report = nullptr) {
    weights.validate();
    std::vector<Var<T>> parts;
    std::vector<T> ws;
    LossReport rep;
    for (int i = 0; i < kTermCount; ++i) {
        if (!terms[i].defined()) continue;
        if (terms[i].value().size() != 1) throw InvalidArgument("total_loss: term " + term_names()[i] + " is not a scalar");
        rep.present[i] = true;
        rep.terms[i] = static_cast<double>(terms[i].item());
        rep.total += weights.lambda[i] * rep.terms[i];
        parts.push_back(terms[i]);
        ws.push_back(static_cast<T>(weights.lambda[i]));
    }
    if (parts.empty()) throw InvalidArgument("total_loss: no terms");
    if (report) *report = rep;
    return ops::weighted_sum(parts, ws);
}

}  // namespace moregan::losses
