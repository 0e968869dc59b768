#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "moregan/core/layers.hpp"
#include "moregan/core/matrix.hpp"

namespace moregan::pdnl {

/// How two depths are compared.
/// Symmetric: min(d_i/(d_j+eps), d_j/(d_i+eps)), 1 for equal depths, small for distant pairs.
/// Literal:   min(d_i/(d_i+eps), d_j/(d_j+eps)), nearly 1 everywhere (kept for comparison).
enum class DepthRelation { Symmetric, Literal };

/// Key sampling for the non-local block. Dense uses every downsampled position
/// with uniform weight (a plain non-local block); Pyramid pools bins.
struct PyramidPoolSpec {
    std::vector<int> bin_sizes{1, 2, 4, 8};
    bool dense = false;

    /// Number of keys for a downsampled h x w map.
    std::int64_t key_count(int h, int w) const {
        if (dense) return static_cast<std::int64_t>(h) * w;
        std::int64_t l = 0;
        for (int b : bin_sizes) l += static_cast<std::int64_t>(b) * b;
        return l;
    }
};

enum class Upsample { Bilinear, Nearest };

struct PdnlConfig {
    PyramidPoolSpec pool;
    DepthRelation relation = DepthRelation::Symmetric;
    Upsample upsample = Upsample::Bilinear;
    /// When false the depth relation is treated as all ones.
    bool depth_guidance = true;
    double eps = 1e-6;
    int downsample = 4;
};

/// Pairwise depth relation between queries q [N,1,T,1] and keys k [N,1,L,1] -> [N,1,T,L].
template <typename T>
Var<T> relation_matrix(const Var<T>& q, const Var<T>& k, DepthRelation kind, double eps) {
    const Shape qs = q.shape();
    const Shape ks = k.shape();
    if (qs.c != 1 || qs.w != 1 || ks.c != 1 || ks.w != 1 || qs.n != ks.n) {
        throw InvalidArgument("depth_relation: expected column vectors, got " + qs.str() + " and " + ks.str());
    }
    const int tq = qs.h;
    const int tk = ks.h;
    const T e = static_cast<T>(eps);
    Tensor<T> out(Shape{qs.n, 1, tq, tk});
    for (int n = 0; n < qs.n; ++n) {
        const T* qv = q.value().plane(n, 0);
        const T* kv = k.value().plane(n, 0);
        T* o = out.plane(n, 0);
        for (int i = 0; i < tq; ++i) {
            for (int j = 0; j < tk; ++j) {
                const T a = qv[i];
                const T b = kv[j];
                o[static_cast<std::size_t>(i) * tk + j] = kind == DepthRelation::Symmetric
                                                              ? std::min(a / (b + e), b / (a + e))
                                                              : std::min(a / (a + e), b / (b + e));
            }
        }
    }
    return Var<T>::make(std::move(out), {q, k}, [qs, tq, tk, kind, e](Node<T>& node) {
        auto* gq = ops::detail::parent_grad(node, 0);
        auto* gk = ops::detail::parent_grad(node, 1);
        const auto& qv_all = node.parents[0]->value;
        const auto& kv_all = node.parents[1]->value;
        for (int n = 0; n < qs.n; ++n) {
            const T* qv = qv_all.plane(n, 0);
            const T* kv = kv_all.plane(n, 0);
            const T* up = node.grad.plane(n, 0);
            for (int i = 0; i < tq; ++i) {
                for (int j = 0; j < tk; ++j) {
                    const T u = up[static_cast<std::size_t>(i) * tk + j];
                    if (u == T(0)) continue;
                    const T a = qv[i];
                    const T b = kv[j];
                    T da = 0;
                    T db = 0;
                    if (kind == DepthRelation::Symmetric) {
                        if (a / (b + e) <= b / (a + e)) {
                            da = T(1) / (b + e);
                            db = -a / ((b + e) * (b + e));
                        } else {
                            db = T(1) / (a + e);
                            da = -b / ((a + e) * (a + e));
                        }
                    } else {
                        if (a / (a + e) <= b / (b + e)) {
                            da = e / ((a + e) * (a + e));
                        } else {
                            db = e / ((b + e) * (b + e));
                        }
                    }
                    if (gq) gq->plane(n, 0)[i] += u * da;
                    if (gk) gk->plane(n, 0)[j] += u * db;
                }
            }
        }
    });
}

/// Parameters of one pyramid non-local block (all under `<name>.`).
template <typename T>
struct PdnlParams {
    Conv2d<T> entry;      // 4x4 stride-4 downsampling conv
    Conv2d<T> attention;  // 1x1 conv producing the pooling logits
    Var<T> w_theta, b_theta;
    Var<T> w_phi, b_phi;
    Var<T> w_g, b_g;

    PdnlParams() = default;
    PdnlParams(ParamStore<T>& store, const std::string& name, int channels, int downsample, const InitSpec& init,
               Rng& rng) {
        entry = Conv2d<T>(store, name + ".entry", channels, channels, downsample, ConvSpec::strided(downsample, 0),
                          init, rng);
        attention = Conv2d<T>(store, name + ".pool_attention", channels, 1, 1, ConvSpec{}, init, rng);
        const Shape ws{1, 1, channels, channels};
        const Shape bs{1, 1, 1, channels};
        w_theta = store.create(name + ".theta.weight", init_kernel<T>(ws, init, rng));
        b_theta = store.create(name + ".theta.bias", Tensor<T>(bs, T(0)));
        w_phi = store.create(name + ".phi.weight", init_kernel<T>(ws, init, rng));
        b_phi = store.create(name + ".phi.bias", Tensor<T>(bs, T(0)));
        w_g = store.create(name + ".g.weight", init_kernel<T>(ws, init, rng));
        b_g = store.create(name + ".g.bias", Tensor<T>(bs, T(0)));
    }

    int channels() const { return entry.out_channels(); }
};

template <typename T>
Var<T> linear_rows(const Var<T>& rows, const Var<T>& w, const Var<T>& b) {
    return ops::add_row_bias(ops::matmul(rows, w), b);
}

/// Pools a downsampled map into pyramid keys. x [N,C,h,w] -> [N,1,L,C].
/// Dense sampling returns every position as its own key.
template <typename T>
Var<T> pyramid_pool(const Var<T>& x, const Var<T>& logits, const PyramidPoolSpec& spec) {
    if (spec.dense) return ops::to_tokens(x);
    return ops::pyramid_pool(x, logits, spec.bin_sizes);
}

/// Row-normalized feature affinity softmax(theta(q) . phi(k)) -> [N,1,T,L].
template <typename T>
Var<T> feature_relation(const Var<T>& query_rows, const Var<T>& key_rows, const PdnlParams<T>& p) {
    const Var<T> theta = linear_rows(query_rows, p.w_theta, p.b_theta);
    const Var<T> phi = linear_rows(key_rows, p.w_phi, p.b_phi);
    return ops::softmax_rows(ops::matmul(theta, phi, true));
}

template <typename T>
struct PdnlTrace {
    Var<T> output;          // [N,C,H,W]
    Var<T> feature_rel;     // [N,1,T,L]
    Var<T> depth_rel;       // [N,1,T,L] (empty without depth guidance)
    Var<T> fused;           // [N,1,T,L]
    Var<T> keys;            // [N,1,L,C]
};

/// Depth-guided pyramid non-local block. features [N,C,H,W], depth [N,1,H,W].
template <typename T>
PdnlTrace<T> pdnl_forward_traced(const Var<T>& features, const Var<T>& depth, const PdnlParams<T>& p,
                                 const PdnlConfig& cfg) {
    const Shape s = features.shape();
    const int r = cfg.downsample;
    if (s.c != p.channels()) {
        throw InvalidArgument("pdnl_forward: expected " + std::to_string(p.channels()) + " channels, got " + s.str());
    }
    if (s.h % r != 0 || s.w % r != 0) {
        throw InvalidArgument("pdnl_forward: spatial dims " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                              " must be divisible by " + std::to_string(r));
    }
    if (cfg.depth_guidance) {
        const Shape ds = depth.shape();
        if (ds.n != s.n || ds.c != 1 || ds.h != s.h || ds.w != s.w) {
            throw InvalidArgument("pdnl_forward: depth " + ds.str() + " does not match features " + s.str());
        }
    }
    const int h = s.h / r;
    const int w = s.w / r;
    if (!cfg.pool.dense) {
        for (int b : cfg.pool.bin_sizes) {
            if (b > h || b > w) {
                throw InvalidArgument("pdnl_forward: bin size " + std::to_string(b) + " exceeds downsampled map " +
                                      std::to_string(h) + "x" + std::to_string(w));
            }
        }
    }

    PdnlTrace<T> tr;
    const Var<T> fds = p.entry(features);
    const Var<T> queries = ops::to_tokens(fds);
    Var<T> logits;
    if (!cfg.pool.dense) logits = p.attention(fds);
    tr.keys = pyramid_pool(fds, logits, cfg.pool);
    tr.feature_rel = feature_relation(queries, tr.keys, p);

    Var<T> weights = tr.feature_rel;
    if (cfg.depth_guidance) {
        const Var<T> dds = ops::strided_sample(depth, r);
        const Var<T> dq = ops::to_tokens(dds);
        const Var<T> dk = pyramid_pool(dds, logits, cfg.pool);
        tr.depth_rel = relation_matrix(dq, dk, cfg.relation, cfg.eps);
        weights = ops::mul(tr.depth_rel, tr.feature_rel);
    }
    tr.fused = ops::softmax_rows(weights);

    const Var<T> g = linear_rows(tr.keys, p.w_g, p.b_g);
    const Var<T> context = ops::from_tokens(ops::matmul(tr.fused, g), h, w);
    const Var<T> up = cfg.upsample == Upsample::Bilinear ? ops::resize_bilinear(context, s.h, s.w)
                                                         : ops::upsample_nearest(context, r);
    tr.output = ops::add(up, features);
    return tr;
}

template <typename T>
Var<T> pdnl_forward(const Var<T>& features, const Var<T>& depth, const PdnlParams<T>& p, const PdnlConfig& cfg) {
    return pdnl_forward_traced(features, depth, p, cfg).output;
}

/// Depth relation of a full-resolution depth map under the block's sampling.
template <typename T>
Var<T> depth_relation(const Var<T>& depth, const Var<T>& logits, const PdnlConfig& cfg) {
    const Var<T> dds = ops::strided_sample(depth, cfg.downsample);
    return relation_matrix(ops::to_tokens(dds), pyramid_pool(dds, logits, cfg.pool), cfg.relation, cfg.eps);
}

struct InteractionCount {
    std::int64_t dense = 0;
    std::int64_t pyramid = 0;
};

/// Multiply-accumulate count of the affinity product: N^2 C for a full-resolution
/// non-local block versus (N/r^2) L C for the pyramid block.
inline InteractionCount interaction_count(int h, int w, int c, const PyramidPoolSpec& spec, int downsample = 4) {
    if (h <= 0 || w <= 0 || c <= 0) throw InvalidArgument("interaction_count: dimensions must be positive");
    const std::int64_t n = static_cast<std::int64_t>(h) * w;
    const int hd = h / downsample;
    const int wd = w / downsample;
    return {n * n * c, static_cast<std::int64_t>(hd) * wd * spec.key_count(hd, wd) * c};
}

/// Plain full-resolution non-local block (no downsampling, no depth) sharing the
/// projection weights of `p`. Used for cost comparisons.
template <typename T>
Var<T> dense_nonlocal(const Var<T>& features, const PdnlParams<T>& p) {
    const Shape s = features.shape();
    const Var<T> rows = ops::to_tokens(features);
    const Var<T> rel = feature_relation(rows, rows, p);
    const Var<T> g = linear_rows(rows, p.w_g, p.b_g);
    return ops::add(ops::from_tokens(ops::matmul(rel, g), s.h, s.w), features);
}

}  // namespace moregan::pdnl
