#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moregan/core/optim.hpp"
#include "moregan/gan.hpp"
#include "moregan/losses.hpp"
#include "moregan/scenes.hpp"
#include "dense_reference.hpp"
#include "test_util.hpp"

using namespace moregan;
using moregan::testing::dense_block_reference;
using moregan::testing::gradient_error;
using moregan::testing::jitter_biases;
using moregan::testing::param_gradient_error;
using moregan::testing::project;
using moregan::testing::random_tensor;

namespace {

InitSpec wide_init() { return InitSpec{InitSpec::Kind::Normal, 0.3}; }

adpn::AttentionParams<double> attention_from(const Var<double>& q, const Var<double>& k, const Var<double>& v) {
    adpn::AttentionParams<double> p;
    p.w_q = q;
    p.w_k = k;
    p.w_v = v;
    return p;
}

Var<double> zeros_like(Shape s) { return Var<double>(Tensor<double>(s, 0.0)); }

gan::GeneratorConfig desk_generator() {
    gan::GeneratorConfig g;
    g.adpn.channels = {8, 16, 32, 64};
    g.cfpn.width = 16;
    return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// adpn

TEST(SelfAttention, ZeroQueryGivesUniformWeights) {
    Rng rng(1);
    const Var<double> f(random_tensor(Shape{1, 4, 3, 3}, rng));
    const auto wv = Var<double>(random_tensor(Shape{1, 1, 4, 4}, rng));
    const auto r = adpn::self_attention_detailed(
        f, attention_from(zeros_like(Shape{1, 1, 4, 4}), Var<double>(random_tensor(Shape{1, 1, 4, 4}, rng)), wv));
    for (double v : r.weights.value().values()) EXPECT_NEAR(v, 1.0 / 9.0, 1e-12);
    const auto v = ops::matmul(ops::to_tokens(f), wv);
    for (int c = 0; c < 4; ++c) {
        double mean_v = 0.0;
        for (int j = 0; j < 9; ++j) mean_v += v.value().at(0, 0, j, c) / 9.0;
        for (int i = 0; i < 9; ++i) {
            EXPECT_NEAR(r.output.value().at(0, c, i / 3, i % 3), mean_v + f.value().at(0, c, i / 3, i % 3), 1e-12);
        }
    }
}

TEST(SelfAttention, ZeroValueIsExactIdentity) {
    Rng rng(2);
    const Var<double> f(random_tensor(Shape{2, 4, 4, 4}, rng));
    const auto out = adpn::self_attention(f, attention_from(Var<double>(random_tensor(Shape{1, 1, 4, 4}, rng)),
                                                            Var<double>(random_tensor(Shape{1, 1, 4, 4}, rng)),
                                                            zeros_like(Shape{1, 1, 4, 4})));
    EXPECT_EQ(out.value().storage(), f.value().storage());
}

TEST(SelfAttention, SingleTokenAddsItsValue) {
    Rng rng(3);
    const Var<double> f(random_tensor(Shape{1, 3, 1, 1}, rng));
    const Var<double> wv(random_tensor(Shape{1, 1, 3, 3}, rng));
    const auto out = adpn::self_attention(
        f, attention_from(Var<double>(random_tensor(Shape{1, 1, 3, 3}, rng)), Var<double>(random_tensor(Shape{1, 1, 3, 3}, rng)), wv));
    for (int c = 0; c < 3; ++c) {
        double v = 0.0;
        for (int i = 0; i < 3; ++i) v += f.value()[i] * wv.value().at(0, 0, i, c);
        EXPECT_NEAR(out.value()[c], v + f.value()[c], 1e-12);
    }
}

TEST(SelfAttention, RowsSumToOneAndPermutationEquivariance) {
    Rng rng(4);
    const Tensor<double> x = random_tensor(Shape{1, 4, 2, 4}, rng);
    const auto p = attention_from(Var<double>(random_tensor(Shape{1, 1, 4, 4}, rng)), Var<double>(random_tensor(Shape{1, 1, 4, 4}, rng)),
                                  Var<double>(random_tensor(Shape{1, 1, 4, 4}, rng)));
    const auto r = adpn::self_attention_detailed(Var<double>(x), p);
    for (int i = 0; i < 8; ++i) {
        double s = 0.0;
        for (int j = 0; j < 8; ++j) s += r.weights.value().at(0, 0, i, j);
        EXPECT_NEAR(s, 1.0, 1e-5);
    }
    // permute tokens (as a 1x8 strip so every token keeps its own column)
    const std::vector<int> perm{5, 2, 7, 0, 1, 6, 3, 4};
    Tensor<double> strip(Shape{1, 4, 1, 8}), permuted(Shape{1, 4, 1, 8});
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < 8; ++i) {
            strip.at(0, c, 0, i) = x.at(0, c, i / 4, i % 4);
            permuted.at(0, c, 0, i) = x.at(0, c, perm[i] / 4, perm[i] % 4);
        }
    }
    const auto a = adpn::self_attention(Var<double>(strip), p).value();
    const auto b = adpn::self_attention(Var<double>(permuted), p).value();
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < 8; ++i) EXPECT_NEAR(b.at(0, c, 0, i), a.at(0, c, 0, perm[i]), 1e-12);
    }
}

TEST(SelfAttention, ValueChannelMismatchThrows) {
    Rng rng(5);
    const Var<double> f(random_tensor(Shape{1, 4, 2, 2}, rng));
    const auto p = attention_from(Var<double>(random_tensor(Shape{1, 1, 4, 4}, rng)), Var<double>(random_tensor(Shape{1, 1, 4, 4}, rng)),
                                  Var<double>(random_tensor(Shape{1, 1, 4, 3}, rng)));
    EXPECT_THROW(adpn::self_attention(f, p), InvalidArgument);
    const auto q = attention_from(Var<double>(random_tensor(Shape{1, 1, 3, 3}, rng)), Var<double>(random_tensor(Shape{1, 1, 3, 3}, rng)),
                                  Var<double>(random_tensor(Shape{1, 1, 3, 3}, rng)));
    EXPECT_THROW(adpn::self_attention(f, q), InvalidArgument);
}

TEST(SelfAttention, GradientAt8x8) {
    Rng rng(6);
    const std::vector<Tensor<double>> in{random_tensor(Shape{1, 4, 8, 8}, rng), random_tensor(Shape{1, 1, 4, 4}, rng, -0.3, 0.3),
                                         random_tensor(Shape{1, 1, 4, 4}, rng, -0.3, 0.3), random_tensor(Shape{1, 1, 4, 4}, rng)};
    for (bool scaled : {false, true}) {
        EXPECT_LT(gradient_error([&](const auto& v) {
                      return project(adpn::self_attention(v[0], attention_from(v[1], v[2], v[3]), scaled));
                  },
                                 in, {0, 1, 2, 3}),
                  1e-4);
    }
}

TEST(Adpn, OutputRangeAndShape) {
    ParamStore<float> store;
    Rng rng(7);
    adpn::AdpnConfig cfg;
    cfg.channels = {8, 16, 32, 64};
    const adpn::Adpn<float> net(store, "adpn", cfg, InitSpec{}, rng);
    for (const auto& [h, w] : std::vector<std::pair<int, int>>{{16, 16}, {32, 64}, {64, 128}}) {
        const auto d = net.forward(Var<float>(random_tensor<float>(Shape{2, 3, h, w}, rng, 0.0, 1.0)), true);
        EXPECT_EQ(d.shape(), (Shape{2, 1, h, w}));
        EXPECT_GT(d.value().min(), 0.0f);
        EXPECT_LT(d.value().max(), 1.0f);
    }
    EXPECT_THROW(net.forward(Var<float>(Tensor<float>(Shape{1, 3, 24, 32})), true), InvalidArgument);
    EXPECT_THROW(net.forward(Var<float>(Tensor<float>(Shape{1, 1, 32, 32})), true), InvalidArgument);
}

TEST(Adpn, GradientThroughWholeNetwork) {
    // 16x16 is the smallest input the four stride-2 stages accept; two images keep
    // the batch statistics at the 1x1 bottleneck non-degenerate.
    ParamStore<double> store;
    Rng rng(8);
    adpn::AdpnConfig cfg;
    cfg.channels = {2, 2, 3, 3};
    const adpn::Adpn<double> net(store, "adpn", cfg, wide_init(), rng);
    jitter_biases(store, "adpn.", rng);
    const Tensor<double> x = random_tensor(Shape{2, 3, 16, 16}, rng, 0.0, 1.0);
    EXPECT_LT(gradient_error([&](const auto& v) { return project(net.forward(v[0], true)); }, {x}, {0}), 1e-4);
    EXPECT_LT(param_gradient_error(store, "adpn.", [&] { return project(net.forward(Var<double>(x), true)); }), 1e-4);
}

TEST(Adpn, OverfitsOneDepthMap) {
    auto [img, depth] = rainsim::make_scene(32, 32, 11);
    const Var<float> x(img.pixels.cast<float>());
    const Var<float> d(depth.depth.cast<float>());
    ParamStore<float> store;
    Rng rng(9);
    adpn::AdpnConfig cfg;
    cfg.channels = {8, 16, 32, 64};
    const adpn::Adpn<float> net(store, "adpn", cfg, InitSpec{}, rng);
    Adam<float> opt(AdamConfig{2e-3});
    const auto names = store.names("adpn.");
    for (int step = 0; step < 500; ++step) {
        store.zero_grad();
        backward(ops::mean_abs_diff(net.forward(x, true), d));
        opt.step(store, names);
    }
    NoGradGuard guard;
    EXPECT_LT(ops::mean_abs_diff(net.forward(x, true), d).item(), 0.05f);
}

// ---------------------------------------------------------------------------
// cfpn

TEST(Cfab, ZeroBranchesLeaveEntryExitPath) {
    ParamStore<double> store;
    Rng rng(10);
    cfpn::Cfab<double> block(store, "b", 4, {1, 3, 5}, wide_init(), rng);
    for (auto& br : block.branches) {
        for (auto& c : br) zero_conv(c);
    }
    zero_conv(block.fuse);
    const Var<double> x(random_tensor(Shape{1, 4, 8, 8}, rng));
    EXPECT_LT(max_abs_diff(block(x).value(), block.exit(block.entry(x)).value()), 1e-14);
}

TEST(Cfab, PreservesSpatialSize) {
    ParamStore<float> store;
    Rng rng(11);
    const cfpn::Cfab<float> block(store, "b", 4, {1, 3, 5}, InitSpec{}, rng);
    for (int s : {16, 32, 64}) {
        EXPECT_EQ(block(Var<float>(Tensor<float>(Shape{1, 4, s, s}, 0.5f))).shape(), (Shape{1, 4, s, s}));
    }
    EXPECT_THROW(block(Var<float>(Tensor<float>(Shape{1, 3, 16, 16}))), InvalidArgument);
}

TEST(Cfab, BranchReceptiveFieldIs19AndGrows) {
    ParamStore<double> store;
    Rng rng(12);
    cfpn::Cfab<double> block(store, "b", 1, {1, 3, 5}, InitSpec{}, rng);
    for (auto& br : block.branches) {
        for (auto& c : br) {
            fill_param(c.weight, 1.0);
            fill_param(*c.bias, 0.0);
        }
    }
    const int size = 41;
    Tensor<double> impulse(Shape{1, 1, size, size}, 0.0);
    impulse.at(0, 0, size / 2, size / 2) = 1.0;
    auto footprint = [&](const Var<double>& y) {
        int y0 = size, y1 = -1, x0 = size, x1 = -1;
        for (int r = 0; r < size; ++r) {
            for (int c = 0; c < size; ++c) {
                if (y.value().at(0, 0, r, c) != 0.0) {
                    y0 = std::min(y0, r), y1 = std::max(y1, r), x0 = std::min(x0, c), x1 = std::max(x1, c);
                }
            }
        }
        return std::pair<int, int>{y1 - y0 + 1, x1 - x0 + 1};
    };
    const auto one = footprint(block.branch(0, Var<double>(impulse)));
    EXPECT_EQ(one.first, 19);
    EXPECT_EQ(one.second, 19);
    // through the additive recursion each later branch sees the earlier ones
    const auto outs = block.branch_outputs(Var<double>(impulse));
    int prev = 0;
    for (const auto& o : outs) {
        const int extent = footprint(o).first;
        EXPECT_GT(extent, prev);
        prev = extent;
    }
}

TEST(Cfab, ZeroLaterBranchesCollapse) {
    ParamStore<double> store;
    Rng rng(13);
    cfpn::Cfab<double> block(store, "b", 3, {1, 3, 5}, wide_init(), rng);
    for (int b : {1, 2}) {
        for (auto& c : block.branches[b]) zero_conv(c);
    }
    const Var<double> x(random_tensor(Shape{1, 3, 8, 8}, rng));
    const auto outs = block.branch_outputs(block.entry(x));
    EXPECT_GT(outs[0].value().max(), 0.0);
    EXPECT_EQ(outs[1].value().max(), 0.0);
    EXPECT_EQ(outs[2].value().max(), 0.0);
}

TEST(Cfab, GradientAt8x8) {
    ParamStore<double> store;
    Rng rng(14);
    const cfpn::Cfab<double> block(store, "b", 2, {1, 3, 5}, wide_init(), rng);
    jitter_biases(store, "b.", rng);
    const Tensor<double> x = random_tensor(Shape{1, 2, 8, 8}, rng);
    EXPECT_LT(gradient_error([&](const auto& v) { return project(block(v[0])); }, {x}, {0}), 1e-4);
    EXPECT_LT(param_gradient_error(store, "b.", [&] { return project(block(Var<double>(x))); }), 1e-4);
}

TEST(Cfpn, ShapeAndPlainTrunk) {
    ParamStore<float> store;
    Rng rng(15);
    const cfpn::Cfpn<float> net(store, "cfpn", cfpn::CfpnConfig{}, InitSpec{}, rng);
    EXPECT_EQ(net.forward(Var<float>(Tensor<float>(Shape{1, 3, 64, 128}, 0.5f))).shape(), (Shape{1, 64, 64, 128}));
    EXPECT_EQ(net.blocks().size(), 4u);

    ParamStore<float> plain_store;
    cfpn::CfpnConfig plain;
    plain.cfab_count = 0;
    const cfpn::Cfpn<float> base(plain_store, "cfpn", plain, InitSpec{}, rng);
    EXPECT_TRUE(base.blocks().empty());
    std::size_t convs = 0;
    for (const auto& n : plain_store.names()) convs += n.ends_with(".weight");
    EXPECT_EQ(convs, 4u);
}

// ---------------------------------------------------------------------------
// pdnl

TEST(DepthRelation, ExamplesAndSymmetry) {
    auto col = [](std::vector<double> v) {
        const int n = static_cast<int>(v.size());
        return Var<double>(Tensor<double>(Shape{1, 1, n, 1}, std::move(v)));
    };
    const double eps = 1e-6;
    const auto eq = pdnl::relation_matrix(col({0.3, 0.3}), col({0.3, 0.3, 0.3}), pdnl::DepthRelation::Symmetric, eps);
    for (double v : eq.value().values()) EXPECT_DOUBLE_EQ(v, 0.3 / (0.3 + eps));
    const auto r = pdnl::relation_matrix(col({0.2}), col({0.8}), pdnl::DepthRelation::Symmetric, eps);
    EXPECT_NEAR(r.value()[0], 0.25, 1e-5);
    EXPECT_LT(r.value()[0], 0.25);

    Rng rng(16);
    const Tensor<double> d = random_tensor(Shape{1, 1, 64, 1}, rng, 0.01, 1.0);
    const auto m = pdnl::relation_matrix(Var<double>(d), Var<double>(d), pdnl::DepthRelation::Symmetric, eps);
    for (int i = 0; i < 64; ++i) {
        for (int j = 0; j < 64; ++j) {
            EXPECT_EQ(m.value().at(0, 0, i, j), m.value().at(0, 0, j, i));
            EXPECT_GT(m.value().at(0, 0, i, j), 0.0);
            EXPECT_LE(m.value().at(0, 0, i, j), 1.0);
        }
    }
    const auto lit = pdnl::relation_matrix(col({0.2}), col({0.8}), pdnl::DepthRelation::Literal, eps);
    EXPECT_NEAR(lit.value()[0], 0.2 / (0.2 + eps), 1e-12);
}

TEST(DepthRelation, Gradient) {
    Rng rng(17);
    const std::vector<Tensor<double>> in{random_tensor(Shape{1, 1, 6, 1}, rng, 0.1, 1.0),
                                         random_tensor(Shape{1, 1, 5, 1}, rng, 0.1, 1.0)};
    // the literal form has O(eps) slopes, so it is checked with a visible eps
    for (auto [kind, eps] : {std::pair{pdnl::DepthRelation::Symmetric, 1e-6}, std::pair{pdnl::DepthRelation::Literal, 0.1}}) {
        EXPECT_LT(gradient_error([&](const auto& v) { return project(pdnl::relation_matrix(v[0], v[1], kind, eps)); }, in,
                                 {0, 1}),
                  1e-4);
    }
}

TEST(FeatureRelation, ZeroThetaUniformAndSingletonKey) {
    ParamStore<double> store;
    Rng rng(18);
    pdnl::PdnlParams<double> p(store, "pdnl", 4, 4, wide_init(), rng);
    const Var<double> q(random_tensor(Shape{1, 1, 6, 4}, rng));
    const Var<double> k(random_tensor(Shape{1, 1, 5, 4}, rng));
    const auto r = pdnl::feature_relation(q, k, p);
    for (int i = 0; i < 6; ++i) {
        double s = 0.0;
        for (int j = 0; j < 5; ++j) s += r.value().at(0, 0, i, j);
        EXPECT_NEAR(s, 1.0, 1e-5);
    }
    const auto single = pdnl::feature_relation(q, Var<double>(random_tensor(Shape{1, 1, 1, 4}, rng)), p);
    for (double v : single.value().values()) EXPECT_DOUBLE_EQ(v, 1.0);
    fill_param(p.w_theta, 0.0);
    fill_param(p.b_theta, 0.0);
    const auto uniform = pdnl::feature_relation(q, k, p);
    for (double v : uniform.value().values()) EXPECT_NEAR(v, 0.2, 1e-12);
}

TEST(Pdnl, KeyCountAndInteractionArithmetic) {
    const pdnl::PyramidPoolSpec spec;
    EXPECT_EQ(spec.key_count(16, 32), 85);
    const auto c = pdnl::interaction_count(64, 128, 1, spec);
    EXPECT_EQ(c.dense, 67108864);
    // 16x32 downsampled queries against 85 keys
    EXPECT_EQ(c.pyramid, 512 * 85);
    const auto c2 = pdnl::interaction_count(64, 256, 1, spec);
    EXPECT_EQ(c2.dense, 4 * c.dense);
    EXPECT_EQ(c2.pyramid, 2 * c.pyramid);
    pdnl::PyramidPoolSpec dense;
    dense.dense = true;
    const auto d = pdnl::interaction_count(8, 8, 3, dense, 1);
    EXPECT_EQ(d.dense, d.pyramid);
}

TEST(Pdnl, ZeroValueProjectionIsIdentity) {
    ParamStore<double> store;
    Rng rng(19);
    pdnl::PdnlParams<double> p(store, "pdnl", 4, 4, wide_init(), rng);
    fill_param(p.w_g, 0.0);
    fill_param(p.b_g, 0.0);
    pdnl::PdnlConfig cfg;
    cfg.pool.bin_sizes = {1, 2};
    const Var<double> f(random_tensor(Shape{2, 4, 8, 8}, rng));
    const Var<double> d(random_tensor(Shape{2, 1, 8, 8}, rng, 0.05, 1.0));
    EXPECT_EQ(pdnl::pdnl_forward(f, d, p, cfg).value().storage(), f.value().storage());
}

TEST(Pdnl, FusedRowsSumToOne) {
    ParamStore<double> store;
    Rng rng(20);
    const pdnl::PdnlParams<double> p(store, "pdnl", 4, 4, wide_init(), rng);
    pdnl::PdnlConfig cfg;
    cfg.pool.bin_sizes = {1, 2, 4};
    const auto tr = pdnl::pdnl_forward_traced(Var<double>(random_tensor(Shape{1, 4, 16, 32}, rng)),
                                              Var<double>(random_tensor(Shape{1, 1, 16, 32}, rng, 0.05, 1.0)), p, cfg);
    EXPECT_EQ(tr.fused.shape(), (Shape{1, 1, 32, 21}));
    for (int i = 0; i < 32; ++i) {
        double s = 0.0;
        for (int j = 0; j < 21; ++j) s += tr.fused.value().at(0, 0, i, j);
        EXPECT_NEAR(s, 1.0, 1e-5);
    }
    for (double v : tr.depth_rel.value().values()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Pdnl, ConstantDepthMatchesDisabledGuidance) {
    ParamStore<double> store;
    Rng rng(21);
    const pdnl::PdnlParams<double> p(store, "pdnl", 4, 4, wide_init(), rng);
    pdnl::PdnlConfig on;
    on.pool.bin_sizes = {1, 2};
    pdnl::PdnlConfig off = on;
    off.depth_guidance = false;
    const Var<double> f(random_tensor(Shape{1, 4, 8, 8}, rng));
    const auto a = pdnl::pdnl_forward(f, Var<double>(Tensor<double>(Shape{1, 1, 8, 8}, 0.5)), p, on);
    const auto b = pdnl::pdnl_forward(f, Var<double>(), p, off);
    EXPECT_LT(max_abs_diff(a.value(), b.value()), 1e-6);
}

TEST(Pdnl, DenseOracleOverRandomDraws) {
    for (int draw = 0; draw < 20; ++draw) {
        // identity sampling for most draws, the default 4x4 stride for the rest
        const int ds = draw % 4 == 3 ? 4 : 1;
        ParamStore<double> store;
        Rng rng(100 + draw);
        const pdnl::PdnlParams<double> p(store, "pdnl", 4, ds, wide_init(), rng);
        pdnl::PdnlConfig cfg;
        cfg.downsample = ds;
        cfg.pool.dense = true;
        cfg.depth_guidance = false;
        cfg.upsample = pdnl::Upsample::Nearest;
        const Tensor<double> f = random_tensor(Shape{1, 4, 8, 8}, rng);
        const auto got = pdnl::pdnl_forward(Var<double>(f), Var<double>(), p, cfg);
        EXPECT_LT(max_abs_diff(got.value(), dense_block_reference(f, p)), 1e-5) << "draw " << draw;
    }
}

TEST(Pdnl, MonotoneKeyWeighting) {
    Rng rng(22);
    const Tensor<double> rf = ops::softmax_rows(Var<double>(random_tensor(Shape{1, 1, 4, 6}, rng, -2, 2))).value();
    Tensor<double> rd = random_tensor(Shape{1, 1, 4, 6}, rng, 0.1, 1.0);
    double prev = -1.0;
    for (double v : {0.1, 0.3, 0.6, 0.9, 1.0}) {
        rd.at(0, 0, 2, 3) = v;
        const auto fused = ops::softmax_rows(ops::mul(Var<double>(rd), Var<double>(rf))).value();
        EXPECT_GE(fused.at(0, 0, 2, 3), prev);
        prev = fused.at(0, 0, 2, 3);
    }
}

TEST(Pdnl, ErrorsOnBadShapes) {
    ParamStore<double> store;
    Rng rng(23);
    const pdnl::PdnlParams<double> p(store, "pdnl", 4, 4, wide_init(), rng);
    pdnl::PdnlConfig cfg;
    cfg.pool.bin_sizes = {1, 2};
    const Var<double> d(Tensor<double>(Shape{1, 1, 8, 8}, 0.5));
    EXPECT_THROW(pdnl::pdnl_forward(Var<double>(Tensor<double>(Shape{1, 4, 10, 8})), d, p, cfg), InvalidArgument);
    EXPECT_THROW(pdnl::pdnl_forward(Var<double>(Tensor<double>(Shape{1, 3, 8, 8})), d, p, cfg), InvalidArgument);
    EXPECT_THROW(pdnl::pdnl_forward(Var<double>(Tensor<double>(Shape{1, 4, 8, 16})), d, p, cfg), InvalidArgument);
    cfg.pool.bin_sizes = {1, 4};
    EXPECT_THROW(pdnl::pdnl_forward(Var<double>(Tensor<double>(Shape{1, 4, 8, 8})), d, p, cfg), InvalidArgument);
}

TEST(Pdnl, GradientAt8x8x4) {
    ParamStore<double> store;
    Rng rng(24);
    const pdnl::PdnlParams<double> p(store, "pdnl", 4, 4, wide_init(), rng);
    jitter_biases(store, "pdnl.", rng);
    pdnl::PdnlConfig cfg;
    cfg.pool.bin_sizes = {1, 2};
    const std::vector<Tensor<double>> in{random_tensor(Shape{1, 4, 8, 8}, rng),
                                         random_tensor(Shape{1, 1, 8, 8}, rng, 0.1, 1.0)};
    EXPECT_LT(gradient_error([&](const auto& v) { return project(pdnl::pdnl_forward(v[0], v[1], p, cfg)); }, in, {0, 1}),
              1e-4);
    const Var<double> f(in[0]), d(in[1]);
    EXPECT_LT(param_gradient_error(store, "pdnl.", [&] { return project(pdnl::pdnl_forward(f, d, p, cfg)); }), 1e-4);
}

TEST(Pdnl, DenseNonLocalCostGrowsFaster) {
    const pdnl::PyramidPoolSpec spec;
    double prev_ratio = 0.0;
    for (int s : {32, 64, 128}) {
        const auto c = pdnl::interaction_count(s, s, 8, spec);
        const double ratio = static_cast<double>(c.dense) / c.pyramid;
        EXPECT_GT(ratio, prev_ratio);
        prev_ratio = ratio;
    }
}

// ---------------------------------------------------------------------------
// gan

TEST(Generator, ZeroHeadReturnsInput) {
    ParamStore<float> store;
    Rng rng(25);
    const gan::Generator<float> g(store, desk_generator(), rng);
    const Var<float> x(random_tensor<float>(Shape{1, 3, 32, 64}, rng, 0.0, 1.0));
    const auto out = g.forward(x, true);
    EXPECT_EQ(out.derained.value().storage(), x.value().storage());
    EXPECT_EQ(out.derained.shape(), (Shape{1, 3, 32, 64}));
    EXPECT_EQ(out.depth.shape(), (Shape{1, 1, 32, 64}));
    EXPECT_THROW(g.forward(Var<float>(Tensor<float>(Shape{1, 3, 24, 64})), true), InvalidArgument);
    // the 8x8 pyramid bin needs a 32-pixel side after the 4x downsampling
    EXPECT_EQ(g.min_side(), 32);
    EXPECT_THROW(g.forward(Var<float>(Tensor<float>(Shape{1, 3, 16, 64})), true), InvalidArgument);
}

TEST(Generator, TotalOnRandomInputs) {
    ParamStore<float> store;
    Rng rng(26);
    auto cfg = desk_generator();
    cfg.identity_head = false;
    const gan::Generator<float> g(store, cfg, rng);
    for (int trial = 0; trial < 100; ++trial) {
        const auto out = g.forward(Var<float>(random_tensor<float>(Shape{1, 3, 32, 32}, rng, 0.0, 1.0)), trial % 2 == 0);
        ASSERT_TRUE(out.derained.value().all_finite());
        ASSERT_TRUE(out.depth.value().all_finite());
        ASSERT_GE(out.derained.value().min(), 0.0f);
        ASSERT_LE(out.derained.value().max(), 1.0f);
    }
}

TEST(Generator, VariantsBuildAndRun) {
    for (const auto& name : gan::variant_names()) {
        ParamStore<float> store;
        Rng rng(27);
        auto cfg = gan::apply_variant(desk_generator(), name);
        cfg.identity_head = false;
        const gan::Generator<float> g(store, cfg, rng);
        const auto out = g.forward(Var<float>(Tensor<float>(Shape{1, 3, 32, 32}, 0.4f)), true);
        EXPECT_EQ(out.derained.shape(), (Shape{1, 3, 32, 32})) << name;
        EXPECT_EQ(out.depth.defined(), name != "M-A" && name != "M-B") << name;
        EXPECT_EQ(store.count("pdnl.") > 0, name == "M-E" || name == "Ours") << name;
    }
    EXPECT_THROW(gan::apply_variant(desk_generator(), "M-F"), InvalidArgument);
    EXPECT_EQ(gan::apply_variant(desk_generator(), "M-A").cfpn.cfab_count, 0);
}

TEST(Discriminator, PatchArithmetic) {
    ParamStore<float> store;
    Rng rng(28);
    const gan::Discriminator<float> d(store, "ds", gan::DiscriminatorConfig{{8, 16, 32, 64}}, InitSpec{}, rng);
    EXPECT_EQ(d.forward(Var<float>(Tensor<float>(Shape{1, 3, 64, 128}, 0.5f))).shape(), (Shape{1, 1, 8, 16}));
    EXPECT_EQ(d.forward(Var<float>(Tensor<float>(Shape{2, 3, 16, 24}, 0.5f))).shape(), (Shape{2, 1, 2, 3}));
    EXPECT_THROW(d.forward(Var<float>(Tensor<float>(Shape{1, 3, 20, 16}))), InvalidArgument);
}

TEST(Discriminator, ConstantWeightsGiveConstantPatches) {
    ParamStore<double> store;
    Rng rng(29);
    const gan::Discriminator<double> d(store, "ds", gan::DiscriminatorConfig{{4, 4, 4, 4}}, InitSpec{}, rng);
    for (const auto& n : store.names("ds.")) {
        if (n.ends_with("conv4.weight")) fill_param(store.get(n), 0.0);
        if (n.ends_with("conv4.bias")) fill_param(store.get(n), 0.7);
    }
    const auto out = d.forward(Var<double>(random_tensor(Shape{1, 3, 32, 32}, rng, 0.0, 1.0)));
    EXPECT_EQ(out.value().min(), out.value().max());
}

TEST(Topology, SharedAndDisjointWeights) {
    gan::TopologyConfig cfg;
    cfg.generator = desk_generator();
    cfg.discriminator.channels = {8, 16, 32, 64};
    gan::GanTopology<float> topo(cfg);
    EXPECT_EQ(&topo.gs(), &topo.gr());
    // mutate through gs, read through gr
    Var<float> w = topo.gs().head_out().weight;
    w.mutable_value()[0] = 0.5f;
    EXPECT_EQ(topo.gr().head_out().weight.value()[0], 0.5f);
    EXPECT_EQ(topo.gr_prime().head_out().weight.value()[0], 0.0f);
    const auto gen = topo.names_under(gan::GanTopology<float>::generator_prefixes());
    const auto prime = topo.store().names("genprime.");
    EXPECT_FALSE(prime.empty());
    for (const auto& n : gen) EXPECT_FALSE(has_prefix(n, "genprime."));
    EXPECT_EQ(topo.store().count("genprime."), topo.store().count("gen.") + topo.store().count("adpn.") +
                                                   topo.store().count("cfpn.") + topo.store().count("pdnl."));
}

TEST(Topology, ReconstructionWithZeroHeadIsIdentity) {
    gan::TopologyConfig cfg;
    cfg.generator = desk_generator();
    gan::GanTopology<float> topo(cfg);
    Rng rng(30);
    const Var<float> y(random_tensor<float>(Shape{1, 3, 32, 64}, rng, 0.0, 1.0));
    const auto r = gan::reconstruct_rain(y, topo.gr_prime(), true);
    EXPECT_EQ(r.shape(), y.shape());
    EXPECT_EQ(r.value().storage(), y.value().storage());
}
