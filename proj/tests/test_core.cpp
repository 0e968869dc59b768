#include <gtest/gtest.h>

#include <cmath>

#include "moregan/checkpoint.hpp"
#include "moregan/config.hpp"
#include "moregan/core/layers.hpp"
#include "moregan/core/matrix.hpp"
#include "moregan/core/optim.hpp"
#include "test_util.hpp"

using namespace moregan;
using moregan::testing::gradient_error;
using moregan::testing::project;
using moregan::testing::random_tensor;
using moregan::testing::TempDir;

namespace {

/// Direct-sum convolution used as the reference for the GEMM path.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, const ConvSpec& s) {
    const int kh = w.h(), kw = w.w();
    const int ho = (x.h() + s.pad_top + s.pad_bottom - s.dilation * (kh - 1) - 1) / s.stride + 1;
    const int wo = (x.w() + s.pad_left + s.pad_right - s.dilation * (kw - 1) - 1) / s.stride + 1;
    Tensor<double> out(Shape{x.n(), w.n(), ho, wo});
    for (int n = 0; n < x.n(); ++n) {
        for (int o = 0; o < w.n(); ++o) {
            for (int y = 0; y < ho; ++y) {
                for (int xx = 0; xx < wo; ++xx) {
                    double acc = b.empty() ? 0.0 : b[o];
                    for (int c = 0; c < x.c(); ++c) {
                        for (int i = 0; i < kh; ++i) {
                            for (int j = 0; j < kw; ++j) {
                                const int iy = y * s.stride - s.pad_top + i * s.dilation;
                                const int ix = xx * s.stride - s.pad_left + j * s.dilation;
                                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                                acc += w.at(o, c, i, j) * x.at(n, c, iy, ix);
                            }
                        }
                    }
                    out.at(n, o, y, xx) = acc;
                }
            }
        }
    }
    return out;
}

}  // namespace

TEST(Tensor, ShapeAndIndexing) {
    Tensor<float> t(Shape{2, 3, 4, 5}, 1.5f);
    EXPECT_EQ(t.size(), 120u);
    t.at(1, 2, 3, 4) = 7.0f;
    EXPECT_EQ(t[119], 7.0f);
    EXPECT_THROW(Tensor<float>(Shape{0, 1, 1, 1}), InvalidArgument);
    EXPECT_THROW(t.reshaped(Shape{1, 1, 1, 7}), InvalidArgument);
    const auto s = t.slice_batch(1);
    EXPECT_EQ(s.shape(), (Shape{1, 3, 4, 5}));
    EXPECT_EQ(s.at(0, 2, 3, 4), 7.0f);
    const auto both = stack_batch<float>({t.slice_batch(0), t.slice_batch(1)});
    EXPECT_EQ(both.storage(), t.storage());
}

TEST(Autograd, SharedSubexpressionAccumulates) {
    Var<double> x(Tensor<double>(Shape{1, 1, 1, 3}, std::vector<double>{1.0, 2.0, 3.0}), true);
    const auto y = ops::mul(x, x);   // x^2
    const auto z = ops::add(y, x);   // x^2 + x
    backward(ops::mean(z));
    const auto g = x.grad();
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(g[i], (2.0 * (i + 1) + 1.0) / 3.0, 1e-12);
}

TEST(Autograd, NoGradRecordsNothing) {
    Var<double> x(Tensor<double>(Shape{1, 1, 1, 2}, 1.0), true);
    NoGradGuard guard;
    const auto y = ops::scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, DetachBlocksGradient) {
    Var<double> x(Tensor<double>(Shape{1, 1, 1, 2}, 1.0), true);
    const auto y = ops::add(ops::scale(detach(x), 3.0), x);
    backward(ops::mean(y));
    EXPECT_NEAR(x.grad()[0], 0.5, 1e-12);
}

TEST(Ops, ElementwiseGradients) {
    Rng rng(1);
    const Shape s{2, 3, 4, 4};
    const std::vector<Tensor<double>> in{random_tensor(s, rng), random_tensor(s, rng)};
    EXPECT_LT(gradient_error([](const auto& v) { return project(ops::mul(ops::add(v[0], v[1]), ops::sub(v[0], v[1]))); },
                             in, {0, 1}),
              1e-6);
    EXPECT_LT(gradient_error([](const auto& v) { return project(ops::sigmoid(ops::scale(v[0], 2.0))); }, in, {0}), 1e-6);
    EXPECT_LT(gradient_error([](const auto& v) { return project(ops::relu(v[0])); }, in, {0}), 1e-6);
    EXPECT_LT(gradient_error([](const auto& v) { return project(ops::clamp(v[0], -0.5, 0.5)); }, in, {0}), 1e-6);
    EXPECT_LT(gradient_error([](const auto& v) { return ops::mean_abs_diff(v[0], v[1]); }, in, {0, 1}), 1e-6);
    EXPECT_LT(gradient_error([](const auto& v) { return ops::mean_sq_diff(v[0], v[1]); }, in, {0, 1}), 1e-6);
    EXPECT_LT(gradient_error([](const auto& v) { return ops::mean_sq_to(v[0], 1.0); }, in, {0}), 1e-6);
    EXPECT_LT(gradient_error([](const auto& v) { return project(ops::concat_channels<double>({v[0], v[1]})); }, in, {0, 1}),
              1e-6);
}

TEST(Ops, BroadcastGateGradient) {
    Rng rng(2);
    const std::vector<Tensor<double>> in{random_tensor(Shape{2, 3, 4, 4}, rng), random_tensor(Shape{2, 1, 4, 4}, rng)};
    EXPECT_LT(gradient_error([](const auto& v) { return project(ops::mul_broadcast_channels(v[0], v[1])); }, in, {0, 1}),
              1e-6);
    EXPECT_THROW(ops::mul_broadcast_channels(Var<double>(in[0]), Var<double>(in[0])), InvalidArgument);
}

TEST(Ops, WeightedSumIsLinear) {
    const Var<double> a(Tensor<double>(Shape{}, 2.0), true);
    const Var<double> b(Tensor<double>(Shape{}, 3.0), true);
    const auto t = ops::weighted_sum<double>({a, b}, {0.5, 4.0});
    EXPECT_DOUBLE_EQ(t.item(), 13.0);
    backward(t);
    EXPECT_DOUBLE_EQ(a.grad()[0], 0.5);
    EXPECT_DOUBLE_EQ(b.grad()[0], 4.0);
}

TEST(Conv, MatchesDirectSum) {
    Rng rng(3);
    const Tensor<double> x = random_tensor(Shape{2, 3, 9, 11}, rng);
    for (const auto& [k, spec] : std::vector<std::pair<int, ConvSpec>>{{3, ConvSpec::same(3)},
                                                                        {3, ConvSpec::same(3, 3)},
                                                                        {4, ConvSpec::same(4)},
                                                                        {4, ConvSpec::strided(2, 1)},
                                                                        {1, ConvSpec{}}}) {
        const Tensor<double> w = random_tensor(Shape{5, 3, k, k}, rng);
        const Tensor<double> b = random_tensor(Shape{1, 5, 1, 1}, rng);
        const auto out = ops::conv2d<double>(Var<double>(x), Var<double>(w), Var<double>(b), spec);
        const auto ref = naive_conv(x, w, b, spec);
        ASSERT_EQ(out.shape(), ref.shape());
        EXPECT_LT(max_abs_diff(out.value(), ref), 1e-12);
    }
}

TEST(Conv, SamePaddingPreservesSize) {
    Rng rng(3);
    for (int k : {3, 4}) {
        for (int d : {1, 3, 5}) {
            const Tensor<double> w = random_tensor(Shape{2, 2, k, k}, rng);
            const auto out = ops::conv2d<double>(Var<double>(random_tensor(Shape{1, 2, 16, 16}, rng)), Var<double>(w),
                                         std::nullopt, ConvSpec::same(k, d));
            EXPECT_EQ(out.shape(), (Shape{1, 2, 16, 16}));
        }
    }
}

TEST(Conv, Gradient) {
    Rng rng(4);
    const std::vector<Tensor<double>> in{random_tensor(Shape{2, 2, 6, 6}, rng), random_tensor(Shape{3, 2, 3, 3}, rng),
                                         random_tensor(Shape{1, 3, 1, 1}, rng)};
    for (const ConvSpec spec : {ConvSpec::same(3, 2), ConvSpec::strided(2, 1)}) {
        EXPECT_LT(gradient_error([&](const auto& v) { return project(ops::conv2d<double>(v[0], v[1], v[2], spec)); }, in,
                                 {0, 1, 2}),
                  1e-6);
    }
}

TEST(Norm, BatchAndInstanceGradients) {
    Rng rng(5);
    const std::vector<Tensor<double>> in{random_tensor(Shape{3, 2, 4, 4}, rng), random_tensor(Shape{1, 2, 1, 1}, rng, 0.5, 1.5),
                                         random_tensor(Shape{1, 2, 1, 1}, rng)};
    Tensor<double> rm(Shape{1, 2, 1, 1}, 0.0), rv(Shape{1, 2, 1, 1}, 1.0);
    EXPECT_LT(gradient_error([&](const auto& v) { return project(ops::batch_norm(v[0], v[1], v[2], rm, rv, true)); }, in,
                             {0, 1, 2}),
              1e-6);
    EXPECT_LT(gradient_error([&](const auto& v) { return project(ops::instance_norm(v[0], v[1], v[2])); }, in, {0, 1, 2}),
              1e-6);
}

TEST(Norm, BatchNormTrainingNormalizesAndInferenceUsesRunningStats) {
    Rng rng(6);
    const Tensor<double> x = random_tensor(Shape{4, 2, 5, 5}, rng, 2.0, 4.0);
    Tensor<double> rm(Shape{1, 2, 1, 1}, 0.0), rv(Shape{1, 2, 1, 1}, 1.0);
    const Var<double> g(Tensor<double>(Shape{1, 2, 1, 1}, 1.0)), b(Tensor<double>(Shape{1, 2, 1, 1}, 0.0));
    const auto y = ops::batch_norm(Var<double>(x), g, b, rm, rv, true);
    EXPECT_NEAR(y.value().mean(), 0.0, 1e-9);
    EXPECT_GT(rm[0], 0.2);  // moved toward the batch mean
    rm.fill(1.0);
    rv.fill(4.0);
    const auto z = ops::batch_norm(Var<double>(x), g, b, rm, rv, false);
    EXPECT_NEAR(z.value()[0], (x[0] - 1.0) / std::sqrt(4.0 + 1e-5), 1e-9);
}

TEST(Matrix, TokensRoundTripAndSoftmaxRows) {
    Rng rng(7);
    const Tensor<double> x = random_tensor(Shape{2, 3, 4, 5}, rng);
    const auto t = ops::to_tokens(Var<double>(x));
    EXPECT_EQ(t.shape(), (Shape{2, 1, 20, 3}));
    EXPECT_DOUBLE_EQ(t.value().at(1, 0, 7, 2), x.at(1, 2, 1, 2));
    EXPECT_EQ(ops::from_tokens(t, 4, 5).value().storage(), x.storage());
    const auto s = ops::softmax_rows(t);
    for (int n = 0; n < 2; ++n) {
        for (int r = 0; r < 20; ++r) {
            double sum = 0.0;
            for (int c = 0; c < 3; ++c) sum += s.value().at(n, 0, r, c);
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
    }
}

TEST(Matrix, Gradients) {
    Rng rng(8);
    const std::vector<Tensor<double>> in{random_tensor(Shape{2, 1, 5, 3}, rng), random_tensor(Shape{2, 1, 4, 3}, rng),
                                         random_tensor(Shape{1, 1, 3, 4}, rng), random_tensor(Shape{1, 1, 1, 4}, rng)};
    EXPECT_LT(gradient_error([](const auto& v) { return project(ops::matmul(v[0], v[1], true)); }, in, {0, 1}), 1e-6);
    EXPECT_LT(gradient_error([](const auto& v) { return project(ops::add_row_bias(ops::matmul(v[0], v[2]), v[3])); }, in,
                             {0, 2, 3}),
              1e-6);
    EXPECT_LT(gradient_error([](const auto& v) { return project(ops::softmax_rows(v[0])); }, in, {0}), 1e-6);
}

TEST(Spatial, ResamplingGradients) {
    Rng rng(9);
    const std::vector<Tensor<double>> in{random_tensor(Shape{1, 2, 4, 8}, rng), random_tensor(Shape{1, 1, 4, 8}, rng)};
    EXPECT_LT(gradient_error([](const auto& v) { return project(ops::upsample_nearest(v[0], 2)); }, in, {0}), 1e-6);
    EXPECT_LT(gradient_error([](const auto& v) { return project(ops::resize_bilinear(v[0], 16, 32)); }, in, {0}), 1e-6);
    EXPECT_LT(gradient_error([](const auto& v) { return project(ops::strided_sample(v[0], 2)); }, in, {0}), 1e-6);
    EXPECT_LT(gradient_error([](const auto& v) { return project(ops::max_pool2(v[0])); }, in, {0}), 1e-6);
    EXPECT_LT(gradient_error([](const auto& v) { return project(ops::pyramid_pool(v[0], v[1], {1, 2, 4})); }, in, {0, 1}),
              1e-6);
}

TEST(Spatial, BilinearIdentityAtSameSize) {
    Rng rng(9);
    const Tensor<double> x = random_tensor(Shape{1, 2, 5, 7}, rng);
    EXPECT_LT(max_abs_diff(ops::resize_bilinear(Var<double>(x), 5, 7).value(), x), 1e-15);
}

TEST(Spatial, PyramidPoolOfConstantIsConstant) {
    Rng rng(10);
    const Tensor<double> x(Shape{1, 3, 8, 8}, 0.37);
    const auto p = ops::pyramid_pool(Var<double>(x), Var<double>(random_tensor(Shape{1, 1, 8, 8}, rng, -3, 3)), {1, 2, 4, 8});
    EXPECT_EQ(p.shape(), (Shape{1, 1, 85, 3}));
    for (double v : p.value().values()) EXPECT_NEAR(v, 0.37, 1e-12);
}

TEST(Spatial, EqualLogitsGiveAveragePooling) {
    Rng rng(11);
    const Tensor<double> x = random_tensor(Shape{1, 2, 8, 8}, rng);
    const auto p = ops::pyramid_pool(Var<double>(x), Var<double>(Tensor<double>(Shape{1, 1, 8, 8}, 0.3)), {1, 2});
    double whole = 0.0, quad = 0.0;
    for (int y = 0; y < 8; ++y) {
        for (int xx = 0; xx < 8; ++xx) {
            whole += x.at(0, 1, y, xx);
            if (y < 4 && xx >= 4) quad += x.at(0, 1, y, xx);
        }
    }
    EXPECT_NEAR(p.value().at(0, 0, 0, 1), whole / 64.0, 1e-12);
    // level 2, row 0, column 1
    EXPECT_NEAR(p.value().at(0, 0, 2, 1), quad / 16.0, 1e-12);
    EXPECT_THROW(ops::pyramid_pool(Var<double>(x), Var<double>(Tensor<double>(Shape{1, 1, 8, 8})), {16}),
                 InvalidArgument);
}

TEST(Params, StoreHashAndTrainable) {
    ParamStore<double> store;
    Rng rng(1);
    Conv2d<double> a(store, "a.conv", 2, 2, 3, ConvSpec::same(3), InitSpec{}, rng);
    Conv2d<double> b(store, "b.conv", 2, 2, 3, ConvSpec::same(3), InitSpec{}, rng);
    EXPECT_THROW(store.create("a.conv.weight", Tensor<double>(Shape{})), InvalidArgument);
    EXPECT_EQ(store.names("a.").size(), 2u);
    const auto ha = store.hash("a.");
    const auto hb = store.hash("b.");
    fill_param(b.weight, 0.0);
    EXPECT_EQ(store.hash("a."), ha);
    EXPECT_NE(store.hash("b."), hb);
    store.set_trainable("a.", false);
    EXPECT_FALSE(a.weight.requires_grad());
    EXPECT_TRUE(b.weight.requires_grad());
}

TEST(Params, KaimingScale) {
    Rng rng(2);
    const auto k = init_kernel<double>(Shape{64, 32, 3, 3}, InitSpec{InitSpec::Kind::Kaiming, 0.0}, rng);
    double ss = 0.0;
    for (double v : k.values()) ss += v * v;
    EXPECT_NEAR(std::sqrt(ss / k.size()), std::sqrt(2.0 / (32 * 9)), 0.01);
}

TEST(Optim, AdamMinimizesQuadratic) {
    ParamStore<double> store;
    Var<double> p = store.create("p", Tensor<double>(Shape{1, 1, 1, 2}, std::vector<double>{3.0, -2.0}));
    Adam<double> opt(AdamConfig{0.05});
    for (int i = 0; i < 500; ++i) {
        store.zero_grad();
        backward(ops::mean_sq_to(p, 1.0));
        opt.step(store, {"p"});
    }
    EXPECT_NEAR(p.value()[0], 1.0, 1e-2);
    EXPECT_NEAR(p.value()[1], 1.0, 1e-2);
}

TEST(Optim, FirstStepMovesByLearningRate) {
    ParamStore<double> store;
    Var<double> p = store.create("p", Tensor<double>(Shape{}, 0.0));
    Var<double> q = store.create("q", Tensor<double>(Shape{}, 0.0));
    Adam<double> opt(AdamConfig{0.1});
    backward(ops::scale(p, 3.0));
    opt.step(store, {"p", "q"});
    EXPECT_NEAR(p.value()[0], -0.1, 1e-6);
    EXPECT_EQ(q.value()[0], 0.0);  // no gradient, no move
}

TEST(Config, DefaultsAndKeyValueText) {
    train::TrainConfig cfg;
    EXPECT_DOUBLE_EQ(cfg.lr_gen, 5e-4);
    EXPECT_DOUBLE_EQ(cfg.lr_disc, 1e-5);
    EXPECT_EQ(cfg.batch, 4);
    train::apply_text(cfg, "# comment\nlr_gen = 1e-3\nbranch_ratio = 2:1\nadpn_channels = 8,16,32,64\n"
                           "weight.total_variation = 0.25\nvariant = M-C\nloss_mask = V3\n");
    EXPECT_DOUBLE_EQ(cfg.lr_gen, 1e-3);
    EXPECT_EQ(cfg.branch_supervised, 2);
    EXPECT_EQ(cfg.branch_unsupervised, 1);
    EXPECT_EQ(cfg.adpn_channels[3], 64);
    EXPECT_DOUBLE_EQ(cfg.weights.lambda[losses::kTotalVariation], 0.25);
    EXPECT_EQ(cfg.variant, "M-C");
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_THROW(train::set_key(cfg, "no_such_key", "1"), ConfigError);
    EXPECT_THROW(train::apply_text(cfg, "lr_gen 3"), ConfigError);
}

TEST(Config, ValidationRejectsBadValues) {
    auto bad = [](const std::string& text) {
        train::TrainConfig cfg;
        train::apply_text(cfg, text);
        cfg.validate();
    };
    EXPECT_THROW(bad("lr_gen = 0"), ConfigError);
    EXPECT_THROW(bad("batch = 0"), ConfigError);
    EXPECT_THROW(bad("patch_h = 40"), ConfigError);
    EXPECT_THROW(bad("variant = M-Z"), ConfigError);
    EXPECT_THROW(bad("loss_mask = V9"), ConfigError);
    EXPECT_THROW(bad("weight.cycle = -1"), ConfigError);
    EXPECT_THROW(bad("lr_gen = fast"), ConfigError);
}

TEST(Config, JsonEchoRoundTrips) {
    train::TrainConfig cfg;
    train::apply_text(cfg, "cfpn_width = 24\nseed = 77\ndepth_relation = literal\nscaled_attention = true\n");
    const auto back = train::from_json(train::to_json(cfg));
    EXPECT_EQ(train::to_text(back), train::to_text(cfg));
    EXPECT_EQ(back.cfpn_width, 24);
    EXPECT_EQ(back.seed, 77u);
}

TEST(Checkpoint, SaveLoadRestore) {
    TempDir tmp("ckpt");
    ParamStore<float> store;
    Rng rng(1);
    BatchNorm2d<float> bn(store, "gen.bn", 3);
    Conv2d<float> c(store, "gen.conv", 3, 3, 3, ConvSpec::same(3), InitSpec{}, rng);
    Conv2d<float> d(store, "ds.conv", 3, 3, 3, ConvSpec::same(3), InitSpec{}, rng);
    store.buffer("gen.bn.running_mean").fill(0.25f);
    const auto path = tmp / "c.bin";
    ckpt::save(path, store, nlohmann::json{{"k", "v"}}, {}, {{"step", 3}});
    EXPECT_FALSE(std::filesystem::exists(tmp / "c.bin.tmp"));
    const auto ck = ckpt::load(path);
    EXPECT_EQ(ck.config["k"], "v");
    EXPECT_EQ(ck.meta["step"], 3);
    EXPECT_TRUE(ck.has_namespace("gen"));
    EXPECT_TRUE(ck.has_namespace("ds"));

    ParamStore<float> other;
    Rng rng2(2);
    BatchNorm2d<float> bn2(other, "gen.bn", 3);
    Conv2d<float> c2(other, "gen.conv", 3, 3, 3, ConvSpec::same(3), InitSpec{}, rng2);
    ckpt::restore(other, ck, {"gen."});
    EXPECT_EQ(other.hash("gen."), store.hash("gen."));

    ParamStore<float> wrong;
    Conv2d<float> c3(wrong, "gen.conv", 3, 4, 3, ConvSpec::same(3), InitSpec{}, rng2);
    EXPECT_THROW(ckpt::restore(wrong, ck, {"gen."}), ConfigError);
}

TEST(Checkpoint, GeneratorOnlySubsetAndErrors) {
    TempDir tmp("ckpt_sub");
    ParamStore<float> store;
    Rng rng(1);
    Conv2d<float> c(store, "gen.conv", 3, 3, 3, ConvSpec::same(3), InitSpec{}, rng);
    Conv2d<float> d(store, "ds.conv", 3, 3, 3, ConvSpec::same(3), InitSpec{}, rng);
    ckpt::save(tmp / "g.bin", store, nlohmann::json::object(), {"gen."});
    EXPECT_FALSE(ckpt::load(tmp / "g.bin").has_namespace("ds"));

    EXPECT_THROW(ckpt::load(tmp / "missing.bin"), IoError);
    std::ofstream(tmp / "junk.bin") << "definitely not a checkpoint";
    EXPECT_THROW(ckpt::load(tmp / "junk.bin"), IoError);

    // bump the version field
    {
        std::fstream f(tmp / "g.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const std::uint32_t v = 99;
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    EXPECT_THROW(ckpt::load(tmp / "g.bin"), ConfigError);
}
