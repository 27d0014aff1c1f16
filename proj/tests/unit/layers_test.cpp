#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "blalm/core/ops.hpp"
#include "blalm/layers/layers.hpp"
#include "test_util.hpp"

using namespace blalm;
using blalm::testing::CheckSet;
using blalm::testing::check_projected;
using blalm::testing::random_tensor;

namespace {
Var<double> cst(Shape s, std::vector<double> v) { return Var<double>::constant(Tensor<double>(std::move(s), std::move(v))); }
}  // namespace

TEST(LayerConfig, Validation) {
    LayerConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.num_heads = 3;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.num_heads = 4;
    cfg.hidden_size = 12;  // head_dim 3
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(RmsNorm, Examples) {
    auto ones = cst({4}, {1, 1, 1, 1});
    auto a = layers::rmsnorm(cst({4}, {1, 1, 1, 1}), ones, 0.0);
    for (double v : a.value().values()) EXPECT_DOUBLE_EQ(v, 1.0);

    auto b = layers::rmsnorm(cst({2}, {2, 2}), cst({2}, {1, 1}), 0.0);
    EXPECT_DOUBLE_EQ(b.value()[0], 1.0);
    EXPECT_DOUBLE_EQ(b.value()[1], 1.0);

    auto c = layers::rmsnorm(cst({2}, {3, 4}), cst({2}, {1, 1}), 0.0);
    EXPECT_NEAR(c.value()[0], 0.848528137423857, 1e-12);
    EXPECT_NEAR(c.value()[1], 1.131370849898476, 1e-12);

    EXPECT_THROW(layers::rmsnorm(cst({3}, {1, 2, 3}), ones, 1e-6), ContractViolation);
}

TEST(RmsNorm, UnitRmsProperty) {
    SeededRng rng(1);
    auto x = Var<double>::constant(random_tensor({5, 16}, rng, 3.0));
    auto y = layers::rmsnorm(x, Var<double>::constant(Tensor<double>::full({16}, 1.0)), 1e-12);
    for (std::size_t r = 0; r < 5; ++r) {
        double ms = 0;
        for (std::size_t j = 0; j < 16; ++j) ms += y.value().at(r, j) * y.value().at(r, j);
        EXPECT_NEAR(std::sqrt(ms / 16), 1.0, 1e-5);
    }
}

TEST(SwiGlu, Examples) {
    auto one = cst({1, 1}, {1});
    auto out = layers::swiglu_ffn(cst({1, 1}, {1}), one, one, one);
    EXPECT_NEAR(out.item(), 0.7310585786300049, 1e-12);

    SeededRng rng(2);
    auto wg = Var<double>::constant(random_tensor({3, 5}, rng));
    auto wu = Var<double>::constant(random_tensor({3, 5}, rng));
    auto wd = Var<double>::constant(random_tensor({5, 3}, rng));
    auto zero = layers::swiglu_ffn(Var<double>::constant(Tensor<double>({2, 3})), wg, wu, wd);
    for (double v : zero.value().values()) EXPECT_EQ(v, 0.0);
    auto x = Var<double>::constant(random_tensor({2, 3}, rng));
    auto no_up = layers::swiglu_ffn(x, wg, Var<double>::constant(Tensor<double>({3, 5})), wd);
    for (double v : no_up.value().values()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(layers::swiglu_ffn(x, wg, wd, wd), ContractViolation);
}

TEST(Rope, Examples) {
    SeededRng rng(3);
    auto x = Var<double>::constant(random_tensor({1, 2, 8}, rng));
    const std::vector<std::size_t> zero{0};
    auto same = layers::rope_apply(x, zero, 2, 10000.0);
    EXPECT_EQ(same.value(), x.value());

    // headDim 2: theta_0 = 1, so position pi/2 is not an integer; use base so
    // that the rotation angle is exactly pos * 1 and pick the closest check.
    auto unit = cst({2, 1, 2}, {1, 0, 1, 0});
    const std::vector<std::size_t> pos{0, 1};
    auto r = layers::rope_apply(unit, pos, 1, 10000.0);
    EXPECT_NEAR(r.value()[2], std::cos(1.0), 1e-15);
    EXPECT_NEAR(r.value()[3], std::sin(1.0), 1e-15);

    EXPECT_THROW(layers::rope_apply(cst({1, 1, 3}, {1, 2, 3}), zero, 1, 10000.0), ConfigError);
    const std::vector<std::size_t> two{0, 1};
    EXPECT_THROW(layers::rope_apply(x, two, 2, 10000.0), ContractViolation);
}

TEST(Rope, QuarterTurn) {
    // With headDim 4 the second pair has theta = base^(-1/2); base = (2/pi)^2
    // puts position 1 at a quarter turn.
    const double base = std::pow(2.0 / std::numbers::pi, 2.0);
    auto x = cst({1, 1, 4}, {0, 0, 1, 0});
    const std::vector<std::size_t> pos{1};
    auto r = layers::rope_apply(x, pos, 1, base);
    EXPECT_NEAR(r.value()[2], 0.0, 1e-15);
    EXPECT_NEAR(r.value()[3], 1.0, 1e-15);
}

TEST(Rope, RelativePositionAndNormPreservation) {
    SeededRng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto q = Var<double>::constant(random_tensor({1, 1, 16}, rng));
        auto k = Var<double>::constant(random_tensor({1, 1, 16}, rng));
        const std::size_t p1 = rng.below(100), p2 = rng.below(100), s = rng.below(1000);
        auto dot = [&](std::size_t a, std::size_t b) {
            const std::vector<std::size_t> pa{a}, pb{b};
            auto rq = layers::rope_apply(q, pa, 1, 10000.0).value();
            auto rk = layers::rope_apply(k, pb, 1, 10000.0).value();
            double d = 0;
            for (std::size_t i = 0; i < 16; ++i) d += rq[i] * rk[i];
            return d;
        };
        EXPECT_NEAR(dot(p1, p2), dot(p1 + s, p2 + s), 1e-5);

        const std::vector<std::size_t> pa{p1};
        auto rq = layers::rope_apply(q, pa, 1, 10000.0).value();
        for (std::size_t j = 0; j < 8; ++j) {
            const double before = std::hypot(q.value()[2 * j], q.value()[2 * j + 1]);
            const double after = std::hypot(rq[2 * j], rq[2 * j + 1]);
            EXPECT_NEAR(before, after, 1e-6);
        }
    }
}

TEST(ShortConv, Examples) {
    auto x = cst({3, 1}, {1, 2, 3});
    auto out = layers::short_conv(x, cst({1, 2}, {0.5, 0.5}));
    EXPECT_DOUBLE_EQ(out.value()[0], 0.5);
    EXPECT_DOUBLE_EQ(out.value()[1], 1.5);
    EXPECT_DOUBLE_EQ(out.value()[2], 2.5);

    SeededRng rng(5);
    auto xr = Var<double>::constant(random_tensor({6, 3}, rng));
    Tensor<double> delta({3, 4});
    for (std::size_t c = 0; c < 3; ++c) delta.at(c, 3) = 1.0;
    EXPECT_EQ(layers::short_conv(xr, Var<double>::constant(delta)).value(), xr.value());

    auto zeros = layers::short_conv(Var<double>::constant(Tensor<double>({6, 3})),
                                    Var<double>::constant(random_tensor({3, 4}, rng)));
    for (double v : zeros.value().values()) EXPECT_EQ(v, 0.0);

    EXPECT_THROW(layers::short_conv(xr, Var<double>::constant(Tensor<double>({3, 0}))), ConfigError);
}

TEST(ShortConv, CausalUnderPerturbation) {
    SeededRng rng(6);
    auto x = random_tensor({8, 2}, rng);
    auto kernel = Var<double>::constant(random_tensor({2, 4}, rng));
    auto base = layers::short_conv(Var<double>::constant(x), kernel).value();
    for (std::size_t t = 0; t < 8; ++t) {
        auto xp = x;
        xp.at(t, 0) += 1.0;
        xp.at(t, 1) -= 2.0;
        auto out = layers::short_conv(Var<double>::constant(xp), kernel).value();
        for (std::size_t s = 0; s < t; ++s) {
            EXPECT_EQ(out.at(s, 0), base.at(s, 0));
            EXPECT_EQ(out.at(s, 1), base.at(s, 1));
        }
    }
}

TEST(EmbedHead, Examples) {
    SeededRng rng(7);
    auto table = Var<double>::constant(random_tensor({3, 2}, rng));
    const std::vector<std::int32_t> ids{2};
    auto e = layers::embed<double>(ids, table);
    EXPECT_EQ(e.value()[0], table.value().at(2, 0));
    EXPECT_EQ(e.value()[1], table.value().at(2, 1));
    const std::vector<std::int32_t> bad{3};
    EXPECT_THROW(layers::embed<double>(bad, table), InputError);
    const std::vector<std::int32_t> negative{-1};
    EXPECT_THROW(layers::embed<double>(negative, table), InputError);

    // untied head against an explicit loop
    auto h = Var<double>::constant(random_tensor({4, 2}, rng));
    auto logits = layers::lm_head(h, table).value();
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t v = 0; v < 3; ++v) {
            double ref = 0;
            for (std::size_t j = 0; j < 2; ++j) ref += h.value().at(t, j) * table.value().at(v, j);
            EXPECT_NEAR(logits.at(t, v), ref, 1e-14);
        }
    }

    // tied head on an orthonormal table peaks at the looked-up id
    auto eye = Var<double>::constant(Tensor<double>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    for (std::int32_t i = 0; i < 3; ++i) {
        const std::vector<std::int32_t> one{i};
        auto l = layers::lm_head(layers::embed<double>(one, eye), eye).value();
        EXPECT_EQ(std::max_element(l.data().begin(), l.data().end()) - l.data().begin(), i);
    }
}

TEST(LayerGrad, AllLayers) {
    SeededRng rng(8);
    CheckSet set;
    auto& x = set.add("x", random_tensor({5, 8}, rng));
    auto& gain = set.add("gain", random_tensor({8}, rng));
    auto& wg = set.add("wg", random_tensor({8, 6}, rng, 0.5));
    auto& wu = set.add("wu", random_tensor({8, 6}, rng, 0.5));
    auto& wd = set.add("wd", random_tensor({6, 8}, rng, 0.5));
    auto& kernel = set.add("kernel", random_tensor({8, 3}, rng));
    auto& table = set.add("table", random_tensor({7, 8}, rng));
    auto b = [](Parameter<double>& p) { return Var<double>::bind(p); };
    const std::vector<std::size_t> pos{0, 3, 4, 9, 10};
    const std::vector<std::int32_t> ids{6, 1, 1, 0, 3};

    auto check = [&](const std::function<Var<double>()>& f) {
        auto report = check_projected(set, f, 17);
        EXPECT_TRUE(report.passed()) << report.max_rel_error;
    };
    check([&] { return layers::rmsnorm(b(x), b(gain), 1e-6); });
    check([&] { return layers::swiglu_ffn(b(x), b(wg), b(wu), b(wd)); });
    check([&] { return layers::rope_apply(b(x), pos, 2, 100.0); });
    check([&] { return layers::rope_apply(ops::reshape(b(x), {5, 2, 4}), pos, 2, 100.0); });
    check([&] { return layers::short_conv(b(x), b(kernel)); });
    check([&] { return layers::lm_head(layers::embed<double>(ids, b(table)), b(table)); });
    check([&] { return layers::lm_head(b(x), b(table)); });
}
