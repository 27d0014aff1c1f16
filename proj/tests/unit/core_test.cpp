#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "blalm/core/grad_check.hpp"
#include "blalm/core/ops.hpp"
#include "blalm/core/rng.hpp"
#include "test_util.hpp"

using namespace blalm;
using blalm::testing::CheckSet;
using blalm::testing::check_projected;
using blalm::testing::random_tensor;

TEST(Tensor, RejectsDataLengthMismatch) {
    EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), ContractViolation);
    Tensor<double> t({2, 3});
    EXPECT_EQ(t.size(), 6u);
    EXPECT_THROW(t.reshaped({4, 2}), ContractViolation);
}

TEST(Softmax, Examples) {
    auto a = softmax(Tensor<double>({2}, {0.0, 0.0}), 0);
    EXPECT_DOUBLE_EQ(a[0], 0.5);
    EXPECT_DOUBLE_EQ(a[1], 0.5);

    auto b = softmax(Tensor<double>({2}, {1000.0, 0.0}), 0);
    EXPECT_DOUBLE_EQ(b[0], 1.0);
    EXPECT_EQ(b[1], 0.0);
    EXPECT_TRUE(b.all_finite());

    auto c = softmax(Tensor<double>({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}), 0);
    EXPECT_NEAR(c[0], 1.0 / 6.0, 1e-15);
    EXPECT_NEAR(c[1], 2.0 / 6.0, 1e-15);
    EXPECT_NEAR(c[2], 3.0 / 6.0, 1e-15);
}

TEST(Softmax, SumsToOneForLargeInputsOnEveryAxis) {
    SeededRng rng(3);
    auto x = blalm::testing::uniform_tensor({4, 5, 6}, rng, -1e4, 1e4);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        auto y = softmax(x.cast<float>(), axis);
        const std::size_t n = x.dim(axis);
        const std::size_t inner = axis == 2 ? 1 : (axis == 1 ? 6 : 30);
        const std::size_t outer = x.size() / (n * inner);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
                double s = 0;
                for (std::size_t k = 0; k < n; ++k) {
                    const float v = y[(o * n + k) * inner + i];
                    EXPECT_GE(v, 0.0f);
                    s += v;
                }
                EXPECT_NEAR(s, 1.0, 1e-6);
            }
        }
    }
    EXPECT_THROW(softmax(x, 3), ContractViolation);
}

TEST(GradCheck, SumIsExact) {
    Parameter<double> x("x", Tensor<double>({2, 3}, {0.3, -1.0, 2.0, 5.0, 0.0, -7.5}), ShapeClass::Matrix);
    auto report = grad_check([&] { return ops::sum(Var<double>::bind(x)); }, {&x}, 1e-4, 1e-10);
    EXPECT_LE(report.max_rel_error, 1e-10);
    EXPECT_TRUE(report.passed());
    for (std::size_t i = 0; i < x.grad.size(); ++i) {
        EXPECT_DOUBLE_EQ(x.grad[i], 1.0);
    }
}

TEST(GradCheck, SquareHasGradientTwoX) {
    Parameter<double> x("x", Tensor<double>({3}, {1.0, 2.0, 3.0}), ShapeClass::ScalarLike);
    auto report = grad_check(
        [&] {
            auto v = Var<double>::bind(x);
            return ops::sum(ops::mul(v, v));
        },
        {&x}, 1e-4, 1e-8);
    EXPECT_DOUBLE_EQ(x.grad[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad[1], 4.0);
    EXPECT_DOUBLE_EQ(x.grad[2], 6.0);
    EXPECT_LE(report.max_rel_error, 1e-8);
    EXPECT_EQ(x.value[1], 2.0);  // restored
}

TEST(GradCheck, FlagsWrongGradient) {
    Parameter<double> x("x", Tensor<double>({3}, {1.0, 2.0, 3.0}), ShapeClass::ScalarLike);
    auto broken = [&] {
        auto v = Var<double>::bind(x);
        Tensor<double> sq({3});
        for (std::size_t i = 0; i < 3; ++i) {
            sq[i] = v.value()[i] * v.value()[i];
        }
        // claims d/dx x^2 = x
        auto out = make_op<double>(std::move(sq), {v}, [](Node<double>& self) {
            auto& g = self.parent(0).grad_buffer();
            for (std::size_t i = 0; i < 3; ++i) {
                g[i] += self.grad[i] * self.parent(0).value[i];
            }
        });
        return ops::sum(out);
    };
    auto report = grad_check(broken, {&x}, 1e-6, 1e-5);
    EXPECT_FALSE(report.passed());
    EXPECT_NEAR(report.max_rel_error, 0.5, 1e-6);
}

TEST(GradCheck, Errors) {
    Parameter<double> x("x", Tensor<double>({2}, {1.0, -1.0}), ShapeClass::ScalarLike);
    EXPECT_THROW(grad_check([&] { return ops::sum(ops::reciprocal(ops::sub(Var<double>::bind(x), Var<double>::bind(x)))); },
                            {&x}, 1e-6, 1e-5),
                 DivergenceError);
    EXPECT_THROW(grad_check([&] { return Var<double>::bind(x); }, {&x}, 1e-6, 1e-5), ContractViolation);
    EXPECT_THROW(grad_check([&] { return ops::sum(Var<double>::bind(x)); }, {&x}, 0.0, 1e-5), ContractViolation);
}

TEST(Rng, ReproducibleAndForkable) {
    SeededRng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const auto va = a.next_u64();
        EXPECT_EQ(va, b.next_u64());
        (void)c.next_u64();
    }
    EXPECT_EQ(a, b);
    EXPECT_NE(SeededRng(42).next_u64(), SeededRng(43).next_u64());
    SeededRng resumed(a.seed(), a.counter());
    EXPECT_EQ(resumed.next_u64(), a.next_u64());
    EXPECT_NE(SeededRng(42).fork(1).next_u64(), SeededRng(42).fork(2).next_u64());

    SeededRng r(9);
    double mean = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        mean += v;
        sq += v * v;
    }
    mean /= n;
    EXPECT_NEAR(mean, 0.0, 0.03);
    EXPECT_NEAR(sq / n, 1.0, 0.05);
    for (int i = 0; i < 1000; ++i) {
        EXPECT_LT(r.below(7), 7u);
        const double u = r.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
}

TEST(Autograd, NoGradGuardRecordsNothing) {
    auto x = Var<double>::leaf(Tensor<double>({2}, {1.0, 2.0}));
    {
        NoGradGuard guard;
        auto y = ops::exp(x);
        EXPECT_FALSE(y.requires_grad());
    }
    EXPECT_TRUE(ops::exp(x).requires_grad());
    EXPECT_FALSE(ops::exp(Var<double>::constant(x.value())).requires_grad());
}

TEST(Autograd, SharedSubexpressionAccumulates) {
    Parameter<double> p("p", Tensor<double>({1}, {3.0}), ShapeClass::ScalarLike);
    auto x = Var<double>::bind(p);
    auto y = ops::mul(ops::add(x, x), x);  // 2x^2
    backward(y, 1.0);
    EXPECT_DOUBLE_EQ(p.grad[0], 12.0);
}

// Every primitive against central differences on random inputs.
class OpGrad : public ::testing::Test {
protected:
    SeededRng rng{11};
    CheckSet set;
    void expect_ok(const std::function<Var<double>()>& f, std::uint64_t seed = 5) {
        auto report = check_projected(set, f, seed);
        EXPECT_TRUE(report.passed()) << report.max_rel_error;
    }
    Var<double> v(std::size_t i) { return Var<double>::bind(*set.params[i]); }
};

TEST_F(OpGrad, Elementwise) {
    set.add("a", random_tensor({3, 4}, rng));
    set.add("b", blalm::testing::uniform_tensor({3, 4}, rng, 0.5, 2.0));
    expect_ok([&] { return ops::add(v(0), v(1)); });
    expect_ok([&] { return ops::sub(v(0), v(1)); });
    expect_ok([&] { return ops::mul(v(0), v(1)); });
    expect_ok([&] { return ops::div(v(0), v(1)); });
    expect_ok([&] { return ops::maximum(v(0), v(1)); });
    expect_ok([&] { return ops::scale(ops::add_scalar(ops::neg(v(0)), 0.3), 1.7); });
    expect_ok([&] { return ops::exp(v(0)); });
    expect_ok([&] { return ops::tanh(v(0)); });
    expect_ok([&] { return ops::sigmoid(v(0)); });
    expect_ok([&] { return ops::silu(v(0)); });
    expect_ok([&] { return ops::abs(v(0)); });
    expect_ok([&] { return ops::reciprocal(v(1)); });
    expect_ok([&] { return ops::clamp_min(v(0), 0.1); });
    expect_ok([&] { return ops::mean(ops::mul(v(0), v(0))); });
}

TEST_F(OpGrad, ScaleBy) {
    set.add("a", random_tensor({3, 4}, rng));
    set.add("s", random_tensor({1}, rng));
    expect_ok([&] { return ops::scale_by(v(0), v(1)); });
}

TEST_F(OpGrad, MatmulAllTransposes) {
    set.add("a", random_tensor({3, 4}, rng));
    set.add("b", random_tensor({4, 5}, rng));
    set.add("at", random_tensor({4, 3}, rng));
    set.add("bt", random_tensor({5, 4}, rng));
    expect_ok([&] { return ops::matmul(v(0), v(1)); });
    expect_ok([&] { return ops::matmul(v(2), v(1), true, false); });
    expect_ok([&] { return ops::matmul(v(0), v(3), false, true); });
    expect_ok([&] { return ops::matmul(v(2), v(3), true, true); });
    EXPECT_THROW(ops::matmul(v(0), v(0)), ContractViolation);
}

TEST_F(OpGrad, ShapeOps) {
    set.add("a", random_tensor({3, 4}, rng));
    set.add("b", random_tensor({3, 2}, rng));
    set.add("c", random_tensor({2, 4}, rng));
    expect_ok([&] { return ops::transpose(v(0)); });
    expect_ok([&] { return ops::reshape(v(0), {2, 6}); });
    expect_ok([&] { return ops::slice_cols(v(0), 1, 2); });
    expect_ok([&] { return ops::slice_rows(v(0), 1, 2); });
    expect_ok([&] { return ops::concat_cols<double>({v(0), v(1)}); });
    expect_ok([&] { return ops::concat_rows<double>({v(0), v(2)}); });
    expect_ok([&] { return ops::softmax(v(0), 1); });
    expect_ok([&] { return ops::softmax(v(0), 0); });
}

TEST_F(OpGrad, GatherAndCrossEntropy) {
    set.add("table", random_tensor({5, 3}, rng));
    set.add("logits", random_tensor({4, 6}, rng));
    const std::vector<std::int32_t> ids{4, 0, 4, 2};
    expect_ok([&] { return ops::gather_rows<double>(v(0), ids); });
    const std::vector<std::int32_t> targets{1, 5, 0, 3};
    const std::vector<std::uint8_t> mask{1, 0, 1, 1};
    expect_ok([&] { return ops::cross_entropy<double>(v(1), targets, mask); });
    const std::vector<std::int32_t> bad{7};
    EXPECT_THROW(ops::gather_rows<double>(v(0), bad), InputError);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
    auto logits = Var<double>::constant(Tensor<double>({2, 8}));
    const std::vector<std::int32_t> targets{3, 7};
    EXPECT_NEAR(ops::cross_entropy<double>(logits, targets).item(), std::log(8.0), 1e-12);
}
