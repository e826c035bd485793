// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mvssm/gradcheck.hpp"
#include "mvssm/ops.hpp"
#include "mvssm/rng.hpp"

using namespace mvssm;

namespace {

Tensor random_tensor(Shape shape, SeededRng& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_vector(std::move(shape), std::move(v), requires_grad);
}

// Contracts an op's output with fixed random weights so every output element
// contributes to the scalar under test.
Tensor contract(const Tensor& y, std::uint64_t seed) {
  SeededRng rng(seed);
  Tensor w = random_tensor(y.shape(), rng, -1.0, 1.0);
  return sum(mul(y, w));
}

struct UnaryCase {
  std::string name;
  std::function<Tensor(const Tensor&)> op;
  Shape shape;
  double lo = -1.0, hi = 1.0;
};

std::vector<UnaryCase> unary_cases() {
  return {
      {"exponential", [](const Tensor& x) { return exp(x); }, {3, 4}},
      {"natural-log", [](const Tensor& x) { return log(x); }, {3, 4}, 0.2, 2.0},
      {"softplus", [](const Tensor& x) { return softplus(x); }, {3, 4}, -3.0, 3.0},
      {"sigmoid", [](const Tensor& x) { return sigmoid(x); }, {3, 4}, -3.0, 3.0},
      {"tanh", [](const Tensor& x) { return mvssm::tanh(x); }, {3, 4}},
      {"gelu", [](const Tensor& x) { return gelu(x); }, {3, 4}, -2.0, 2.0},
      {"abs", [](const Tensor& x) { return mvssm::abs(x); }, {3, 4}},
      {"power", [](const Tensor& x) { return mvssm::pow(x, 1.7); }, {3, 4}, 0.3, 2.0},
      {"power-negative", [](const Tensor& x) { return mvssm::pow(x, -0.5); }, {3, 4}, 0.3, 2.0},
      {"clip", [](const Tensor& x) { return clip(x, -0.5, 0.5); }, {3, 4}},
      {"scale", [](const Tensor& x) { return scale(x, -2.5); }, {3, 4}},
      {"reduce-sum", [](const Tensor& x) { return sum(x); }, {3, 4}},
      {"reduce-sum-axis0", [](const Tensor& x) { return sum(x, 0); }, {3, 4, 2}},
      {"reduce-sum-axis1-keep", [](const Tensor& x) { return sum(x, 1, true); }, {3, 4, 2}},
      {"reduce-mean", [](const Tensor& x) { return mean(x); }, {3, 4}},
      {"reduce-mean-axis2", [](const Tensor& x) { return mean(x, 2); }, {3, 4, 2}},
      {"softmax-last", [](const Tensor& x) { return softmax(x, 1); }, {3, 4}, -2.0, 2.0},
      {"softmax-middle", [](const Tensor& x) { return softmax(x, 1); }, {2, 3, 4}, -2.0, 2.0},
      {"log-softmax", [](const Tensor& x) { return log_softmax(x, 1); }, {3, 5}, -2.0, 2.0},
      {"layer-normalization", [](const Tensor& x) { return layer_norm(x); }, {3, 6}},
      {"reshape", [](const Tensor& x) { return reshape(x, {4, 3}); }, {3, 4}},
      {"permute-axes", [](const Tensor& x) { return permute(x, {2, 0, 1}); }, {2, 3, 4}},
      {"gather-by-index", [](const Tensor& x) { return gather(x, 0, {2, 0, 0, 1}); }, {3, 4}},
      {"gather-axis1", [](const Tensor& x) { return gather(x, 1, {3, 1}); }, {3, 4}},
      {"scatter-add-by-index", [](const Tensor& x) { return scatter_add(x, 0, {1, 1, 0}, 4); }, {3, 2}},
      {"concatenate", [](const Tensor& x) { return concat({x, scale(x, 2.0)}, 1); }, {3, 2}},
      {"slice", [](const Tensor& x) { return slice(x, 1, 1, 3); }, {3, 4}},
      {"matrix-multiply-self",
       [](const Tensor& x) { return matmul(x, reshape(x, {4, 3})); }, {3, 4}},
  };
}

}  // namespace

TEST(Primitives, MultiplyExample) {
  Tensor a = Tensor::from_vector({2}, {2, 3});
  Tensor b = Tensor::from_vector({2}, {4, 5});
  Tensor c = mul(a, b);
  EXPECT_EQ(c[0], 8.0);
  EXPECT_EQ(c[1], 15.0);
}

TEST(Primitives, SoftmaxOfZerosIsUniform) {
  Tensor y = softmax(Tensor::from_vector({2}, {0.0, 0.0}), 0);
  EXPECT_EQ(y[0], 0.5);
  EXPECT_EQ(y[1], 0.5);
}

TEST(Primitives, SoftmaxRowsAreInUnitIntervalAndSumToOne) {
  SeededRng rng(3);
  Tensor y = softmax(random_tensor({5, 7}, rng, -4, 4), 1);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      const double v = y[r * 7 + j];
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Primitives, MatmulMatchesTripleLoopOracle) {
  SeededRng rng(11);
  Tensor a = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({3, 2}, rng);
  Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double expect = 0;
      for (std::size_t k = 0; k < 3; ++k) expect += a[i * 3 + k] * b[k * 2 + j];
      EXPECT_NEAR(c[i * 2 + j], expect, 1e-12);
    }
}

TEST(Primitives, BatchedMatmulFlattensLeadingExtents) {
  SeededRng rng(12);
  Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor w = random_tensor({4, 5}, rng);
  Tensor c = matmul(a, w);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  Tensor flat = matmul(reshape(a, {6, 4}), w);
  for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_EQ(c[i], flat[i]);
}

TEST(Primitives, BroadcastMultiplyCommutesExactly) {
  SeededRng rng(5);
  Tensor a = random_tensor({4, 3}, rng);
  Tensor b = random_tensor({4, 3}, rng);
  Tensor ab = mul(a, b), ba = mul(b, a);
  for (std::size_t i = 0; i < ab.numel(); ++i) EXPECT_EQ(ab[i], ba[i]);
  Tensor row = random_tensor({3}, rng);
  Tensor ar = mul(a, row), ra = mul(row, a);
  ASSERT_EQ(ar.shape(), ra.shape());
  for (std::size_t i = 0; i < ar.numel(); ++i) EXPECT_EQ(ar[i], ra[i]);
}

TEST(Primitives, BroadcastOverMiddleExtent) {
  Tensor a = Tensor::from_vector({2, 1, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_vector({3, 1}, {10, 20, 30});
  Tensor c = add(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 2}));
  EXPECT_EQ(c[0], 11.0);
  EXPECT_EQ(c[3], 22.0);
  EXPECT_EQ(c[11], 34.0);
}

TEST(Primitives, ReshapeRoundTripIsBitExact) {
  SeededRng rng(9);
  Tensor x = random_tensor({3, 4, 5}, rng);
  Tensor back = reshape(reshape(x, {12, 5}), {3, 4, 5});
  ASSERT_EQ(back.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(back[i], x[i]);
}

TEST(Primitives, ErrorsAreReported) {
  Tensor a = Tensor::from_vector({2}, {1, 2});
  Tensor b = Tensor::from_vector({3}, {1, 2, 3});
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matmul(a, b), ShapeError);
  EXPECT_THROW(log(Tensor::from_vector({1}, {-1.0})), NumericError);
  EXPECT_THROW(exp(Tensor::from_vector({1}, {1000.0})), NumericError);
  EXPECT_THROW(gather(a, 0, {2}), std::out_of_range);
  EXPECT_THROW(reshape(a, {3}), ShapeError);
  EXPECT_THROW(Tensor::from_vector({2}, {1.0, NAN}), NumericError);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from_vector({3}, {1, -2, 5}, true);
  GradTape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(x));
  }
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceInput) {
  Tensor x = Tensor::from_vector({2}, {3, -2}, true);
  GradTape tape;
  TapeScope scope(tape);
  tape.backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad()[0], 6.0);
  EXPECT_EQ(x.grad()[1], -4.0);
}

TEST(Backward, RejectsNonScalarAndConsumedTape) {
  Tensor x = Tensor::from_vector({2}, {1, 2}, true);
  GradTape tape;
  TapeScope scope(tape);
  Tensor y = mul(x, x);
  EXPECT_THROW(tape.backward(y), TapeError);
  GradTape tape2;
  TapeScope scope2(tape2);
  Tensor l = sum(mul(x, x));
  tape2.backward(l);
  EXPECT_TRUE(tape2.consumed());
  EXPECT_THROW(tape2.backward(l), TapeError);
}

TEST(Backward, LeafWithTwoConsumersAccumulatesBranchGradients) {
  SeededRng rng(21);
  Tensor init = random_tensor({4}, rng);
  auto branch_a = [](const Tensor& x) { return sum(exp(x)); };
  auto branch_b = [](const Tensor& x) { return sum(mvssm::tanh(scale(x, 3.0))); };

  Tensor joint = Tensor::from_vector({4}, std::vector<double>(init.values().begin(), init.values().end()), true);
  {
    GradTape tape;
    TapeScope s(tape);
    tape.backward(add(branch_a(joint), branch_b(joint)));
  }
  std::vector<double> split(4, 0.0);
  for (auto* branch : {+[](const Tensor& x) { return sum(exp(x)); },
                       +[](const Tensor& x) { return sum(mvssm::tanh(scale(x, 3.0))); }}) {
    Tensor x = Tensor::from_vector({4}, std::vector<double>(init.values().begin(), init.values().end()), true);
    GradTape tape;
    TapeScope s(tape);
    tape.backward(branch(x));
    for (std::size_t i = 0; i < 4; ++i) split[i] += x.grad()[i];
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(joint.grad()[i], split[i], 1e-15);
}

TEST(Backward, GradientsAccumulateAcrossPassesUntilZeroed) {
  Tensor x = Tensor::from_vector({2}, {1, 2}, true);
  for (int pass = 0; pass < 2; ++pass) {
    GradTape tape;
    TapeScope s(tape);
    tape.backward(sum(x));
  }
  EXPECT_EQ(x.grad()[0], 2.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Backward, NoTapeMeansNoRecording) {
  Tensor x = Tensor::from_vector({2}, {1, 2}, true);
  Tensor y = exp(x);
  EXPECT_FALSE(y.requires_grad());
  GradTape tape;
  TapeScope s(tape);
  {
    NoGradScope ng;
    EXPECT_FALSE(exp(x).requires_grad());
  }
  EXPECT_TRUE(exp(x).requires_grad());
  EXPECT_EQ(tape.size(), 1u);
}

TEST(FiniteDifference, LinearFunctionIsExact) {
  SeededRng rng(1);
  Tensor p = random_tensor({5}, rng);
  EXPECT_LT(finite_difference_check([](const Tensor& x) { return sum(x); }, p, 1e-5), 1e-10);
}

TEST(FiniteDifference, ExpAtZeroAndOne) {
  Tensor p = Tensor::from_vector({2}, {0.0, 1.0});
  EXPECT_LT(finite_difference_check([](const Tensor& x) { return sum(exp(x)); }, p, 1e-5), 1e-6);
}

TEST(FiniteDifference, SumOfSoftmaxHasZeroGradient) {
  SeededRng rng(2);
  Tensor p = random_tensor({4}, rng);
  Tensor leaf = Tensor::from_vector({4}, std::vector<double>(p.values().begin(), p.values().end()), true);
  GradTape tape;
  {
    TapeScope s(tape);
    tape.backward(sum(softmax(leaf, 0)));
  }
  for (double g : leaf.grad()) EXPECT_LT(std::fabs(g), 1e-15);
  // Both gradients vanish, so only the floor of the relative error matters here:
  // the numeric side is pure rounding noise of order eps / step.
  EXPECT_LT(finite_difference_check([](const Tensor& x) { return sum(softmax(x, 0)); }, p, 1e-5),
            1e-2);
}

TEST(FiniteDifference, RejectsBadStep) {
  Tensor p = Tensor::from_vector({1}, {0.0});
  EXPECT_THROW(finite_difference_check([](const Tensor& x) { return sum(x); }, p, 0.0),
               std::invalid_argument);
}

class UnaryPrimitiveGradient : public ::testing::TestWithParam<UnaryCase> {};

TEST_P(UnaryPrimitiveGradient, MatchesCentralDifferencesAtTenPoints) {
  const auto& c = GetParam();
  for (std::uint64_t point = 0; point < 10; ++point) {
    SeededRng rng(mix_seed(1000, point));
    Tensor p = random_tensor(c.shape, rng, c.lo, c.hi);
    const double err = finite_difference_check(
        [&](const Tensor& x) { return contract(c.op(x), 77 + point); }, p, 1e-5);
    EXPECT_LT(err, 1e-4) << c.name << " point " << point;
  }
}

INSTANTIATE_TEST_SUITE_P(AllUnary, UnaryPrimitiveGradient, ::testing::ValuesIn(unary_cases()),
                         [](const auto& info) {
                           std::string n = info.param.name;
                           for (auto& ch : n)
                             if (ch == '-') ch = '_';
                           return n;
                         });

struct BinaryCase {
  std::string name;
  std::function<Tensor(const Tensor&, const Tensor&)> op;
  Shape a_shape, b_shape;
  double lo = -1.0, hi = 1.0;
  double b_lo = -1.0, b_hi = 1.0;
};

class BinaryPrimitiveGradient : public ::testing::TestWithParam<BinaryCase> {};

TEST_P(BinaryPrimitiveGradient, MatchesCentralDifferencesAtTenPoints) {
  const auto& c = GetParam();
  for (std::uint64_t point = 0; point < 10; ++point) {
    SeededRng rng(mix_seed(2000, point));
    Tensor a = random_tensor(c.a_shape, rng, c.lo, c.hi, true);
    Tensor b = random_tensor(c.b_shape, rng, c.b_lo, c.b_hi, true);
    const double err =
        finite_difference_check([&] { return contract(c.op(a, b), 91 + point); }, {a, b}, 1e-5);
    EXPECT_LT(err, 1e-4) << c.name << " point " << point;
  }
}

INSTANTIATE_TEST_SUITE_P(
    AllBinary, BinaryPrimitiveGradient,
    ::testing::Values(
        BinaryCase{"add", [](auto& a, auto& b) { return add(a, b); }, {3, 4}, {3, 4}},
        BinaryCase{"add_broadcast", [](auto& a, auto& b) { return add(a, b); }, {3, 4}, {4}},
        BinaryCase{"subtract", [](auto& a, auto& b) { return sub(a, b); }, {2, 1, 3}, {4, 1}},
        BinaryCase{"multiply", [](auto& a, auto& b) { return mul(a, b); }, {3, 4}, {3, 4}},
        BinaryCase{"multiply_broadcast", [](auto& a, auto& b) { return mul(a, b); }, {3, 2, 1}, {2, 4}},
        BinaryCase{"divide", [](auto& a, auto& b) { return div(a, b); }, {3, 4}, {4}, -1, 1, 0.5, 2},
        BinaryCase{"matrix_multiply", [](auto& a, auto& b) { return matmul(a, b); }, {2, 3}, {3, 2}},
        BinaryCase{"matrix_multiply_batched", [](auto& a, auto& b) { return matmul(a, b); }, {2, 3, 4}, {4, 5}},
        BinaryCase{"zoh_gain", [](auto& d, auto& a) { return zoh_gain(d, a); }, {3, 2, 1}, {2, 4}, 0.05, 1.0, -3.0, -0.5},
        BinaryCase{"zoh_gain_series", [](auto& d, auto& a) { return zoh_gain(d, a); }, {3}, {3}, 1e-3, 2e-3, -1e-2, -5e-3}),
    [](const auto& info) { return info.param.name; });

class RecurrenceGradient : public ::testing::TestWithParam<ScanMode> {};

TEST_P(RecurrenceGradient, AllInputsMatchCentralDifferences) {
  for (std::uint64_t point = 0; point < 10; ++point) {
    SeededRng rng(mix_seed(3000, point));
    Tensor decay = random_tensor({7, 2, 3}, rng, 0.1, 0.95, true);
    Tensor input = random_tensor({7, 2, 3}, rng, -1, 1, true);
    Tensor h0 = random_tensor({2, 3}, rng, -1, 1, true);
    const double err = finite_difference_check(
        [&] { return contract(linear_recurrence(decay, input, h0, GetParam()), 5 + point); },
        {decay, input, h0}, 1e-5);
    EXPECT_LT(err, 1e-4) << "point " << point;
  }
}

INSTANTIATE_TEST_SUITE_P(BothModes, RecurrenceGradient,
                         ::testing::Values(ScanMode::kSequential, ScanMode::kParallel));

TEST(Primitives, StraightThroughForwardsHardValueAndPassesGradientToSoft) {
  Tensor soft = Tensor::from_vector({3}, {0.2, 0.5, 0.3}, true);
  Tensor hard = Tensor::from_vector({3}, {0.0, 1.0, 0.0});
  Tensor w = Tensor::from_vector({3}, {1.0, -2.0, 4.0});
  GradTape tape;
  TapeScope s(tape);
  Tensor y = straight_through(soft, hard);
  EXPECT_EQ(y[1], 1.0);
  EXPECT_EQ(y[0], 0.0);
  tape.backward(sum(mul(y, w)));
  EXPECT_EQ(soft.grad(), (std::vector<double>{1.0, -2.0, 4.0}));
}
