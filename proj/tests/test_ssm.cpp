// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mvssm/gradcheck.hpp"
#include "mvssm/rng.hpp"
#include "mvssm/ssm.hpp"

using namespace mvssm;

namespace {

Tensor random_tensor(const Shape& shape, SeededRng& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false) {
  std::vector<double> v(numel_of(shape));
  for (auto& e : v) e = rng.uniform(lo, hi);
  return Tensor::from_vector(shape, std::move(v), requires_grad);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Plain loop reference for the whole pipeline (discretize, recur, read out).
std::vector<double> loop_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                const std::vector<double>& delta, const std::vector<double>& x,
                                const std::vector<double>& c, const std::vector<double>& d, std::size_t L,
                                std::size_t C, std::size_t N) {
  std::vector<double> h(C * N, 0.0), y(L * C, 0.0);
  for (std::size_t k = 0; k < L; ++k)
    for (std::size_t ch = 0; ch < C; ++ch) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double dt = delta[k * C + ch], an = a[ch * N + n];
        const double abar = std::exp(dt * an);
        const double bbar = std::expm1(dt * an) / an * b[k * N + n];
        double& hv = h[ch * N + n];
        hv = abar * hv + bbar * x[k * C + ch];
        acc += c[k * N + n] * hv;
      }
      y[k * C + ch] = acc + d[ch] * x[k * C + ch];
    }
  return y;
}

struct RandomSystem {
  Tensor a, b, delta, x, c, d;
};

RandomSystem random_system(std::size_t L, std::size_t C, std::size_t N, std::uint64_t seed) {
  SeededRng rng(seed);
  RandomSystem s;
  s.a = random_tensor({C, N}, rng, -3.0, -0.05);
  s.b = random_tensor({L, N}, rng);
  s.delta = random_tensor({L, C}, rng, 0.01, 0.5);
  s.x = random_tensor({L, C}, rng);
  s.c = random_tensor({L, N}, rng);
  s.d = random_tensor({C}, rng);
  return s;
}

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(Discretize, WorkedClosedFormValue) {
  auto ssm = discretize_zoh(Tensor::from_vector({1, 1}, {-2.0}), Tensor::from_vector({1, 1}, {1.0}),
                            Tensor::from_vector({1, 1}, {0.5}));
  EXPECT_NEAR(ssm.decay.item(), 0.36787944117144233, 1e-12);
  EXPECT_NEAR(ssm.input_gain.item(), 0.31606027941427883, 1e-12);
}

TEST(Discretize, ZeroStepHookGivesIdentityDecayAndZeroGain) {
  auto ssm = discretize_zoh(Tensor::from_vector({1, 2}, {-1.0, -4.0}), Tensor::from_vector({1, 2}, {1.0, 2.0}),
                            Tensor::from_vector({1, 1}, {0.0}), true);
  for (double v : ssm.decay.values()) EXPECT_EQ(v, 1.0);
  for (double v : ssm.input_gain.values()) EXPECT_EQ(v, 0.0);
}

TEST(Discretize, RejectsNonPositiveStep) {
  auto a = Tensor::from_vector({1, 1}, {-1.0});
  auto b = Tensor::from_vector({1, 1}, {1.0});
  EXPECT_THROW(discretize_zoh(a, b, Tensor::from_vector({1, 1}, {0.0})), std::invalid_argument);
  EXPECT_THROW(discretize_zoh(a, b, Tensor::from_vector({1, 1}, {-0.1})), std::invalid_argument);
}

TEST(Discretize, SmallStateValueUsesSeriesLimit) {
  auto ssm = discretize_zoh(Tensor::from_vector({1, 1}, {-1e-9}), Tensor::from_vector({1, 1}, {1.0}),
                            Tensor::from_vector({1, 1}, {0.5}));
  EXPECT_NEAR(ssm.input_gain.item(), 0.5, 1e-9);
}

TEST(Discretize, SeriesAgreesWithClosedFormAcrossThreshold) {
  // Long-double closed form as the reference on both sides of the switch.
  for (double p = -8.0; p <= -3.0; p += 0.05) {
    for (double sign : {-1.0, 1.0}) {
      const double x = sign * std::pow(10.0, p);
      const double delta = 0.7, a = x / delta;
      const long double ref = std::expm1(static_cast<long double>(delta) * a) / static_cast<long double>(a);
      const double got = zoh_gain(Tensor::scalar(delta), Tensor::scalar(a)).item();
      EXPECT_NEAR(got, static_cast<double>(ref), 1e-10) << "delta*a = " << x;
    }
  }
}

TEST(Discretize, DecayStaysInsideUnitInterval) {
  auto s = random_system(32, 4, 8, 3);
  auto ssm = discretize_zoh(s.a, s.b, s.delta);
  for (double v : ssm.decay.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Scan, ZeroDecayIsMemoryless) {
  const std::size_t L = 5, C = 2, N = 3;
  SeededRng rng(4);
  DiscreteSsm ssm{Tensor::zeros({L, C, N}), random_tensor({L, C, N}, rng)};
  auto x = random_tensor({L, C}, rng), c = random_tensor({L, N}, rng), d = random_tensor({C}, rng);
  auto y = scan_sequential(ssm, x, c, d).y;
  for (std::size_t k = 0; k < L; ++k)
    for (std::size_t ch = 0; ch < C; ++ch) {
      double expect = d[ch] * x[k * C + ch];
      for (std::size_t n = 0; n < N; ++n) expect += c[k * N + n] * ssm.input_gain[(k * C + ch) * N + n] * x[k * C + ch];
      EXPECT_NEAR(y[k * C + ch], expect, 1e-14);
    }
}

TEST(Scan, SingleStepState) {
  SeededRng rng(5);
  DiscreteSsm ssm{random_tensor({1, 2, 2}, rng, 0.1, 0.9), random_tensor({1, 2, 2}, rng)};
  auto x = random_tensor({1, 2}, rng);
  auto r = scan_sequential(ssm, x, random_tensor({1, 2}, rng), Tensor::zeros({2}));
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t n = 0; n < 2; ++n)
      EXPECT_DOUBLE_EQ(r.h_last[ch * 2 + n], ssm.input_gain[ch * 2 + n] * x[ch]);
}

TEST(Scan, TwoStepUnrolledMatchesBothModes) {
  DiscreteSsm ssm{Tensor::from_vector({2, 1, 1}, {0.5, 0.25}), Tensor::from_vector({2, 1, 1}, {2.0, 3.0})};
  auto x = Tensor::from_vector({2, 1}, {1.0, -1.0});
  const double h2 = 0.25 * 2.0 * 1.0 + 3.0 * -1.0;
  for (auto mode : {ScanMode::kSequential, ScanMode::kParallel})
    EXPECT_DOUBLE_EQ(scan(ssm, x, Tensor::full({2, 1}, 1.0), Tensor::zeros({1}), {}, mode).h_last.item(), h2);
}

TEST(Scan, MatchesLoopOracleOnLength64) {
  const std::size_t L = 64, C = 3, N = 4;
  auto s = random_system(L, C, N, 6);
  auto y = scan_sequential(discretize_zoh(s.a, s.b, s.delta), s.x, s.c, s.d).y;
  auto ref = loop_oracle(to_vec(s.a), to_vec(s.b), to_vec(s.delta), to_vec(s.x), to_vec(s.c), to_vec(s.d), L, C, N);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Scan, ParallelMatchesSequential) {
  double worst = 0.0;
  for (std::size_t L : {8u, 64u, 1024u})
    for (std::size_t N : {4u, 16u})
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto s = random_system(L, 2, N, 1000 * L + 10 * N + seed);
        auto ssm = discretize_zoh(s.a, s.b, s.delta);
        auto h0 = Tensor::full({2, N}, 0.3);
        auto seq = scan_sequential(ssm, s.x, s.c, s.d, h0);
        auto par = scan_parallel(ssm, s.x, s.c, s.d, h0);
        worst = std::max({worst, max_abs_diff(seq.y, par.y), max_abs_diff(seq.states, par.states)});
      }
  EXPECT_LT(worst, 1e-10);
}

TEST(Scan, RejectsLengthMismatch) {
  auto s = random_system(8, 2, 4, 7);
  auto ssm = discretize_zoh(s.a, s.b, s.delta);
  SeededRng rng(1);
  EXPECT_THROW(scan_sequential(ssm, random_tensor({7, 2}, rng), s.c, s.d), ShapeError);
  EXPECT_THROW(scan_parallel(ssm, s.x, random_tensor({9, 4}, rng), s.d), ShapeError);
  EXPECT_THROW(scan_sequential(ssm, s.x, s.c, s.d, Tensor::zeros({2, 3})), ShapeError);
}

TEST(Scan, StateStaysWithinGeometricBound) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto s = random_system(256, 2, 8, seed);
    auto ssm = discretize_zoh(s.a, s.b, s.delta);
    auto states = scan_sequential(ssm, s.x, s.c, s.d).states;
    double max_drive = 0.0, max_decay = 0.0;
    for (std::size_t k = 0; k < 256; ++k)
      for (std::size_t ch = 0; ch < 2; ++ch)
        for (std::size_t n = 0; n < 8; ++n) {
          const std::size_t i = (k * 2 + ch) * 8 + n;
          max_drive = std::max(max_drive, std::fabs(ssm.input_gain[i] * s.x[k * 2 + ch]));
          max_decay = std::max(max_decay, ssm.decay[i]);
        }
    const double bound = max_drive / (1.0 - max_decay);
    for (double h : states.values()) EXPECT_LE(std::fabs(h), bound * (1 + 1e-12));
  }
}

TEST(Scan, VanishingStepLeavesOnlySkip) {
  auto s = random_system(32, 3, 4, 8);
  auto tiny = Tensor::full({32, 3}, 1e-8);
  auto y = scan_sequential(discretize_zoh(s.a, s.b, tiny), s.x, s.c, s.d).y;
  auto dx = mul(s.x, s.d);
  EXPECT_LT(max_abs_diff(y, dx), 1e-6);
}

class SelectiveScanTest : public ::testing::Test {
 protected:
  void SetUp() override {
    SeededRng rng(21);
    config.channels = 4;
    config.state_dim = 3;
    scan = SelectiveScan::create(store, "ssm", config, rng);
    tokens = random_tensor({6, 4}, rng);
  }
  ParameterStore store;
  SsmConfig config;
  SelectiveScan scan;
  Tensor tokens;
};

TEST_F(SelectiveScanTest, InitialisationFollowsConvention) {
  auto a = scan.state_decay();
  for (std::size_t ch = 0; ch < 4; ++ch)
    for (std::size_t n = 0; n < 3; ++n) EXPECT_NEAR(a[ch * 3 + n], -static_cast<double>(n + 1), 1e-14);
  for (double b : scan.delta_proj.bias->value.values()) EXPECT_NEAR(std::log1p(std::exp(b)), 0.1, 1e-14);
  for (double d : scan.skip->value.values()) EXPECT_EQ(d, 1.0);
}

TEST_F(SelectiveScanTest, NeutralModulationIsBitExact) {
  auto plain = scan(tokens, {}, {}, {});
  ScanModulation neutral{Tensor::full({3}, 1.0), Tensor::full({3}, 1.0), Tensor::full({4}, 1.0),
                         Tensor::zeros({6, 3})};
  auto modulated = scan(tokens, {}, neutral, {});
  for (std::size_t i = 0; i < plain.y.numel(); ++i) EXPECT_EQ(plain.y[i], modulated.y[i]);
  for (std::size_t i = 0; i < plain.h_last.numel(); ++i) EXPECT_EQ(plain.h_last[i], modulated.h_last[i]);
}

TEST_F(SelectiveScanTest, ZeroInputGivesZeroOutput) {
  auto r = scan(Tensor::zeros({6, 4}), {}, {}, {});
  for (double v : r.y.values()) EXPECT_EQ(v, 0.0);
  for (double v : r.h_last.values()) EXPECT_EQ(v, 0.0);
}

TEST_F(SelectiveScanTest, ModulationChangesOutput) {
  SeededRng rng(5);
  ScanModulation m{random_tensor({3}, rng, 0.5, 1.5), random_tensor({3}, rng, 0.5, 1.5),
                   random_tensor({4}, rng, 0.5, 1.5), random_tensor({6, 3}, rng)};
  EXPECT_GT(max_abs_diff(scan(tokens, {}, {}, {}).y, scan(tokens, {}, m, {}).y), 1e-6);
}

TEST_F(SelectiveScanTest, RejectsBadModulationShapes) {
  EXPECT_THROW(scan(tokens, {}, {Tensor::full({4}, 1.0), {}, {}, {}}, {}), ShapeError);
  EXPECT_THROW(scan(tokens, {}, {{}, {}, Tensor::full({3}, 1.0), {}}, {}), ShapeError);
  EXPECT_THROW(scan(tokens, {}, {{}, {}, {}, Tensor::zeros({5, 3})}, {}), ShapeError);
  EXPECT_THROW(scan(Tensor::zeros({6, 5}), {}, {}, {}), ShapeError);
}

TEST_F(SelectiveScanTest, ModesAgree) {
  SeededRng rng(9);
  auto h0 = random_tensor({4, 3}, rng);
  auto a = scan(tokens, {}, {}, h0, ScanMode::kSequential);
  auto b = scan(tokens, {}, {}, h0, ScanMode::kParallel);
  EXPECT_LT(max_abs_diff(a.y, b.y), 1e-12);
}

TEST_F(SelectiveScanTest, GradientsMatchFiniteDifferences) {
  SeededRng rng(33);
  // Move the zero-initialised offsets away from special points first.
  for (double& v : scan.delta_proj.bias->value.mutable_values()) v += rng.uniform(-0.3, 0.3);
  ScanModulation m{random_tensor({3}, rng, 0.5, 1.5), random_tensor({3}, rng, 0.5, 1.5),
                   random_tensor({4}, rng, 0.5, 1.5), random_tensor({6, 3}, rng)};
  auto h0 = random_tensor({4, 3}, rng, -1.0, 1.0, true);
  auto values = random_tensor({6, 4}, rng, -1.0, 1.0, true);
  std::vector<Tensor> leaves = {scan.a_log->value, scan.b_proj.weight->value, scan.c_proj.weight->value,
                                scan.delta_proj.weight->value, scan.delta_proj.bias->value, scan.skip->value,
                                h0, values};
  for (auto mode : {ScanMode::kSequential, ScanMode::kParallel}) {
    const double err = finite_difference_check(
        [&] {
          auto r = scan(tokens, values, m, h0, mode);
          return add(sum(r.y), sum(r.h_last));
        },
        leaves);
    EXPECT_LT(err, 1e-4);
  }
}
