// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "mvssm/gradcheck.hpp"
#include "mvssm/ops.hpp"
#include "mvssm/router.hpp"

using namespace mvssm;

namespace {

Tensor random_tensor(const Shape& shape, SeededRng& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false) {
  std::vector<double> v(numel_of(shape));
  for (auto& e : v) e = rng.uniform(lo, hi);
  return Tensor::from_vector(shape, std::move(v), requires_grad);
}

// Brute-force stable sort: repeatedly scan for the smallest remaining class, taking
// the earliest token on ties.
std::vector<std::size_t> brute_stable_sort(const std::vector<std::size_t>& cls) {
  std::vector<bool> used(cls.size(), false);
  std::vector<std::size_t> out;
  for (std::size_t round = 0; round < cls.size(); ++round) {
    std::size_t best = cls.size();
    for (std::size_t i = 0; i < cls.size(); ++i)
      if (!used[i] && (best == cls.size() || cls[i] < cls[best])) best = i;
    used[best] = true;
    out.push_back(best);
  }
  return out;
}

RouterConfig small_config(std::size_t classes = 4) {
  RouterConfig c;
  c.channels = 6;
  c.d_inner = 8;
  c.classes = classes;
  c.prompt_dim = 3;
  return c;
}

}  // namespace

TEST(GumbelSoftmax, NoiseOffDominantLogit) {
  auto w = gumbel_softmax(Tensor::from_vector({1, 3}, {10.0, 0.0, 0.0}), 0.1, false, nullptr);
  EXPECT_NEAR(w[0], 1.0, 1e-4);
  EXPECT_NEAR(w[1], 0.0, 1e-4);
  EXPECT_NEAR(w[2], 0.0, 1e-4);
}

TEST(GumbelSoftmax, RowsFormASimplex) {
  SeededRng rng(3), noise(4);
  auto logits = random_tensor({50, 7}, rng, -3.0, 3.0);
  auto soft = gumbel_softmax(logits, 0.7, false, &noise);
  auto hard = gumbel_softmax(logits, 0.7, true, &noise);
  for (std::size_t i = 0; i < 50; ++i) {
    double s = 0.0, h = 0.0;
    int ones = 0;
    for (std::size_t k = 0; k < 7; ++k) {
      s += soft[i * 7 + k];
      h += hard[i * 7 + k];
      if (hard[i * 7 + k] == 1.0) ++ones;
      else EXPECT_EQ(hard[i * 7 + k], 0.0);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
    EXPECT_EQ(h, 1.0);
    EXPECT_EQ(ones, 1);
  }
}

TEST(GumbelSoftmax, ArgmaxFrequenciesMatchSoftmax) {
  const std::vector<double> l = {0.5, -0.3, 1.2, 0.0};
  double z = 0.0;
  for (double v : l) z += std::exp(v);
  const std::size_t draws = 20000;
  // One row per draw so the whole sample is a single call.
  std::vector<double> tiled;
  for (std::size_t i = 0; i < draws; ++i) tiled.insert(tiled.end(), l.begin(), l.end());
  SeededRng noise(2024);
  auto w = gumbel_softmax(Tensor::from_vector({draws, 4}, tiled), 1.0, true, &noise);
  std::vector<double> freq(4, 0.0);
  for (auto c : row_argmax(w)) freq[c] += 1.0 / draws;
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(freq[k], std::exp(l[k]) / z, 0.02) << "class " << k;
}

TEST(GumbelSoftmax, RejectsNonPositiveTemperature) {
  auto logits = Tensor::zeros({2, 2});
  EXPECT_THROW(gumbel_softmax(logits, 0.0, false, nullptr), std::invalid_argument);
  EXPECT_THROW(gumbel_softmax(logits, -1.0, true, nullptr), std::invalid_argument);
}

TEST(GumbelSoftmax, HardGradientEqualsSoftGradientAtSameNoise) {
  SeededRng rng(8);
  auto logits = random_tensor({5, 4}, rng, -2.0, 2.0, true);
  auto readout = random_tensor({5, 4}, rng);
  auto grad_for = [&](bool hard) {
    logits.zero_grad();
    SeededRng noise(77);
    GradTape tape;
    {
      TapeScope scope(tape);
      auto loss = sum(mul(gumbel_softmax(logits, 0.5, hard, &noise), readout));
      tape.backward(loss);
    }
    return logits.grad();
  };
  const auto soft = grad_for(false);
  const auto hard = grad_for(true);
  for (std::size_t i = 0; i < soft.size(); ++i) EXPECT_EQ(soft[i], hard[i]);
  EXPECT_GT(*std::max_element(soft.begin(), soft.end()), 0.0);
}

TEST(SortByClass, WorkedExample) {
  auto p = sort_by_class({2, 0, 1, 0}, 3);
  EXPECT_EQ(p.order, (std::vector<std::size_t>{1, 3, 2, 0}));
  EXPECT_EQ(p.inverse, (std::vector<std::size_t>{3, 0, 2, 1}));
}

TEST(SortByClass, SingleClassIsIdentity) {
  auto p = sort_by_class(std::vector<std::size_t>(9, 2), 3);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(p.order[i], i);
}

TEST(SortByClass, MatchesBruteForceAndInvertsExactly) {
  SeededRng rng(11);
  for (std::size_t n : {1u, 2u, 17u, 500u, 4096u}) {
    std::vector<std::size_t> cls(n);
    for (auto& c : cls) c = rng.index(64);
    auto p = sort_by_class(cls, 64);
    if (n <= 500) {
      EXPECT_EQ(p.order, brute_stable_sort(cls));
    }
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(p.inverse[p.order[i]], i);
    for (std::size_t j = 1; j < n; ++j) EXPECT_LE(cls[p.order[j - 1]], cls[p.order[j]]);
    auto x = random_tensor({n, 3}, rng);
    auto back = restore_order(gather(x, 0, p.order), p);
    for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(back[i], x[i]);
  }
}

TEST(SortByClass, RejectsOutOfRangeIndex) {
  EXPECT_THROW(sort_by_class({0, 4}, 4), std::out_of_range);
}

TEST(PromptLookup, SelectionZeroAndMixture) {
  ParameterStore store;
  SeededRng rng(1);
  auto proj = Linear::create(store, "p", 2, 2, rng, false);
  auto w_proj = proj.weight->value.mutable_values();
  const double wp[4] = {1.0, 2.0, -1.0, 0.5};  // [[1, 2], [-1, 0.5]]
  std::copy(wp, wp + 4, w_proj.begin());
  auto table = Tensor::from_vector({2, 2}, {3.0, 1.0, -1.0, 5.0});

  auto one_hot = prompt_lookup(Tensor::from_vector({1, 2}, {0.0, 1.0}), table, proj);
  // row 1 = [-1, 5] -> [-1*1 + 5*-1, -1*2 + 5*0.5]
  EXPECT_DOUBLE_EQ(one_hot[0], -6.0);
  EXPECT_DOUBLE_EQ(one_hot[1], 0.5);

  auto zero = prompt_lookup(Tensor::zeros({1, 2}), table, proj);
  EXPECT_EQ(zero[0], 0.0);
  EXPECT_EQ(zero[1], 0.0);

  // mean row = [1, 3] -> [1 - 3, 2 + 1.5]
  auto mixed = prompt_lookup(Tensor::from_vector({1, 2}, {0.5, 0.5}), table, proj);
  EXPECT_DOUBLE_EQ(mixed[0], -2.0);
  EXPECT_DOUBLE_EQ(mixed[1], 3.5);

  EXPECT_THROW(prompt_lookup(Tensor::zeros({1, 3}), table, proj), ShapeError);
}

TEST(SemanticModulateC, ZeroOneHotAndWeightedSum) {
  auto base = Tensor::from_vector({1, 2}, {0.5, -0.5});
  auto protos = Tensor::from_vector({2, 2}, {1.0, 2.0, 4.0, -8.0});
  auto z = semantic_modulate_c(base, Tensor::zeros({1, 2}), protos);
  EXPECT_EQ(z[0], 0.5);
  EXPECT_EQ(z[1], -0.5);
  auto sel = semantic_modulate_c(base, Tensor::from_vector({1, 2}, {0.0, 1.0}), protos);
  EXPECT_EQ(sel[0], 4.5);
  EXPECT_EQ(sel[1], -8.5);
  auto mix = semantic_modulate_c(base, Tensor::from_vector({1, 2}, {0.25, 0.75}), protos);
  EXPECT_DOUBLE_EQ(mix[0], 0.5 + 0.25 * 1.0 + 0.75 * 4.0);
  EXPECT_DOUBLE_EQ(mix[1], -0.5 + 0.25 * 2.0 + 0.75 * -8.0);
  EXPECT_THROW(semantic_modulate_c(Tensor::zeros({1, 3}), Tensor::zeros({1, 2}), protos), ShapeError);
}

TEST(SemanticModulateC, LookupEqualsPrototypeOffsets) {
  ParameterStore store;
  SeededRng rng(5);
  auto router = SemanticRouter::create(store, "r", small_config(), rng);
  auto w = gumbel_softmax(random_tensor({7, 4}, rng), 1.0, false, nullptr);
  auto base = random_tensor({7, 3}, rng);
  auto via_lookup = add(base, prompt_lookup(w, router.table->value, router.prompt_proj));
  auto via_offsets = semantic_modulate_c(base, w, router.prototypes());
  for (std::size_t i = 0; i < via_lookup.numel(); ++i) EXPECT_NEAR(via_lookup[i], via_offsets[i], 1e-14);
}

TEST(SemanticQuery, ZeroWeightsAndMatrixOracle) {
  ParameterStore store;
  SeededRng rng(2);
  auto router = SemanticRouter::create(store, "r", small_config(), rng);
  auto tokens = random_tensor({2, 6}, rng);

  // Independent two-layer product with the tanh-approximate GELU.
  const auto& w1 = router.query_mlp.first.weight->value;
  const auto& b1 = router.query_mlp.first.bias->value;
  const auto& w2 = router.query_mlp.second.weight->value;
  const auto& b2 = router.query_mlp.second.bias->value;
  auto q = router.query(tokens);
  for (std::size_t t = 0; t < 2; ++t) {
    std::vector<double> hidden(8);
    for (std::size_t j = 0; j < 8; ++j) {
      double s = b1[j];
      for (std::size_t i = 0; i < 6; ++i) s += tokens[t * 6 + i] * w1[i * 8 + j];
      hidden[j] = 0.5 * s * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (s + 0.044715 * s * s * s)));
    }
    for (std::size_t j = 0; j < 8; ++j) {
      double s = b2[j];
      for (std::size_t i = 0; i < 8; ++i) s += hidden[i] * w2[i * 8 + j];
      EXPECT_NEAR(q[t * 8 + j], s, 1e-12);
    }
  }

  EXPECT_EQ(router.query(random_tensor({1, 6}, rng)).shape(), (Shape{1, 8}));
  EXPECT_THROW(router.query(random_tensor({2, 5}, rng)), ShapeError);
  for (auto* p : store.all()) std::fill(p->value.mutable_values().begin(), p->value.mutable_values().end(), 0.0);
  const auto zeroed = router.query(tokens);
  for (double v : zeroed.values()) EXPECT_EQ(v, 0.0);
}

TEST(Route, SingleClassKeepsOrderAndSharesPrompt) {
  ParameterStore store;
  SeededRng rng(3), noise(4);
  auto router = SemanticRouter::create(store, "r", small_config(1), rng);
  auto tokens = random_tensor({10, 6}, rng);
  auto r = router.route(tokens, &noise);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(r.permutation.order[i], i);
  for (std::size_t i = 1; i < 10; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(r.prompts[i * 3 + k], r.prompts[k]);
}

TEST(Route, RestoreRecoversOriginalOrder) {
  ParameterStore store;
  SeededRng rng(6), noise(7);
  auto router = SemanticRouter::create(store, "r", small_config(), rng);
  auto tokens = random_tensor({32, 6}, rng, -3.0, 3.0);
  auto r = router.route(tokens, &noise);
  auto back = restore_order(r.reordered_tokens, r.permutation);
  for (std::size_t i = 0; i < tokens.numel(); ++i) EXPECT_EQ(back[i], tokens[i]);
  for (std::size_t j = 1; j < 32; ++j)
    EXPECT_LE(r.class_index[r.permutation.order[j - 1]], r.class_index[r.permutation.order[j]]);
}

TEST(Route, PlantedPatternAcrossViewsFormsOneContiguousRun) {
  // Two 4x4 views; the same distinctive pattern is planted at three positions in each view.
  ParameterStore store;
  SeededRng rng(9);
  auto config = small_config(8);
  auto router = SemanticRouter::create(store, "r", config, rng);
  const std::size_t per_view = 16, L = 2 * per_view;
  std::vector<double> tok(L * 6);
  for (auto& v : tok) v = rng.uniform(-0.2, 0.2);
  const std::vector<std::size_t> planted = {1, 6, 11, per_view + 0, per_view + 9, per_view + 15};
  for (auto t : planted)
    for (std::size_t c = 0; c < 6; ++c) tok[t * 6 + c] = (c % 2 ? -4.0 : 4.0);
  auto r = router.route(Tensor::from_vector({L, 6}, tok), nullptr);

  // Brute-force grouping: tokens sharing the planted class.
  const std::size_t planted_class = r.class_index[planted[0]];
  std::vector<std::size_t> group;
  for (std::size_t t = 0; t < L; ++t)
    if (r.class_index[t] == planted_class) group.push_back(t);
  for (auto t : planted) EXPECT_EQ(r.class_index[t], planted_class);

  std::vector<std::size_t> positions;
  for (auto t : group) positions.push_back(r.permutation.inverse[t]);
  std::sort(positions.begin(), positions.end());
  EXPECT_EQ(positions.back() - positions.front() + 1, positions.size());
  // Within the run the original (view-major) order is kept.
  for (std::size_t j = 0; j < group.size(); ++j) EXPECT_EQ(r.permutation.order[positions.front() + j], group[j]);
}

TEST(Route, PipelineGradientWithNoiseOff) {
  ParameterStore store;
  SeededRng rng(12);
  auto config = small_config();
  config.hard = false;
  auto router = SemanticRouter::create(store, "r", config, rng);
  auto tokens = random_tensor({6, 6}, rng, -1.0, 1.0, true);
  auto readout = random_tensor({6, 6}, rng);
  auto prompt_readout = random_tensor({6, 3}, rng);
  std::vector<Tensor> leaves = {tokens};
  for (auto* p : store.all()) leaves.push_back(p->value);
  // Fix the permutation from an initial pass; during differentiation it is a constant index map.
  const auto fixed = router.route(tokens, nullptr).permutation;
  const double err = finite_difference_check(
      [&] {
        auto r = router.route(tokens, nullptr);
        auto prompts = gather(r.prompts, 0, fixed.order);
        auto toks = gather(tokens, 0, fixed.order);
        return add(sum(mul(restore_order(toks, fixed), readout)),
                   sum(mul(restore_order(prompts, fixed), prompt_readout)));
      },
      leaves);
  EXPECT_LT(err, 1e-4);
}

TEST(ClassDump, WritesOneLinePerToken) {
  std::ostringstream os;
  write_class_dump(os, {3, 1, 0, 2}, 2);
  EXPECT_EQ(os.str(), "# token view class\n0 0 3\n1 0 1\n2 1 0\n3 1 2\n");
}
