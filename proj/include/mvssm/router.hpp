// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "mvssm/parameter.hpp"
#include "mvssm/rng.hpp"
#include "mvssm/tensor.hpp"

namespace mvssm {

// Row-wise Gumbel-softmax over the last axis of logits [L, K]. A null rng disables the
// noise (plain temperature softmax). In hard mode the forward value is the one-hot of
// the row argmax and the gradient flows through the soft weights.
Tensor gumbel_softmax(const Tensor& logits, double temperature, bool hard, SeededRng* rng);

// Index of the largest entry of each row of a [L, K] tensor; ties resolve to the lowest index.
std::vector<std::size_t> row_argmax(const Tensor& weights);

struct Permutation {
  std::vector<std::size_t> order;    // pi: position j holds original token order[j]
  std::vector<std::size_t> inverse;  // inverse[order[j]] = j
};

// Stable argsort of class indices in [0, classes).
Permutation sort_by_class(const std::vector<std::size_t>& class_index, std::size_t classes);

// prompts = projection(weights @ table); weights [L, K], table [K, d_inner].
Tensor prompt_lookup(const Tensor& weights, const Tensor& table, const Linear& projection);

// base_c + weights @ prototypes; base_c [L, N], weights [L, K], prototypes [K, N].
Tensor semantic_modulate_c(const Tensor& base_c, const Tensor& weights, const Tensor& prototypes);

struct RouterConfig {
  std::size_t channels = 64;
  std::size_t d_inner = 128;
  std::size_t classes = 64;
  std::size_t prompt_dim = 16;  // state dimension of the scan it feeds
  double temperature = 1.0;
  bool hard = true;
};

struct Routing {
  Tensor weights;                       // [L, K], original token order
  std::vector<std::size_t> class_index;  // per original token
  Permutation permutation;
  Tensor prompts;            // [L, prompt_dim], original order
  Tensor reordered_tokens;   // [L, C], gathered by pi
  Tensor reordered_prompts;  // [L, prompt_dim], gathered by pi
};

class SemanticRouter {
 public:
  static SemanticRouter create(ParameterStore& store, const std::string& name, const RouterConfig& config,
                               SeededRng& rng);

  Tensor query(const Tensor& tokens) const;   // [L, C] -> [L, d_inner]
  Tensor logits(const Tensor& tokens) const;  // [L, C] -> [L, K]
  // Prototype vectors in prompt space, [K, prompt_dim].
  Tensor prototypes() const;

  // Routing weights, class indices and prompts without reordering (fields
  // permutation and reordered_* are left empty).
  Routing assign(const Tensor& tokens, SeededRng* rng) const;
  // Routes one sequence. A null rng turns the Gumbel noise off.
  Routing route(const Tensor& tokens, SeededRng* rng) const;

  const RouterConfig& config() const { return config_; }

  Mlp query_mlp;        // C -> d_inner -> d_inner
  Linear classifier;    // d_inner -> K
  Parameter* table = nullptr;  // W_E, [K, d_inner]
  Linear prompt_proj;   // d_inner -> prompt_dim, no bias

 private:
  RouterConfig config_;
};

// Restores original order: gather(x, inverse).
Tensor restore_order(const Tensor& reordered, const Permutation& permutation);

// Plain-text sidecar, one "token view class" line per token.
void write_class_dump(std::ostream& out, const std::vector<std::size_t>& class_index, std::size_t tokens_per_view);

}  // namespace mvssm
