// SPDX-License-Identifier: Apache-2.0

#include "mvssm/router.hpp"

#include <algorithm>
#include <numeric>

#include "mvssm/ops.hpp"

namespace mvssm {

Tensor gumbel_softmax(const Tensor& logits, double temperature, bool hard, SeededRng* rng) {
  if (!(temperature > 0.0)) throw std::invalid_argument("Gumbel temperature must be positive");
  if (logits.dim() != 2) throw ShapeError("routing logits must be [L, K], got " + shape_str(logits.shape()));
  Tensor perturbed = logits;
  if (rng) {
    std::vector<double> noise(logits.numel());
    for (auto& g : noise) g = rng->gumbel();
    perturbed = add(logits, Tensor::from_vector(logits.shape(), std::move(noise)));
  }
  Tensor soft = softmax(scale(perturbed, 1.0 / temperature), 1);
  if (!hard) return soft;
  const std::size_t k = logits.size(1);
  std::vector<double> one_hot(soft.numel(), 0.0);
  const auto winners = row_argmax(soft);
  for (std::size_t i = 0; i < winners.size(); ++i) one_hot[i * k + winners[i]] = 1.0;
  return straight_through(soft, Tensor::from_vector(soft.shape(), std::move(one_hot)));
}

std::vector<std::size_t> row_argmax(const Tensor& weights) {
  if (weights.dim() != 2) throw ShapeError("row_argmax expects [L, K]");
  const std::size_t rows = weights.size(0), k = weights.size(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto row = weights.values().subspan(i * k, k);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Permutation sort_by_class(const std::vector<std::size_t>& class_index, std::size_t classes) {
  for (auto c : class_index)
    if (c >= classes)
      throw std::out_of_range("class index " + std::to_string(c) + " out of range for " +
                              std::to_string(classes) + " classes");
  Permutation p;
  p.order.resize(class_index.size());
  std::iota(p.order.begin(), p.order.end(), std::size_t{0});
  std::stable_sort(p.order.begin(), p.order.end(),
                   [&](std::size_t a, std::size_t b) { return class_index[a] < class_index[b]; });
  p.inverse.resize(p.order.size());
  for (std::size_t j = 0; j < p.order.size(); ++j) p.inverse[p.order[j]] = j;
  return p;
}

Tensor prompt_lookup(const Tensor& weights, const Tensor& table, const Linear& projection) {
  if (weights.dim() != 2 || table.dim() != 2 || weights.size(1) != table.size(0))
    throw ShapeError("prompt lookup: weights " + shape_str(weights.shape()) + " vs table " +
                     shape_str(table.shape()));
  if (projection.in_features() != table.size(1)) throw ShapeError("prompt projection input mismatch");
  return projection(matmul(weights, table));
}

Tensor semantic_modulate_c(const Tensor& base_c, const Tensor& weights, const Tensor& prototypes) {
  if (weights.dim() != 2 || prototypes.dim() != 2 || weights.size(1) != prototypes.size(0))
    throw ShapeError("semantic offsets: weights " + shape_str(weights.shape()) + " vs prototypes " +
                     shape_str(prototypes.shape()));
  if (base_c.dim() != 2 || base_c.size(0) != weights.size(0) || base_c.size(1) != prototypes.size(1))
    throw ShapeError("semantic offsets: base " + shape_str(base_c.shape()) + " does not match");
  return add(base_c, matmul(weights, prototypes));
}

SemanticRouter SemanticRouter::create(ParameterStore& store, const std::string& name, const RouterConfig& config,
                                      SeededRng& rng) {
  if (config.classes == 0 || config.d_inner == 0 || config.channels == 0 || config.prompt_dim == 0)
    throw std::invalid_argument("empty router configuration");
  SemanticRouter r;
  r.config_ = config;
  r.query_mlp = Mlp::create(store, name + ".query", config.channels, config.d_inner, config.d_inner, rng);
  r.classifier = Linear::create(store, name + ".classifier", config.d_inner, config.classes, rng);
  r.table = &store.add(name + ".table", {config.classes, config.d_inner}, Init::kNormal, rng, 0.02);
  r.prompt_proj = Linear::create(store, name + ".prompt_proj", config.d_inner, config.prompt_dim, rng, false);
  return r;
}

Tensor SemanticRouter::query(const Tensor& tokens) const {
  if (tokens.dim() != 2 || tokens.size(1) != config_.channels)
    throw ShapeError("router tokens expected [L, " + std::to_string(config_.channels) + "], got " +
                     shape_str(tokens.shape()));
  return query_mlp(tokens);
}

Tensor SemanticRouter::logits(const Tensor& tokens) const { return classifier(query(tokens)); }

Tensor SemanticRouter::prototypes() const { return prompt_proj(table->value); }

Routing SemanticRouter::assign(const Tensor& tokens, SeededRng* rng) const {
  Routing r;
  r.weights = gumbel_softmax(logits(tokens), config_.temperature, config_.hard, rng);
  r.class_index = row_argmax(r.weights);
  r.prompts = prompt_lookup(r.weights, table->value, prompt_proj);
  return r;
}

Routing SemanticRouter::route(const Tensor& tokens, SeededRng* rng) const {
  Routing r = assign(tokens, rng);
  r.permutation = sort_by_class(r.class_index, config_.classes);
  r.reordered_tokens = gather(tokens, 0, r.permutation.order);
  r.reordered_prompts = gather(r.prompts, 0, r.permutation.order);
  return r;
}

Tensor restore_order(const Tensor& reordered, const Permutation& permutation) {
  return gather(reordered, 0, permutation.inverse);
}

void write_class_dump(std::ostream& out, const std::vector<std::size_t>& class_index, std::size_t tokens_per_view) {
  if (tokens_per_view == 0) throw std::invalid_argument("tokens_per_view must be positive");
  out << "# token view class\n";
  for (std::size_t i = 0; i < class_index.size(); ++i)
    out << i << ' ' << i / tokens_per_view << ' ' << class_index[i] << '\n';
}

}  // namespace mvssm
