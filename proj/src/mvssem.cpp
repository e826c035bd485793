// SPDX-License-Identifier: Apache-2.0

#include "mvssm/mvssem.hpp"

#include <algorithm>

#include "mvssm/ops.hpp"

namespace mvssm {

Tensor flatten_multiview(const Tensor& x) {
  if (x.dim() != 5) throw ShapeError("multi-view features must be [B, V, C, H, W], got " + shape_str(x.shape()));
  const Shape& s = x.shape();
  return reshape(permute(x, {0, 1, 3, 4, 2}), {s[0], s[1] * s[3] * s[4], s[2]});
}

Tensor unflatten_multiview(const Tensor& tokens, std::size_t views, std::size_t height, std::size_t width) {
  if (tokens.dim() != 3 || tokens.size(1) != views * height * width)
    throw ShapeError("token tensor " + shape_str(tokens.shape()) + " does not hold " + std::to_string(views) + "x" +
                     std::to_string(height) + "x" + std::to_string(width) + " tokens");
  const std::size_t b = tokens.size(0), c = tokens.size(2);
  return permute(reshape(tokens, {b, views, height, width, c}), {0, 1, 4, 2, 3});
}

ModulationHeads ModulationHeads::create(ParameterStore& store, const std::string& name, std::size_t z_dim,
                                        std::size_t hidden, std::size_t state_dim, std::size_t channels,
                                        SeededRng& rng) {
  return {Mlp::create(store, name + ".phi_b", z_dim, hidden, state_dim, rng, Init::kZeros),
          Mlp::create(store, name + ".phi_c", z_dim, hidden, state_dim, rng, Init::kZeros),
          Mlp::create(store, name + ".phi_delta", z_dim, hidden, channels, rng, Init::kZeros)};
}

ScanModulation ModulationHeads::operator()(const Tensor& z) const {
  const std::size_t z_dim = phi_b.first.in_features();
  if (z.dim() != 1 || z.size(0) != z_dim)
    throw ShapeError("degradation embedding expected [" + std::to_string(z_dim) + "], got " + shape_str(z.shape()));
  const Tensor row = reshape(z, {1, z_dim});
  auto gate = [&](const Mlp& head) {
    const Tensor g = scale(sigmoid(head(row)), 2.0);
    return reshape(g, {g.size(1)});
  };
  ScanModulation m;
  m.gate_b = gate(phi_b);
  m.gate_c = gate(phi_c);
  m.gate_delta = gate(phi_delta);
  return m;
}

Feb Feb::create(ParameterStore& store, const std::string& name, const FebConfig& config, SeededRng& rng) {
  Feb f;
  f.config_ = config;
  RouterConfig rc;
  rc.channels = config.channels;
  rc.d_inner = config.d_inner;
  rc.classes = config.classes;
  rc.prompt_dim = config.state_dim;
  rc.temperature = config.temperature;
  rc.hard = config.hard_routing;
  f.router = SemanticRouter::create(store, name + ".router", rc, rng);
  f.heads = ModulationHeads::create(store, name + ".heads", config.z_dim, config.head_hidden, config.state_dim,
                                    config.channels, rng);
  SsmConfig sc;
  sc.channels = config.channels;
  sc.state_dim = config.state_dim;
  f.scan = SelectiveScan::create(store, name + ".scan", sc, rng);
  f.in_proj = Linear::create(store, name + ".in_proj", config.channels, config.channels, rng);
  f.out_proj = Linear::create(store, name + ".out_proj", config.channels, config.channels, rng, true, Init::kZeros);
  f.mlp = Mlp::create(store, name + ".mlp", config.channels, config.mlp_hidden, config.channels, rng, Init::kZeros);
  return f;
}

FebOutput Feb::operator()(const Tensor& tokens, const TokenGrid& grid, const Tensor& z,
                          const CrossStageState& incoming, const AblationSwitches& ablation, SeededRng* noise) const {
  const std::size_t L = grid.tokens(), C = config_.channels, N = config_.state_dim;
  const std::size_t V = grid.views, per_view = grid.per_view();
  if (tokens.dim() != 2 || tokens.size(0) != L || tokens.size(1) != C)
    throw ShapeError("block tokens expected [" + std::to_string(L) + ", " + std::to_string(C) + "], got " +
                     shape_str(tokens.shape()));
  if (incoming.hidden.defined() && incoming.hidden.shape() != Shape{V, C, N})
    throw ShapeError("incoming hidden state has shape " + shape_str(incoming.hidden.shape()));
  if (incoming.c_field.defined() && incoming.c_field.shape() != Shape{L, N})
    throw ShapeError("incoming C-offset field has shape " + shape_str(incoming.c_field.shape()));

  const Tensor normed = layer_norm(tokens);
  const Routing routing = router.assign(normed, noise);
  const Tensor values = in_proj(tokens);
  ScanModulation gates;
  if (ablation.degradation) gates = heads(z);
  Tensor offsets = routing.prompts;
  if (ablation.cross_offset && incoming.c_field.defined()) offsets = add(offsets, incoming.c_field);

  // One scan per reading view. With multi-view on, the sequence holds every view,
  // rotated so the reading view comes last; within a class the other views' tokens
  // therefore precede its own, which keeps the block symmetric in the views.
  std::vector<Tensor> outputs, finals;
  for (std::size_t v = 0; v < V; ++v) {
    std::vector<std::size_t> members;
    members.reserve(ablation.multi_view ? L : per_view);
    for (std::size_t j = ablation.multi_view ? 1 : V; j <= V; ++j) {
      const std::size_t u = (v + j) % V;
      for (std::size_t t = 0; t < per_view; ++t) members.push_back(u * per_view + t);
    }
    if (ablation.semantic_reorder)
      std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
        return routing.class_index[a] < routing.class_index[b];
      });
    std::vector<std::size_t> own(per_view);
    for (std::size_t pos = 0; pos < members.size(); ++pos)
      if (members[pos] / per_view == v) own[members[pos] % per_view] = pos;

    ScanModulation m = gates;
    m.c_offset = gather(offsets, 0, members);
    Tensor h0;
    if (ablation.cross_state && incoming.hidden.defined()) h0 = reshape(slice(incoming.hidden, 0, v, v + 1), {C, N});
    const ScanResult r = scan(gather(normed, 0, members), gather(values, 0, members), m, h0);
    outputs.push_back(gather(r.y, 0, own));
    finals.push_back(reshape(r.h_last, {1, C, N}));
  }

  FebOutput out;
  const Tensor mixed = V == 1 ? outputs[0] : concat(outputs, 0);
  Tensor x = add(tokens, out_proj(mixed));
  out.tokens = add(x, mlp(layer_norm(x)));
  out.state.hidden = V == 1 ? finals[0] : concat(finals, 0);
  out.state.c_field = routing.prompts;
  out.class_index = routing.class_index;
  return out;
}

Tensor downsample_tokens(const Tensor& tokens, const TokenGrid& grid) {
  if (grid.height % 2 || grid.width % 2)
    throw ShapeError("feature map " + std::to_string(grid.height) + "x" + std::to_string(grid.width) +
                     " cannot be halved");
  const std::size_t c = tokens.size(1);
  Tensor t = reshape(tokens, {grid.views, grid.height / 2, 2, grid.width / 2, 2, c});
  t = mean(mean(t, 4), 2);
  return reshape(t, {grid.tokens() / 4, c});
}

std::vector<std::size_t> upsample_index(const TokenGrid& fine) {
  std::vector<std::size_t> idx;
  idx.reserve(fine.tokens());
  const std::size_t ch = fine.height / 2, cw = fine.width / 2;
  for (std::size_t v = 0; v < fine.views; ++v)
    for (std::size_t y = 0; y < fine.height; ++y)
      for (std::size_t x = 0; x < fine.width; ++x) idx.push_back(multiview_token_index(v, y / 2, x / 2, ch, cw));
  return idx;
}

Enhancer Enhancer::create(ParameterStore& store, const EnhancerConfig& config, SeededRng& rng) {
  Enhancer e;
  e.config_ = config;
  for (std::size_t i = 0; i < config.blocks_fine; ++i)
    e.fine.push_back(Feb::create(store, "enh.fine" + std::to_string(i), config.feb, rng));
  for (std::size_t i = 0; i < config.blocks_coarse; ++i)
    e.coarse.push_back(Feb::create(store, "enh.coarse" + std::to_string(i), config.feb, rng));
  for (std::size_t i = 0; i < config.blocks_decode; ++i)
    e.decode.push_back(Feb::create(store, "enh.decode" + std::to_string(i), config.feb, rng));
  const std::size_t c = config.feb.channels;
  e.fuse = Linear::create(store, "enh.fuse", c, c, rng, true, Init::kZeros);
  e.out_proj = Linear::create(store, "enh.out_proj", c, c, rng, true, Init::kZeros);
  return e;
}

namespace {

void record_stats(std::vector<FebStats>* stats, const std::string& label, const FebOutput& out, std::size_t classes) {
  if (!stats) return;
  FebStats s;
  s.label = label;
  const auto v = out.tokens.values();
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.variance += (x - s.mean) * (x - s.mean);
  s.variance /= static_cast<double>(v.size());
  s.class_histogram.assign(classes, 0);
  for (auto c : out.class_index) ++s.class_histogram[c];
  stats->push_back(std::move(s));
}

}  // namespace

Tensor Enhancer::enhance_item(const Tensor& tokens, const TokenGrid& grid, const Tensor& z, SeededRng* noise,
                              std::vector<FebStats>* stats) const {
  const AblationSwitches& ab = config_.ablation;
  const std::size_t classes = config_.feb.classes;
  Tensor x = tokens;
  for (std::size_t i = 0; i < fine.size(); ++i) {
    FebOutput o = fine[i](x, grid, z, {}, ab, noise);
    record_stats(stats, "fine" + std::to_string(i), o, classes);
    x = o.tokens;
  }
  const TokenGrid coarse_grid{grid.views, grid.height / 2, grid.width / 2};
  Tensor xc = downsample_tokens(x, grid);
  CrossStageState carried;
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    FebOutput o = coarse[i](xc, coarse_grid, z, {}, ab, noise);
    record_stats(stats, "coarse" + std::to_string(i), o, classes);
    xc = o.tokens;
    carried = o.state;
  }
  const auto up = upsample_index(grid);
  x = add(x, fuse(gather(xc, 0, up)));
  CrossStageState fed;
  if (ab.cross_state) fed.hidden = carried.hidden;
  if (ab.cross_offset && carried.c_field.defined()) fed.c_field = gather(carried.c_field, 0, up);
  for (std::size_t i = 0; i < decode.size(); ++i) {
    FebOutput o = decode[i](x, grid, z, fed, ab, noise);
    record_stats(stats, "decode" + std::to_string(i), o, classes);
    x = o.tokens;
  }
  return add(x, out_proj(x));
}

Tensor Enhancer::operator()(const Tensor& features, const Tensor& z, SeededRng* noise,
                            std::vector<FebStats>* stats) const {
  if (features.dim() != 5 || features.size(2) != config_.feb.channels)
    throw ShapeError("features must be [B, V, " + std::to_string(config_.feb.channels) + ", H, W], got " +
                     shape_str(features.shape()));
  const std::size_t B = features.size(0), V = features.size(1), C = features.size(2);
  const TokenGrid grid{V, features.size(3), features.size(4)};
  if (grid.height % 2 || grid.width % 2) throw ShapeError("H and W must be even");
  const std::size_t z_dim = config_.feb.z_dim;
  Tensor cond;
  if (z.dim() == 2 && z.size(0) == B && z.size(1) == z_dim) {
    cond = z;
  } else if (z.dim() == 3 && z.size(0) == B && z.size(1) == V && z.size(2) == z_dim) {
    cond = mean(z, 1);
  } else {
    throw ShapeError("degradation embeddings must be [B, z] or [B, V, z], got " + shape_str(z.shape()));
  }
  const Tensor tokens = flatten_multiview(features);
  std::vector<Tensor> items;
  for (std::size_t b = 0; b < B; ++b) {
    const Tensor t = reshape(slice(tokens, 0, b, b + 1), {grid.tokens(), C});
    const Tensor zb = reshape(slice(cond, 0, b, b + 1), {z_dim});
    items.push_back(reshape(enhance_item(t, grid, zb, noise, stats), {1, grid.tokens(), C}));
  }
  return unflatten_multiview(B == 1 ? items[0] : concat(items, 0), V, grid.height, grid.width);
}

}  // namespace mvssm
