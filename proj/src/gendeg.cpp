// SPDX-License-Identifier: Apache-2.0

#include "mvssm/gendeg.hpp"

#include <cmath>

#include "mvssm/ops.hpp"

namespace mvssm {

Tensor images_to_batch(const std::vector<ImageRGB>& images) {
  if (images.empty()) throw std::invalid_argument("empty image batch");
  const std::size_t h = images[0].height(), w = images[0].width();
  std::vector<double> data;
  data.reserve(images.size() * 3 * h * w);
  for (const auto& img : images) {
    if (img.height() != h || img.width() != w) throw ShapeError("images in a batch must share a size");
    data.insert(data.end(), img.planar().begin(), img.planar().end());
  }
  return Tensor::from_vector({images.size(), 3, h, w}, std::move(data));
}

ImageRGB batch_item_to_image(const Tensor& batch, std::size_t index) {
  if (batch.dim() != 4 || batch.size(1) != 3 || index >= batch.size(0))
    throw ShapeError("expected an image batch [B, 3, H, W], got " + shape_str(batch.shape()));
  const std::size_t h = batch.size(2), w = batch.size(3), n = 3 * h * w;
  const auto v = batch.values().subspan(index * n, n);
  return ImageRGB(h, w, std::vector<double>(v.begin(), v.end()));
}

Tensor patchify(const Tensor& images, std::size_t patch) {
  if (images.dim() != 4 || patch == 0) throw ShapeError("patchify expects [B, C, H, W]");
  const std::size_t b = images.size(0), c = images.size(1), h = images.size(2), w = images.size(3);
  if (h % patch || w % patch)
    throw ShapeError("image size " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by patch " +
                     std::to_string(patch));
  const std::size_t gh = h / patch, gw = w / patch;
  Tensor t = reshape(images, {b, c, gh, patch, gw, patch});
  t = permute(t, {0, 2, 4, 1, 3, 5});
  return reshape(t, {b, gh * gw, c * patch * patch});
}

Tensor unpatchify(const Tensor& tokens, std::size_t height, std::size_t width, std::size_t patch) {
  if (tokens.dim() != 3 || patch == 0 || height % patch || width % patch) throw ShapeError("bad unpatchify request");
  const std::size_t b = tokens.size(0), gh = height / patch, gw = width / patch;
  if (tokens.size(1) != gh * gw || tokens.size(2) % (patch * patch))
    throw ShapeError("token grid " + shape_str(tokens.shape()) + " does not match the image size");
  const std::size_t c = tokens.size(2) / (patch * patch);
  Tensor t = reshape(tokens, {b, gh, gw, c, patch, patch});
  t = permute(t, {0, 3, 1, 4, 2, 5});
  return reshape(t, {b, c, height, width});
}

ResidualMlp ResidualMlp::create(ParameterStore& store, const std::string& name, std::size_t width,
                                std::size_t hidden, SeededRng& rng) {
  return {Mlp::create(store, name, width, hidden, width, rng)};
}

Tensor ResidualMlp::operator()(const Tensor& h) const { return add(h, mlp(layer_norm(h))); }

GenDeg GenDeg::create(ParameterStore& store, const GenDegConfig& config, SeededRng& rng) {
  GenDeg m;
  m.config_ = config;
  const std::size_t patch_dim = 3 * config.patch * config.patch;
  m.deg_embed = Linear::create(store, "gendeg.deg.embed", patch_dim, config.width, rng);
  for (std::size_t i = 0; i < config.encoder_blocks; ++i)
    m.deg_blocks.push_back(
        ResidualMlp::create(store, "gendeg.deg.block" + std::to_string(i), config.width, config.hidden, rng));
  m.deg_head = Linear::create(store, "gendeg.deg.head", config.width, config.embed_dim, rng);
  m.content_embed = Linear::create(store, "gendeg.content.embed", patch_dim, config.width, rng);
  m.content_block = ResidualMlp::create(store, "gendeg.content.block", config.width, config.hidden, rng);
  m.film = Linear::create(store, "gendeg.decoder.film", config.embed_dim, 2 * config.width, rng);
  m.decoder_block = ResidualMlp::create(store, "gendeg.decoder.block", config.width, config.hidden, rng);
  m.decoder_out = Linear::create(store, "gendeg.decoder.out", config.width, patch_dim, rng);
  m.classifier = Linear::create(store, "gendeg.classifier", config.embed_dim, config.classes, rng);

  // The proxy draws from its own stream so its weights do not depend on the model seed.
  SeededRng proxy_rng(config.proxy_seed);
  const std::size_t proxy_in = 3 * config.proxy_patch * config.proxy_patch;
  m.proxy = Linear::create(store, "gendeg.proxy", proxy_in, config.proxy_features, proxy_rng, true, Init::kNormal);
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(proxy_in)) * 2.0;
  for (double& v : m.proxy.weight->value.mutable_values()) v = proxy_rng.normal() * std_dev;
  for (double& v : m.proxy.bias->value.mutable_values()) v = proxy_rng.normal() * 0.5;
  m.proxy.weight->freeze();
  m.proxy.bias->freeze();
  return m;
}

void GenDeg::check_images(const Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != 3)
    throw ShapeError("expected an image batch [B, 3, H, W], got " + shape_str(images.shape()));
  if (images.size(2) % config_.patch || images.size(3) % config_.patch || images.size(2) % config_.proxy_patch ||
      images.size(3) % config_.proxy_patch)
    throw ShapeError("image size " + std::to_string(images.size(2)) + "x" + std::to_string(images.size(3)) +
                     " is incompatible with patch size " + std::to_string(config_.patch));
}

Tensor GenDeg::encode(const Tensor& degraded) const {
  check_images(degraded);
  Tensor h = deg_embed(patchify(degraded, config_.patch));
  for (const auto& block : deg_blocks) h = block(h);
  return deg_head(mean(layer_norm(h), 1));
}

Tensor GenDeg::reconstruct(const Tensor& clean, const Tensor& z) const {
  check_images(clean);
  const std::size_t b = clean.size(0), w = config_.width;
  if (z.dim() != 2 || z.size(0) != b || z.size(1) != config_.embed_dim)
    throw ShapeError("embedding batch expected [" + std::to_string(b) + ", " + std::to_string(config_.embed_dim) +
                     "], got " + shape_str(z.shape()));
  Tensor h = content_block(content_embed(patchify(clean, config_.patch)));
  const Tensor affine = reshape(film(z), {b, 1, 2 * w});
  const Tensor gain = add_scalar(slice(affine, 2, 0, w), 1.0);
  const Tensor shift = slice(affine, 2, w, 2 * w);
  h = add(mul(layer_norm(h), gain), shift);
  h = decoder_block(h);
  return unpatchify(sigmoid(decoder_out(h)), clean.size(2), clean.size(3), config_.patch);
}

Tensor GenDeg::classify(const Tensor& z) const { return classifier(z); }

Tensor GenDeg::proxy_features(const Tensor& images) const {
  check_images(images);
  return tanh(proxy(patchify(images, config_.proxy_patch)));
}

Tensor loss_rec(const GenDeg& model, const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("reconstruction shapes differ: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  const Tensor l1 = mean(abs(sub(pred, target)));
  const Tensor diff = sub(model.proxy_features(pred), model.proxy_features(target));
  return add(scale(l1, model.config().l1_weight), mean(mul(diff, diff)));
}

Tensor loss_contrastive(const Tensor& z, const std::vector<int>& labels, double temperature) {
  if (z.dim() != 2) throw ShapeError("embeddings must be [B, D]");
  const std::size_t b = z.size(0), d = z.size(1);
  if (b < 2) throw std::invalid_argument("contrastive loss needs at least two embeddings");
  if (labels.size() != b) throw ShapeError("one label per embedding is required");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  for (std::size_t i = 0; i < b; ++i) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) n2 += z[i * d + j] * z[i * d + j];
    if (!(n2 > 0.0)) throw std::invalid_argument("zero-norm embedding in contrastive loss");
  }
  const Tensor norm = pow(sum(mul(z, z), 1, true), 0.5);
  const Tensor unit = div(z, norm);
  Tensor sim = scale(matmul(unit, transpose(unit, 0, 1)), 1.0 / temperature);
  // Self-similarity is removed from the denominator with a large negative offset.
  std::vector<double> self_mask(b * b, 0.0);
  for (std::size_t i = 0; i < b; ++i) self_mask[i * b + i] = -1e9;
  const Tensor logp = log_softmax(add(sim, Tensor::from_vector({b, b}, std::move(self_mask))), 1);

  std::vector<double> weights(b * b, 0.0);
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t positives = 0;
    for (std::size_t j = 0; j < b; ++j) positives += (j != i && labels[j] == labels[i]);
    if (positives == 0) continue;
    ++anchors;
    for (std::size_t j = 0; j < b; ++j)
      if (j != i && labels[j] == labels[i]) weights[i * b + j] = 1.0 / static_cast<double>(positives);
  }
  if (anchors == 0) throw std::invalid_argument("no anchor in the batch has a positive");
  for (auto& w : weights) w /= -static_cast<double>(anchors);
  return sum(mul(logp, Tensor::from_vector({b, b}, std::move(weights))));
}

Tensor loss_classify(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.dim() != 2 || labels.size() != logits.size(0)) throw ShapeError("one label per logit row is required");
  const std::size_t b = logits.size(0), k = logits.size(1);
  std::vector<double> pick(b * k, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw std::out_of_range("class label " + std::to_string(labels[i]) + " out of range");
    pick[i * k + static_cast<std::size_t>(labels[i])] = -1.0 / static_cast<double>(b);
  }
  return sum(mul(log_softmax(logits, 1), Tensor::from_vector({b, k}, std::move(pick))));
}

Tensor loss_total(const Tensor& rec, const Tensor& con, const Tensor& cls, const GenDegConfig& config) {
  return add(add(scale(rec, config.rec_weight), scale(con, config.con_weight)), scale(cls, config.cls_weight));
}

double loss_total(double rec, double con, double cls, const GenDegConfig& config) {
  return config.rec_weight * rec + config.con_weight * con + config.cls_weight * cls;
}

GenDegLosses gendeg_losses(const GenDeg& model, const Tensor& clean, const Tensor& degraded,
                           const std::vector<int>& labels) {
  GenDegLosses out;
  const Tensor z = model.encode(degraded);
  out.rec = loss_rec(model, model.reconstruct(clean, z), degraded);
  out.con = loss_contrastive(z, labels, model.config().temperature);
  out.cls = loss_classify(model.classify(z), labels);
  out.total = loss_total(out.rec, out.con, out.cls, model.config());
  return out;
}

}  // namespace mvssm
