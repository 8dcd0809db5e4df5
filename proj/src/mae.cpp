#include "g2sd/mae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "g2sd/errors.hpp"
#include "g2sd/ops.hpp"

namespace g2sd {

std::int64_t masked_count(std::int64_t n, double ratio) {
  if (n < 1) throw ConfigError("mask: token count must be >= 1");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask: ratio must be in (0,1)");
  const auto m = static_cast<std::int64_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
  if (m <= 0 || m >= n) {
    throw ConfigError("mask: ratio " + std::to_string(ratio) + " over " + std::to_string(n) +
                      " tokens leaves an empty visible or masked set");
  }
  return m;
}

MaskPlan sample_mask(std::int64_t n, double ratio, Rng& rng) {
  const std::int64_t m = masked_count(n, ratio);
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  // Partial Fisher-Yates: the first m entries are a uniform m-subset.
  for (std::int64_t i = 0; i < m; ++i) {
    const auto j = i + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(n - i)));
    std::swap(perm[i], perm[j]);
  }
  MaskPlan plan;
  plan.num_tokens = n;
  plan.ratio = ratio;
  plan.masked.assign(perm.begin(), perm.begin() + m);
  plan.visible.assign(perm.begin() + m, perm.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

std::vector<MaskPlan> sample_masks(std::int64_t batch, std::int64_t n, double ratio, std::uint64_t seed,
                                   std::uint64_t step) {
  std::vector<MaskPlan> plans;
  plans.reserve(static_cast<std::size_t>(batch));
  for (std::int64_t i = 0; i < batch; ++i) {
    Rng rng = make_rng(seed, step, static_cast<std::uint64_t>(i));
    plans.push_back(sample_mask(n, ratio, rng));
  }
  return plans;
}

namespace {

std::vector<std::int64_t> flatten(std::span<const MaskPlan> plans, bool visible) {
  std::vector<std::int64_t> out;
  if (plans.empty()) return out;
  const auto k = (visible ? plans[0].visible : plans[0].masked).size();
  for (const auto& p : plans) {
    const auto& v = visible ? p.visible : p.masked;
    if (v.size() != k) throw ShapeError("mask plans in a batch must have equal set sizes");
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

void check_plan(const MaskPlan& p) {
  if (static_cast<std::int64_t>(p.visible.size() + p.masked.size()) != p.num_tokens) {
    throw IndexError("mask plan does not partition the token set");
  }
}

}  // namespace

std::vector<std::int64_t> visible_index(std::span<const MaskPlan> plans) { return flatten(plans, true); }
std::vector<std::int64_t> masked_index(std::span<const MaskPlan> plans) { return flatten(plans, false); }

Tensor mix_tokens(const Tensor& visible, const Tensor& mask_token, std::span<const MaskPlan> plans,
                  const Tensor& positions) {
  if (visible.ndim() != 3) throw ShapeError("mix_tokens: visible features must be [B,|V|,D]");
  const std::int64_t b = visible.dim(0), nv = visible.dim(1), d = visible.dim(2);
  if (static_cast<std::int64_t>(plans.size()) != b) throw ShapeError("mix_tokens: one plan per sample required");
  if (mask_token.numel() != d) {
    throw ShapeError("mix_tokens: mask token width " + std::to_string(mask_token.numel()) + " != feature width " +
                     std::to_string(d));
  }
  const std::int64_t n = plans[0].num_tokens;
  // Row nv of the extended table is the mask token; every masked position
  // gathers it, every visible position gathers its own feature.
  std::vector<std::int64_t> index(static_cast<std::size_t>(b * n), nv);
  for (std::int64_t s = 0; s < b; ++s) {
    const auto& p = plans[static_cast<std::size_t>(s)];
    check_plan(p);
    if (p.num_tokens != n || static_cast<std::int64_t>(p.visible.size()) != nv) {
      throw ShapeError("mix_tokens: plan sizes disagree with the visible features");
    }
    for (std::int64_t j = 0; j < nv; ++j) {
      const auto i = p.visible[static_cast<std::size_t>(j)];
      if (i < 0 || i >= n) throw IndexError("mix_tokens: visible index " + std::to_string(i) + " out of range");
      index[s * n + i] = j;
    }
    for (const auto i : p.masked) {
      if (i < 0 || i >= n) throw IndexError("mix_tokens: masked index " + std::to_string(i) + " out of range");
    }
  }
  Tensor table = concat(std::vector<Tensor>{visible, broadcast_to(reshape(mask_token, {1, 1, d}), {b, 1, d})}, 1);
  Tensor h = gather_rows(table, index, n);
  if (positions.defined()) {
    if (positions.ndim() != 2 || positions.dim(0) != n || positions.dim(1) != d) {
      throw ShapeError("mix_tokens: positions " + shape_str(positions.shape()) + " expected [N,D]");
    }
    h = add(h, positions);
  }
  return h;
}

Tensor token_weights(std::span<const MaskPlan> plans, TokenSet set) {
  const std::int64_t b = static_cast<std::int64_t>(plans.size());
  const std::int64_t n = b ? plans[0].num_tokens : 0;
  std::vector<float> w(static_cast<std::size_t>(b * n), set == TokenSet::All ? 1.0F : 0.0F);
  if (set != TokenSet::All) {
    for (std::int64_t s = 0; s < b; ++s) {
      const auto& p = plans[static_cast<std::size_t>(s)];
      for (const auto i : set == TokenSet::Masked ? p.masked : p.visible) {
        if (i < 0 || i >= n) throw IndexError("token_weights: index out of range");
        w[s * n + i] = 1.0F;
      }
    }
  }
  return Tensor::from_data({b, n}, std::move(w));
}

Tensor mae_loss(const Tensor& predictions, const Tensor& patches, std::span<const MaskPlan> plans) {
  if (predictions.shape() != patches.shape() || predictions.ndim() != 3) {
    throw ShapeError("mae_loss: predictions " + shape_str(predictions.shape()) + " vs patches " +
                     shape_str(patches.shape()));
  }
  if (static_cast<std::int64_t>(plans.size()) != predictions.dim(0)) throw ShapeError("mae_loss: one plan per sample");
  std::int64_t masked = 0;
  for (const auto& p : plans) {
    if (p.num_tokens != predictions.dim(1)) throw ShapeError("mae_loss: plan token count mismatch");
    masked += static_cast<std::int64_t>(p.masked.size());
  }
  if (masked == 0) throw ConfigError("mae_loss: empty masked set");
  Tensor target;
  {
    NoGradGuard guard;
    target = layer_norm(patches.detach(), Tensor{}, Tensor{}, 1e-6F);
  }
  Tensor diff = sub(predictions, target);
  Tensor per_token = mean_axis(mul(diff, diff), -1);  // [B, N]
  Tensor weighted = mul(per_token, token_weights(plans, TokenSet::Masked));
  return scale(sum(weighted), 1.0F / static_cast<float>(masked));
}

void DecoderSpec::validate() const {
  if (depth < 1) throw ConfigError("decoder spec: depth must be >= 1");
  if (dim < 4 || dim % 4 != 0 || heads < 1 || dim % heads != 0) {
    throw ConfigError("decoder spec: dim " + std::to_string(dim) + " must be divisible by 4 and by heads");
  }
}

MaskedDecoder::MaskedDecoder(int encoder_dim, const DecoderSpec& spec, const PatchSpec& patch, int out_dim,
                             bool with_norm, Rng& rng)
    : spec_(spec), patch_(patch), with_norm_(with_norm) {
  spec_.validate();
  neck_ = LinearLayer::xavier(encoder_dim, spec_.dim, rng);
  mask_token_ = randn({spec_.dim}, rng, 0.02F);
  mask_token_.set_requires_grad(true);
  pos_embed_ = positional_embedding(patch_, spec_.dim);
  for (int i = 0; i < spec_.depth; ++i) blocks_.push_back(Block::create(spec_.dim, spec_.heads, spec_.mlp_ratio, 0.0F, rng));
  if (with_norm_) norm_ = LayerNormLayer::create(spec_.dim);
  if (out_dim > 0) head_ = LinearLayer::xavier(spec_.dim, out_dim, rng);
}

Tensor MaskedDecoder::prepare(const TokenBatch& encoded, std::span<const MaskPlan> plans) const {
  if (!encoded.has_cls) throw ConfigError("decoder: encoded batch carries no class token");
  Tensor x = neck_(encoded.tokens);
  Tensor cls = slice(x, 1, 0, 1);
  Tensor vis = slice(x, 1, encoded.num_special(), x.dim(1));
  return concat(std::vector<Tensor>{cls, mix_tokens(vis, mask_token_, plans, pos_embed_)}, 1);
}

Tensor MaskedDecoder::run_blocks(const Tensor& x, int layers, Rng* rng) const {
  if (layers < 0) layers = spec_.depth;
  if (layers > spec_.depth) {
    throw IndexError("decoder layer " + std::to_string(layers) + " exceeds depth " + std::to_string(spec_.depth));
  }
  Tensor h = x;
  for (int i = 0; i < layers; ++i) h = blocks_[static_cast<std::size_t>(i)].forward(h, rng);
  return h;
}

Tensor MaskedDecoder::head(const Tensor& hidden) const {
  if (!head_.weight.defined()) throw ConfigError("decoder has no output head");
  Tensor x = slice(hidden, 1, 1, hidden.dim(1));
  if (with_norm_) x = norm_(x);
  return head_(x);
}

void MaskedDecoder::register_params(ParameterSet& params, const std::string& prefix, int layer) const {
  neck_.register_params(params, prefix + "neck.", layer);
  params.add(prefix + "mask_token", mask_token_, layer, false);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].register_params(params, prefix + "blocks." + std::to_string(i) + ".", layer);
  }
  if (with_norm_) norm_.register_params(params, prefix + "norm.", layer);
  if (head_.weight.defined()) head_.register_params(params, prefix + "head.", layer);
}

void MaeSpec::validate() const {
  encoder.validate();
  decoder.validate();
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mae spec: mask ratio must be in (0,1)");
  if (encoder.use_distill_token) throw ConfigError("mae spec: encoder must not carry a distillation token");
}

MaeModel::MaeModel(const MaeSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  encoder_ = VitEncoder(spec_.encoder, rng);
  decoder_ = MaskedDecoder(spec_.encoder.dim, spec_.decoder, spec_.encoder.patch, spec_.encoder.patch.patch_dim(),
                           true, rng);
}

MaeOutput MaeModel::forward(const Tensor& patches, std::span<const MaskPlan> plans, Rng* rng) const {
  const auto keep = visible_index(plans);
  const std::int64_t k = plans.empty() ? 0 : static_cast<std::int64_t>(plans[0].visible.size());
  TokenBatch enc = encoder_.forward(patches, keep, k, rng);
  MaeOutput out;
  out.encoder_tokens = enc.num_patch_tokens();
  out.predictions = decoder_.head(decoder_.run_blocks(decoder_.prepare(enc, plans), -1, rng));
  out.loss = mae_loss(out.predictions, patches, plans);
  return out;
}

Tensor MaeModel::decoder_features(const Tensor& patches, std::span<const MaskPlan> plans, int layer) const {
  if (layer < 1 || layer > spec_.decoder.depth) {
    throw IndexError("decoder layer " + std::to_string(layer) + " not in [1," + std::to_string(spec_.decoder.depth) + "]");
  }
  const auto keep = visible_index(plans);
  const std::int64_t k = plans.empty() ? 0 : static_cast<std::int64_t>(plans[0].visible.size());
  TokenBatch enc = encoder_.forward(patches, keep, k);
  Tensor h = decoder_.run_blocks(decoder_.prepare(enc, plans), layer);
  return slice(h, 1, 1, h.dim(1));
}

ParameterSet MaeModel::parameters() const {
  ParameterSet params;
  encoder_.register_params(params, "encoder.");
  decoder_.register_params(params, "decoder.", spec_.encoder.depth + 1);
  return params;
}

}  // namespace g2sd
