#include "g2sd/vit.hpp"

#include <cmath>

#include "g2sd/errors.hpp"
#include "g2sd/ops.hpp"

namespace g2sd {

void PatchSpec::validate() const {
  if (image_h < 1 || image_w < 1 || channels < 1 || patch < 1) {
    throw ConfigError("patch spec: extents must be positive");
  }
  if (image_h % patch != 0 || image_w % patch != 0) {
    throw ConfigError("patch spec: image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                      " not divisible by patch size " + std::to_string(patch));
  }
}

void VitSpec::validate() const {
  patch.validate();
  if (depth < 0) throw ConfigError("vit spec: depth must be >= 0");
  if (dim < 1 || heads < 1 || dim % heads != 0) {
    throw ConfigError("vit spec: dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  }
  if (dim % 4 != 0) throw ConfigError("vit spec: dim must be divisible by 4 for 2D sin-cos positions");
  if (mlp_ratio < 1) throw ConfigError("vit spec: mlp_ratio must be >= 1");
  if (drop_path < 0.0F || drop_path >= 1.0F) throw ConfigError("vit spec: drop_path must be in [0,1)");
}

Tensor TokenBatch::patch_tokens() const {
  const auto s = num_special();
  if (s == 0) return tokens;
  return slice(tokens, 1, s, tokens.dim(1));
}

TokenBatch patchify(const Tensor& images, const PatchSpec& spec) {
  spec.validate();
  if (images.ndim() != 4 || images.dim(1) != spec.image_h || images.dim(2) != spec.image_w ||
      images.dim(3) != spec.channels) {
    throw ShapeError("patchify: images " + shape_str(images.shape()) + " do not match patch spec " +
                     std::to_string(spec.image_h) + "x" + std::to_string(spec.image_w) + "x" +
                     std::to_string(spec.channels));
  }
  const std::int64_t b = images.dim(0);
  const int p = spec.patch, c = spec.channels, gh = spec.grid_h(), gw = spec.grid_w();
  const std::int64_t n = spec.num_patches(), pd = spec.patch_dim();
  std::vector<float> out(static_cast<std::size_t>(b * n * pd));
  const float* src = images.data().data();
  for (std::int64_t s = 0; s < b; ++s) {
    for (int gy = 0; gy < gh; ++gy) {
      for (int gx = 0; gx < gw; ++gx) {
        float* dst = out.data() + ((s * n) + gy * gw + gx) * pd;
        for (int y = 0; y < p; ++y) {
          const float* row = src + ((s * spec.image_h + gy * p + y) * spec.image_w + gx * p) * c;
          std::copy(row, row + p * c, dst + y * p * c);
        }
      }
    }
  }
  TokenBatch tb;
  tb.tokens = Tensor::from_data({b, n, pd}, std::move(out));
  tb.positions.resize(static_cast<std::size_t>(b * n));
  for (std::int64_t s = 0; s < b; ++s) {
    for (std::int64_t i = 0; i < n; ++i) tb.positions[s * n + i] = i;
  }
  return tb;
}

Tensor unpatchify(const Tensor& tokens, const PatchSpec& spec) {
  spec.validate();
  const std::int64_t n = spec.num_patches(), pd = spec.patch_dim();
  if (tokens.ndim() != 3 || tokens.dim(1) != n || tokens.dim(2) != pd) {
    throw ShapeError("unpatchify: tokens " + shape_str(tokens.shape()) + " expected [B," + std::to_string(n) + "," +
                     std::to_string(pd) + "]");
  }
  const std::int64_t b = tokens.dim(0);
  const int p = spec.patch, c = spec.channels, gh = spec.grid_h(), gw = spec.grid_w();
  std::vector<float> out(static_cast<std::size_t>(b * spec.image_h * spec.image_w * c));
  const float* src = tokens.data().data();
  for (std::int64_t s = 0; s < b; ++s) {
    for (int gy = 0; gy < gh; ++gy) {
      for (int gx = 0; gx < gw; ++gx) {
        const float* tok = src + ((s * n) + gy * gw + gx) * pd;
        for (int y = 0; y < p; ++y) {
          float* row = out.data() + ((s * spec.image_h + gy * p + y) * spec.image_w + gx * p) * c;
          std::copy(tok + y * p * c, tok + (y + 1) * p * c, row);
        }
      }
    }
  }
  return Tensor::from_data({b, spec.image_h, spec.image_w, c}, std::move(out));
}

Tensor positional_embedding(const PatchSpec& spec, int dim) {
  spec.validate();
  if (dim < 4 || dim % 4 != 0) throw ConfigError("positional_embedding: dim " + std::to_string(dim) + " not divisible by 4");
  const int gh = spec.grid_h(), gw = spec.grid_w();
  const int quarter = dim / 4;
  std::vector<float> out(static_cast<std::size_t>(gh * gw * dim));
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      float* row = out.data() + static_cast<std::ptrdiff_t>(gy * gw + gx) * dim;
      for (int i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
        row[i] = static_cast<float>(std::sin(gy * omega));
        row[quarter + i] = static_cast<float>(std::cos(gy * omega));
        row[2 * quarter + i] = static_cast<float>(std::sin(gx * omega));
        row[3 * quarter + i] = static_cast<float>(std::cos(gx * omega));
      }
    }
  }
  return Tensor::from_data({gh * gw, dim}, std::move(out));
}

Tensor randn(const Shape& shape, Rng& rng, float stddev) {
  auto t = Tensor::zeros(shape);
  for (auto& v : t.mutable_data()) v = static_cast<float>(normal(rng, 0.0, stddev));
  return t;
}

LinearLayer LinearLayer::xavier(int in, int out, Rng& rng, bool with_bias) {
  LinearLayer l;
  const double bound = std::sqrt(6.0 / (in + out));
  l.weight = Tensor::zeros({in, out});
  for (auto& v : l.weight.mutable_data()) v = static_cast<float>(uniform(rng, -bound, bound));
  l.weight.set_requires_grad(true);
  if (with_bias) l.bias = Tensor::zeros({out}, true);
  return l;
}

LinearLayer LinearLayer::normal(int in, int out, Rng& rng, float stddev, bool with_bias) {
  LinearLayer l;
  l.weight = randn({in, out}, rng, stddev);
  l.weight.set_requires_grad(true);
  if (with_bias) l.bias = Tensor::zeros({out}, true);
  return l;
}

Tensor LinearLayer::operator()(const Tensor& x) const { return linear(x, weight, bias); }

void LinearLayer::register_params(ParameterSet& params, const std::string& prefix, int layer) const {
  params.add(prefix + "weight", weight, layer, true);
  if (bias.defined()) params.add(prefix + "bias", bias, layer, false);
}

LayerNormLayer LayerNormLayer::create(int dim) {
  LayerNormLayer n;
  n.gamma = Tensor::full({dim}, 1.0F, true);
  n.beta = Tensor::zeros({dim}, true);
  return n;
}

Tensor LayerNormLayer::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

void LayerNormLayer::register_params(ParameterSet& params, const std::string& prefix, int layer) const {
  params.add(prefix + "gamma", gamma, layer, false);
  params.add(prefix + "beta", beta, layer, false);
}

Block Block::create(int dim, int heads, int mlp_ratio, float drop_path, Rng& rng) {
  Block b;
  b.norm1 = LayerNormLayer::create(dim);
  b.qkv = LinearLayer::xavier(dim, 3 * dim, rng);
  b.proj = LinearLayer::xavier(dim, dim, rng);
  b.norm2 = LayerNormLayer::create(dim);
  b.fc1 = LinearLayer::xavier(dim, mlp_ratio * dim, rng);
  b.fc2 = LinearLayer::xavier(mlp_ratio * dim, dim, rng);
  b.heads = heads;
  b.drop_path = drop_path;
  return b;
}

namespace {

// Per-sample keep mask scaled by 1/keep_prob, shaped [B,1,1].
Tensor drop_path_mask(std::int64_t batch, float rate, Rng& rng) {
  std::vector<float> m(static_cast<std::size_t>(batch));
  const float keep = 1.0F - rate;
  for (auto& v : m) v = uniform01(rng) < keep ? 1.0F / keep : 0.0F;
  return Tensor::from_data({batch, 1, 1}, std::move(m));
}

}  // namespace

Tensor Block::forward(const Tensor& x, Rng* rng) const {
  const bool stochastic = rng != nullptr && drop_path > 0.0F;
  Tensor attn = proj(multi_head_self_attention(qkv(norm1(x)), heads));
  if (stochastic) attn = mul(attn, drop_path_mask(x.dim(0), drop_path, *rng));
  Tensor h = add(x, attn);
  Tensor mlp = fc2(gelu(fc1(norm2(h))));
  if (stochastic) mlp = mul(mlp, drop_path_mask(x.dim(0), drop_path, *rng));
  return add(h, mlp);
}

void Block::register_params(ParameterSet& params, const std::string& prefix, int layer) const {
  norm1.register_params(params, prefix + "norm1.", layer);
  qkv.register_params(params, prefix + "attn.qkv.", layer);
  proj.register_params(params, prefix + "attn.proj.", layer);
  norm2.register_params(params, prefix + "norm2.", layer);
  fc1.register_params(params, prefix + "mlp.fc1.", layer);
  fc2.register_params(params, prefix + "mlp.fc2.", layer);
}

VitEncoder::VitEncoder(const VitSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  patch_embed_ = LinearLayer::xavier(spec_.patch.patch_dim(), spec_.dim, rng);
  cls_token_ = randn({1, 1, spec_.dim}, rng, 0.02F);
  cls_token_.set_requires_grad(true);
  pos_embed_ = positional_embedding(spec_.patch, spec_.dim);
  for (int i = 0; i < spec_.depth; ++i) {
    // Stochastic depth rate grows linearly with depth.
    const float rate = spec_.depth > 1 ? spec_.drop_path * static_cast<float>(i) / static_cast<float>(spec_.depth - 1)
                                       : spec_.drop_path;
    blocks_.push_back(Block::create(spec_.dim, spec_.heads, spec_.mlp_ratio, rate, rng));
  }
  norm_ = LayerNormLayer::create(spec_.dim);
  if (spec_.use_distill_token) {
    spec_.use_distill_token = false;
    enable_distill_token(rng);
  }
}

void VitEncoder::enable_distill_token(Rng& rng, float noise) {
  if (spec_.use_distill_token) return;
  dist_token_ = cls_token_.detach();
  for (auto& v : dist_token_.mutable_data()) v += static_cast<float>(normal(rng, 0.0, noise));
  dist_token_.set_requires_grad(true);
  spec_.use_distill_token = true;
}

TokenBatch VitEncoder::embed(const Tensor& patches, std::span<const std::int64_t> keep, std::int64_t k) const {
  const std::int64_t n = spec_.patch.num_patches();
  if (patches.ndim() != 3 || patches.dim(1) != n || patches.dim(2) != spec_.patch.patch_dim()) {
    throw ShapeError("encoder: patches " + shape_str(patches.shape()) + " expected [B," + std::to_string(n) + "," +
                     std::to_string(spec_.patch.patch_dim()) + "]");
  }
  const std::int64_t b = patches.dim(0);
  TokenBatch out;
  Tensor selected = patches;
  if (keep.empty()) {
    k = n;
    out.positions.resize(static_cast<std::size_t>(b * n));
    for (std::int64_t s = 0; s < b; ++s) {
      for (std::int64_t i = 0; i < n; ++i) out.positions[s * n + i] = i;
    }
  } else {
    selected = gather_rows(patches, keep, k);
    out.positions.assign(keep.begin(), keep.end());
  }
  // Fixed positional rows for the kept tokens, gathered as a constant.
  std::vector<float> pos(static_cast<std::size_t>(b * k * spec_.dim));
  const float* table = pos_embed_.data().data();
  for (std::int64_t i = 0; i < b * k; ++i) {
    std::copy(table + out.positions[i] * spec_.dim, table + (out.positions[i] + 1) * spec_.dim,
              pos.begin() + i * spec_.dim);
  }
  Tensor x = add(patch_embed_(selected), Tensor::from_data({b, k, spec_.dim}, std::move(pos)));
  std::vector<Tensor> parts{broadcast_to(cls_token_, {b, 1, spec_.dim})};
  if (spec_.use_distill_token) parts.push_back(broadcast_to(dist_token_, {b, 1, spec_.dim}));
  parts.push_back(x);
  out.tokens = concat(parts, 1);
  out.has_cls = true;
  out.has_dist = spec_.use_distill_token;
  return out;
}

TokenBatch VitEncoder::encode(const TokenBatch& embedded, Rng* rng, std::vector<Tensor>* hidden) const {
  if (embedded.tokens.ndim() != 3 || embedded.tokens.dim(2) != spec_.dim) {
    throw ShapeError("encode: tokens " + shape_str(embedded.tokens.shape()) + " do not have width " +
                     std::to_string(spec_.dim));
  }
  TokenBatch out = embedded;
  Tensor x = embedded.tokens;
  if (hidden) hidden->push_back(x);
  for (const auto& blk : blocks_) {
    x = blk.forward(x, rng);
    if (hidden) hidden->push_back(x);
  }
  out.tokens = x;
  return out;
}

TokenBatch VitEncoder::forward(const Tensor& patches, std::span<const std::int64_t> keep, std::int64_t k,
                               Rng* rng) const {
  TokenBatch t = encode(embed(patches, keep, k), rng);
  t.tokens = norm_(t.tokens);
  return t;
}

void VitEncoder::register_params(ParameterSet& params, const std::string& prefix) const {
  patch_embed_.register_params(params, prefix + "patch_embed.", 0);
  params.add(prefix + "cls_token", cls_token_, 0, false);
  if (spec_.use_distill_token) params.add(prefix + "dist_token", dist_token_, 0, false);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].register_params(params, prefix + "blocks." + std::to_string(i) + ".", static_cast<int>(i) + 1);
  }
  norm_.register_params(params, prefix + "norm.", spec_.depth + 1);
}

Logits classify(const TokenBatch& features, const ClassifierHeads& heads) {
  if (!features.has_cls) throw ConfigError("classify: features carry no class token");
  Logits out;
  out.cls = heads.head(reshape(slice(features.tokens, 1, 0, 1), {features.batch(), -1}));
  if (heads.dist_head) {
    if (!features.has_dist) throw ConfigError("classify: distillation head requires a distillation token");
    out.dist = (*heads.dist_head)(reshape(slice(features.tokens, 1, 1, 2), {features.batch(), -1}));
  }
  return out;
}

Tensor combined_log_probs(const Logits& logits) {
  Tensor lp = log_softmax(logits.cls);
  if (!logits.dist.defined()) return lp;
  return scale(add(lp, log_softmax(logits.dist)), 0.5F);
}

std::vector<std::int64_t> argmax_rows(const Tensor& scores) {
  if (scores.ndim() != 2) throw ShapeError("argmax_rows: expected [b,c], got " + shape_str(scores.shape()));
  const std::int64_t b = scores.dim(0), c = scores.dim(1);
  std::vector<std::int64_t> out(static_cast<std::size_t>(b));
  const float* p = scores.data().data();
  for (std::int64_t r = 0; r < b; ++r) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < c; ++j) {
      if (p[r * c + j] > p[r * c + best]) best = j;
    }
    out[r] = best;
  }
  return out;
}

VitClassifier::VitClassifier(const VitSpec& spec, int num_classes, Rng& rng)
    : encoder_(spec, rng), num_classes_(num_classes) {
  if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  heads_.head = LinearLayer::normal(spec.dim, num_classes, rng, 0.02F);
  if (spec.use_distill_token) heads_.dist_head = LinearLayer::normal(spec.dim, num_classes, rng, 0.02F);
}

void VitClassifier::enable_distillation(Rng& rng) {
  encoder_.enable_distill_token(rng);
  if (!heads_.dist_head) {
    // Fresh task layer, same init as the class head.
    heads_.dist_head = LinearLayer::normal(encoder_.spec().dim, num_classes_, rng, 0.02F);
  }
}

Logits VitClassifier::forward(const Tensor& patches, std::span<const std::int64_t> keep, std::int64_t k,
                              Rng* rng) const {
  return classify(encoder_.forward(patches, keep, k, rng), heads_);
}

std::vector<std::int64_t> VitClassifier::predict(const Tensor& patches, std::span<const std::int64_t> keep,
                                                 std::int64_t k) const {
  NoGradGuard guard;
  return argmax_rows(combined_log_probs(forward(patches, keep, k)));
}

ParameterSet VitClassifier::parameters() const {
  ParameterSet params;
  encoder_.register_params(params, "encoder.");
  const int top = encoder_.spec().depth + 1;
  heads_.head.register_params(params, "head.", top);
  if (heads_.dist_head) heads_.dist_head->register_params(params, "dist_head.", top);
  return params;
}

}  // namespace g2sd
