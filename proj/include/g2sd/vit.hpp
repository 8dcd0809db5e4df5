#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "g2sd/params.hpp"
#include "g2sd/rng.hpp"
#include "g2sd/tensor.hpp"

namespace g2sd {

// Image geometry. Patches are taken in raster order over the grid; each
// patch is flattened row-major within the patch, channel-last.
struct PatchSpec {
  int image_h = 32;
  int image_w = 32;
  int channels = 3;
  int patch = 4;

  void validate() const;
  int grid_h() const { return image_h / patch; }
  int grid_w() const { return image_w / patch; }
  int num_patches() const { return grid_h() * grid_w(); }
  int patch_dim() const { return patch * patch * channels; }
};

struct VitSpec {
  int depth = 6;
  int dim = 128;
  int heads = 4;
  int mlp_ratio = 4;
  float drop_path = 0.0F;
  PatchSpec patch;
  bool use_distill_token = false;

  void validate() const;
};

// Token sequences [batch, tokens, dim]. Special tokens (class, then
// distillation) come first; `positions` holds the patch-grid index of
// each remaining token, sample-major.
struct TokenBatch {
  Tensor tokens;
  std::vector<std::int64_t> positions;
  bool has_cls = false;
  bool has_dist = false;

  std::int64_t batch() const { return tokens.dim(0); }
  std::int64_t num_special() const { return (has_cls ? 1 : 0) + (has_dist ? 1 : 0); }
  std::int64_t num_patch_tokens() const { return tokens.dim(1) - num_special(); }
  // Patch tokens only, [B, K, D].
  Tensor patch_tokens() const;
};

// images: [B, H, W, C] -> tokens [B, N, P*P*C] with positions 0..N-1.
TokenBatch patchify(const Tensor& images, const PatchSpec& spec);
// Inverse of patchify for patch-only token batches covering the full grid.
Tensor unpatchify(const Tensor& tokens, const PatchSpec& spec);

// Fixed 2D sin-cos table [N, dim]; the first dim/2 columns encode the grid
// row, the rest the grid column. dim must be divisible by 4.
Tensor positional_embedding(const PatchSpec& spec, int dim);

struct LinearLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out], may be undefined

  static LinearLayer xavier(int in, int out, Rng& rng, bool with_bias = true);
  static LinearLayer normal(int in, int out, Rng& rng, float stddev, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
  void register_params(ParameterSet& params, const std::string& prefix, int layer) const;
};

struct LayerNormLayer {
  Tensor gamma;
  Tensor beta;
  float eps = 1e-6F;

  static LayerNormLayer create(int dim);
  Tensor operator()(const Tensor& x) const;
  void register_params(ParameterSet& params, const std::string& prefix, int layer) const;
};

// Pre-norm Transformer block: x + attn(LN(x)), then x + mlp(LN(x)).
struct Block {
  LayerNormLayer norm1;
  LinearLayer qkv;
  LinearLayer proj;
  LayerNormLayer norm2;
  LinearLayer fc1;
  LinearLayer fc2;
  int heads = 1;
  float drop_path = 0.0F;

  static Block create(int dim, int heads, int mlp_ratio, float drop_path, Rng& rng);
  // `rng` enables stochastic depth (training); nullptr means inference.
  Tensor forward(const Tensor& x, Rng* rng) const;
  void register_params(ParameterSet& params, const std::string& prefix, int layer) const;
};

// Normal(0, stddev) tensor.
Tensor randn(const Shape& shape, Rng& rng, float stddev);

class VitEncoder {
 public:
  VitEncoder() = default;
  VitEncoder(const VitSpec& spec, Rng& rng);

  const VitSpec& spec() const { return spec_; }

  // Projects patch tokens, adds positions and prepends special tokens.
  // `keep` selects K patch positions per sample (sample-major, B*K); empty
  // keeps every patch in grid order.
  TokenBatch embed(const Tensor& patches, std::span<const std::int64_t> keep = {}, std::int64_t k = 0) const;
  // Runs the Transformer blocks; no final norm. When `hidden` is given it
  // receives the input and every block output (depth + 1 entries).
  TokenBatch encode(const TokenBatch& embedded, Rng* rng = nullptr, std::vector<Tensor>* hidden = nullptr) const;
  // embed -> encode -> final norm.
  TokenBatch forward(const Tensor& patches, std::span<const std::int64_t> keep = {}, std::int64_t k = 0,
                     Rng* rng = nullptr) const;
  Tensor final_norm(const Tensor& x) const { return norm_(x); }

  void register_params(ParameterSet& params, const std::string& prefix) const;

  LinearLayer& patch_embed() { return patch_embed_; }
  Tensor& cls_token() { return cls_token_; }
  Tensor& dist_token() { return dist_token_; }
  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const Tensor& pos_embed() const { return pos_embed_; }
  // Adds a distillation token initialized as the class token plus noise.
  void enable_distill_token(Rng& rng, float noise = 0.02F);

 private:
  VitSpec spec_;
  LinearLayer patch_embed_;
  Tensor cls_token_;   // [1, 1, D]
  Tensor dist_token_;  // [1, 1, D] when enabled
  Tensor pos_embed_;   // [N, D], fixed
  std::vector<Block> blocks_;
  LayerNormLayer norm_;
};

struct Logits {
  Tensor cls;   // [B, classes]
  Tensor dist;  // [B, classes] or undefined
};

struct ClassifierHeads {
  LinearLayer head;
  std::optional<LinearLayer> dist_head;
};

// Reads the class (and distillation) slots of normed features.
Logits classify(const TokenBatch& features, const ClassifierHeads& heads);
// Inference prediction: mean of the heads' log-probabilities when both
// exist, class head log-probabilities otherwise. [B, classes].
Tensor combined_log_probs(const Logits& logits);
// Argmax per row; ties go to the lowest index.
std::vector<std::int64_t> argmax_rows(const Tensor& scores);

class VitClassifier {
 public:
  VitClassifier() = default;
  VitClassifier(const VitSpec& spec, int num_classes, Rng& rng);

  Logits forward(const Tensor& patches, std::span<const std::int64_t> keep = {}, std::int64_t k = 0,
                 Rng* rng = nullptr) const;
  std::vector<std::int64_t> predict(const Tensor& patches, std::span<const std::int64_t> keep = {},
                                    std::int64_t k = 0) const;

  VitEncoder& encoder() { return encoder_; }
  const VitEncoder& encoder() const { return encoder_; }
  ClassifierHeads& heads() { return heads_; }
  const ClassifierHeads& heads() const { return heads_; }
  int num_classes() const { return num_classes_; }

  void enable_distillation(Rng& rng);
  ParameterSet parameters() const;

 private:
  VitEncoder encoder_;
  ClassifierHeads heads_;
  int num_classes_ = 0;
};

}  // namespace g2sd
