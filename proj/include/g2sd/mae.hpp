#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "g2sd/metrics.hpp"
#include "g2sd/params.hpp"
#include "g2sd/rng.hpp"
#include "g2sd/training.hpp"
#include "g2sd/vit.hpp"

namespace g2sd {

// Partition of patch indices 0..N-1 into visible and masked sets. Both
// lists are kept in ascending order.
struct MaskPlan {
  std::int64_t num_tokens = 0;
  double ratio = 0.0;
  std::vector<std::int64_t> visible;
  std::vector<std::int64_t> masked;
};

// round(ratio * n), halves rounded up. Throws ConfigError when the result
// would leave either set empty.
std::int64_t masked_count(std::int64_t n, double ratio);

MaskPlan sample_mask(std::int64_t n, double ratio, Rng& rng);

// One plan per sample; sample i draws from the stream (seed, step, i) so
// the result does not depend on how a batch is sharded.
std::vector<MaskPlan> sample_masks(std::int64_t batch, std::int64_t n, double ratio, std::uint64_t seed,
                                   std::uint64_t step);

// Flattened visible (resp. masked) indices of equal-size plans, B*K.
std::vector<std::int64_t> visible_index(std::span<const MaskPlan> plans);
std::vector<std::int64_t> masked_index(std::span<const MaskPlan> plans);

// Fills the full sequence: row i is the visible feature for i in V and the
// shared mask token for i in M; `positions` ([N, D], optional) is then
// added over every row. visible: [B, |V|, D] in plan order.
Tensor mix_tokens(const Tensor& visible, const Tensor& mask_token, std::span<const MaskPlan> plans,
                  const Tensor& positions = {});

// [B, N] weights: 1 on the selected token set, 0 elsewhere.
enum class TokenSet { Visible, Masked, All };
Tensor token_weights(std::span<const MaskPlan> plans, TokenSet set);

// Mean over masked tokens of the per-patch mean squared error between the
// prediction and the affine-free layer-normalized patch.
// predictions, patches: [B, N, P*P*C].
Tensor mae_loss(const Tensor& predictions, const Tensor& patches, std::span<const MaskPlan> plans);

struct DecoderSpec {
  int depth = 8;
  int dim = 64;
  int heads = 4;
  int mlp_ratio = 4;

  void validate() const;
};

// MAE-style decoder: a linear neck from the encoder width, a shared mask
// token, fixed positions, Transformer blocks and an optional output head.
class MaskedDecoder {
 public:
  MaskedDecoder() = default;
  // out_dim > 0 adds a linear head after the blocks; with_norm inserts a
  // LayerNorm before it.
  MaskedDecoder(int encoder_dim, const DecoderSpec& spec, const PatchSpec& patch, int out_dim, bool with_norm,
                Rng& rng);

  const DecoderSpec& spec() const { return spec_; }

  // Decoder input [B, 1 + N, D]: the neck-projected class token followed by
  // mix_tokens over the patch grid.
  Tensor prepare(const TokenBatch& encoded, std::span<const MaskPlan> plans) const;
  // Output of the first `layers` blocks (all when layers < 0).
  Tensor run_blocks(const Tensor& x, int layers = -1, Rng* rng = nullptr) const;
  // Head applied to patch rows only: [B, N, out_dim].
  Tensor head(const Tensor& hidden) const;

  Tensor& mask_token() { return mask_token_; }
  const Tensor& mask_token() const { return mask_token_; }
  LinearLayer& output() { return head_; }
  std::vector<Block>& blocks() { return blocks_; }

  void register_params(ParameterSet& params, const std::string& prefix, int layer) const;

 private:
  DecoderSpec spec_;
  PatchSpec patch_;
  LinearLayer neck_;
  Tensor mask_token_;  // [D]
  Tensor pos_embed_;   // [N, D], fixed
  std::vector<Block> blocks_;
  bool with_norm_ = false;
  LayerNormLayer norm_;
  LinearLayer head_;
};

struct MaeSpec {
  VitSpec encoder;
  DecoderSpec decoder;
  double mask_ratio = 0.75;

  void validate() const;
};

struct MaeOutput {
  Tensor predictions;  // [B, N, P*P*C]
  Tensor loss;
  std::int64_t encoder_tokens = 0;  // patch tokens seen by the encoder per sample
};

class MaeModel {
 public:
  MaeModel() = default;
  MaeModel(const MaeSpec& spec, Rng& rng);

  const MaeSpec& spec() const { return spec_; }
  VitEncoder& encoder() { return encoder_; }
  const VitEncoder& encoder() const { return encoder_; }
  MaskedDecoder& decoder() { return decoder_; }
  const MaskedDecoder& decoder() const { return decoder_; }

  // Encodes only the visible patches, decodes the full sequence.
  MaeOutput forward(const Tensor& patches, std::span<const MaskPlan> plans, Rng* rng = nullptr) const;
  // Hidden decoder features after `layer` blocks (1-based), patch rows only.
  Tensor decoder_features(const Tensor& patches, std::span<const MaskPlan> plans, int layer) const;

  ParameterSet parameters() const;

 private:
  MaeSpec spec_;
  VitEncoder encoder_;
  MaskedDecoder decoder_;
};

struct PretrainResult {
  std::vector<double> losses;        // one per optimizer step
  std::int64_t encoder_tokens = 0;   // patch tokens per sample seen by the encoder
};

// MAE pre-training in place. A non-finite loss aborts with a TrainingError
// naming the step. The log receives (step, L_MAE, lr).
PretrainResult pretrain_mae(MaeModel& model, const Dataset& data, const TrainConfig& cfg, MetricsLog* log = nullptr);

}  // namespace g2sd
