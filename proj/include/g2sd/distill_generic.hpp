#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "g2sd/mae.hpp"
#include "g2sd/metrics.hpp"
#include "g2sd/training.hpp"

namespace g2sd {

// Alignment targets. DecoderAll is the default: decoder features at every
// position. EncoderVisible aligns encoder outputs at visible positions,
// DecoderMasked restricts the decoder term to masked positions and
// EncoderVisibleDecoderMasked sums both.
enum class GenericTarget { EncoderVisible, DecoderMasked, EncoderVisibleDecoderMasked, DecoderAll };
enum class LossReduction { Mean, Sum };

std::string generic_target_name(GenericTarget t);
GenericTarget parse_generic_target(const std::string& name);

struct GenericDistillSpec {
  VitSpec student;
  DecoderSpec student_decoder{2, 64, 4, 4};
  int target_layer = 2;  // 1-based teacher decoder layer
  double mask_ratio = 0.75;
  float delta = 1.0F;
  GenericTarget target = GenericTarget::DecoderAll;
  LossReduction reduction = LossReduction::Mean;

  void validate() const;
  // Also checks the teacher: layer range and patch geometry.
  void validate(const MaeSpec& teacher) const;
};

// Teacher decoder hidden features after `layer` blocks at every patch
// position, [B, N, D_t]. Recorded without gradient.
Tensor teacher_forward_to_layer(const MaeModel& teacher, const Tensor& patches, std::span<const MaskPlan> plans,
                                int layer);

struct GenericPrediction {
  Tensor decoder;          // [B, N, D_t] or undefined
  Tensor encoder_visible;  // [B, |V|, D_enc_t] or undefined
  std::int64_t encoder_tokens = 0;
};

class GenericStudent {
 public:
  GenericStudent() = default;
  // teacher_encoder_dim > 0 adds a projection for the encoder target.
  GenericStudent(const GenericDistillSpec& spec, int teacher_decoder_dim, int teacher_encoder_dim, Rng& rng);

  const GenericDistillSpec& spec() const { return spec_; }
  VitEncoder& encoder() { return encoder_; }
  const VitEncoder& encoder() const { return encoder_; }
  MaskedDecoder& decoder() { return decoder_; }
  const MaskedDecoder& decoder() const { return decoder_; }
  // The decoder head is the projection W to the teacher decoder width.
  LinearLayer& projection() { return decoder_.output(); }
  bool has_encoder_projection() const { return encoder_proj_.weight.defined(); }

  GenericPrediction forward(const Tensor& patches, std::span<const MaskPlan> plans, Rng* rng = nullptr) const;
  ParameterSet parameters() const;

 private:
  GenericDistillSpec spec_;
  VitEncoder encoder_;
  MaskedDecoder decoder_;
  LinearLayer encoder_proj_;
};

// Smooth-l1 between the affine-free layer norm of the teacher features and
// the student predictions, weighted per token ([B, N] weights). Mean
// reduction divides by (sum of weights) * feature dim.
Tensor generic_loss(const Tensor& teacher, const Tensor& student, const Tensor& weights, float delta = 1.0F,
                    LossReduction reduction = LossReduction::Mean);
Tensor generic_loss(const Tensor& teacher, const Tensor& student, std::span<const MaskPlan> plans, TokenSet set,
                    float delta = 1.0F, LossReduction reduction = LossReduction::Mean);

// Loss of one batch for the configured target.
Tensor generic_batch_loss(const MaeModel& teacher, const GenericStudent& student, const Tensor& patches,
                          std::span<const MaskPlan> plans, Rng* rng = nullptr);

struct GenericResult {
  std::vector<double> losses;
  double cka_start = 0.0;  // student vs teacher encoder features on held-out data
  double cka_end = 0.0;
  std::int64_t encoder_tokens = 0;
};

// Trains the student in place; the teacher is only read. With `heldout`
// set, CKA to the teacher encoder is measured before and after. The log
// receives (step, L_GD, lr).
GenericResult run_generic_distillation(const MaeModel& teacher, GenericStudent& student, const Dataset& data,
                                       const TrainConfig& cfg, MetricsLog* log = nullptr,
                                       const Dataset* heldout = nullptr);

}  // namespace g2sd
