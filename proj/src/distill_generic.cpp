#include "g2sd/distill_generic.hpp"

#include <cmath>
#include <ostream>

#include "g2sd/analysis.hpp"
#include "g2sd/errors.hpp"
#include "g2sd/ops.hpp"

namespace g2sd {

std::string generic_target_name(GenericTarget t) {
  switch (t) {
    case GenericTarget::EncoderVisible: return "encoder_visible";
    case GenericTarget::DecoderMasked: return "decoder_masked";
    case GenericTarget::EncoderVisibleDecoderMasked: return "encoder_visible+decoder_masked";
    case GenericTarget::DecoderAll: return "decoder_all";
  }
  return "unknown";
}

GenericTarget parse_generic_target(const std::string& name) {
  for (auto t : {GenericTarget::EncoderVisible, GenericTarget::DecoderMasked,
                 GenericTarget::EncoderVisibleDecoderMasked, GenericTarget::DecoderAll}) {
    if (generic_target_name(t) == name) return t;
  }
  throw ConfigError("unknown generic target '" + name + "'");
}

namespace {

bool uses_decoder(GenericTarget t) { return t != GenericTarget::EncoderVisible; }
bool uses_encoder(GenericTarget t) {
  return t == GenericTarget::EncoderVisible || t == GenericTarget::EncoderVisibleDecoderMasked;
}

}  // namespace

void GenericDistillSpec::validate() const {
  student.validate();
  student_decoder.validate();
  if (student.use_distill_token) throw ConfigError("generic: student must not carry a distillation token");
  if (target_layer < 1) throw ConfigError("generic: target layer must be >= 1");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("generic: mask ratio must be in (0,1)");
  if (!(delta > 0.0F)) throw ConfigError("generic: delta must be > 0");
}

void GenericDistillSpec::validate(const MaeSpec& teacher) const {
  validate();
  if (target_layer > teacher.decoder.depth) {
    throw IndexError("generic: target layer " + std::to_string(target_layer) + " exceeds teacher decoder depth " +
                     std::to_string(teacher.decoder.depth));
  }
  const auto& a = student.patch;
  const auto& b = teacher.encoder.patch;
  if (a.image_h != b.image_h || a.image_w != b.image_w || a.channels != b.channels || a.patch != b.patch) {
    throw ConfigError("generic: teacher and student patch specs differ");
  }
}

Tensor teacher_forward_to_layer(const MaeModel& teacher, const Tensor& patches, std::span<const MaskPlan> plans,
                                int layer) {
  NoGradGuard guard;
  return teacher.decoder_features(patches.detach(), plans, layer);
}

GenericStudent::GenericStudent(const GenericDistillSpec& spec, int teacher_decoder_dim, int teacher_encoder_dim,
                               Rng& rng)
    : spec_(spec) {
  spec_.validate();
  encoder_ = VitEncoder(spec_.student, rng);
  decoder_ = MaskedDecoder(spec_.student.dim, spec_.student_decoder, spec_.student.patch, teacher_decoder_dim, false, rng);
  if (teacher_encoder_dim > 0) encoder_proj_ = LinearLayer::xavier(spec_.student.dim, teacher_encoder_dim, rng);
}

GenericPrediction GenericStudent::forward(const Tensor& patches, std::span<const MaskPlan> plans, Rng* rng) const {
  const auto keep = visible_index(plans);
  const std::int64_t k = plans.empty() ? 0 : static_cast<std::int64_t>(plans[0].visible.size());
  TokenBatch enc = encoder_.forward(patches, keep, k, rng);
  GenericPrediction out;
  out.encoder_tokens = enc.num_patch_tokens();
  if (uses_decoder(spec_.target)) {
    out.decoder = decoder_.head(decoder_.run_blocks(decoder_.prepare(enc, plans), -1, rng));
  }
  if (uses_encoder(spec_.target)) {
    if (!has_encoder_projection()) throw ConfigError("generic: encoder target needs an encoder projection");
    out.encoder_visible = encoder_proj_(enc.patch_tokens());
  }
  return out;
}

ParameterSet GenericStudent::parameters() const {
  ParameterSet params;
  encoder_.register_params(params, "encoder.");
  const int top = spec_.student.depth + 1;
  decoder_.register_params(params, "decoder.", top);
  if (has_encoder_projection()) encoder_proj_.register_params(params, "encoder_proj.", top);
  return params;
}

Tensor generic_loss(const Tensor& teacher, const Tensor& student, const Tensor& weights, float delta,
                    LossReduction reduction) {
  if (teacher.shape() != student.shape() || teacher.ndim() != 3) {
    throw ShapeError("generic_loss: teacher " + shape_str(teacher.shape()) + " vs student " +
                     shape_str(student.shape()));
  }
  if (weights.shape() != Shape{teacher.dim(0), teacher.dim(1)}) {
    throw ShapeError("generic_loss: weights " + shape_str(weights.shape()) + " do not match tokens");
  }
  Tensor target;
  {
    NoGradGuard guard;
    target = layer_norm(teacher.detach(), Tensor{}, Tensor{}, 1e-6F);
  }
  Tensor per_token = sum_axis(smooth_l1(sub(target, student), delta), -1);  // [B, N]
  Tensor total = sum(mul(per_token, weights));
  if (reduction == LossReduction::Sum) return total;
  double count = 0.0;
  for (float w : weights.data()) count += w;
  if (!(count > 0.0)) throw ConfigError("generic_loss: empty token set");
  return scale(total, static_cast<float>(1.0 / (count * static_cast<double>(teacher.dim(2)))));
}

Tensor generic_loss(const Tensor& teacher, const Tensor& student, std::span<const MaskPlan> plans, TokenSet set,
                    float delta, LossReduction reduction) {
  return generic_loss(teacher, student, token_weights(plans, set), delta, reduction);
}

Tensor generic_batch_loss(const MaeModel& teacher, const GenericStudent& student, const Tensor& patches,
                          std::span<const MaskPlan> plans, Rng* rng) {
  const auto& spec = student.spec();
  GenericPrediction pred = student.forward(patches, plans, rng);
  Tensor loss;
  if (uses_decoder(spec.target)) {
    Tensor t = teacher_forward_to_layer(teacher, patches, plans, spec.target_layer);
    const TokenSet set = spec.target == GenericTarget::DecoderAll ? TokenSet::All : TokenSet::Masked;
    loss = generic_loss(t, pred.decoder, plans, set, spec.delta, spec.reduction);
  }
  if (uses_encoder(spec.target)) {
    Tensor t;
    {
      NoGradGuard guard;
      const auto keep = visible_index(plans);
      t = teacher.encoder().forward(patches.detach(), keep, static_cast<std::int64_t>(plans[0].visible.size()))
              .patch_tokens();
    }
    Tensor w = Tensor::full({t.dim(0), t.dim(1)}, 1.0F);
    Tensor enc = generic_loss(t, pred.encoder_visible, w, spec.delta, spec.reduction);
    loss = loss.defined() ? add(loss, enc) : enc;
  }
  return loss;
}

namespace {

double encoder_cka(const VitEncoder& a, const VitEncoder& b, const Dataset& data) {
  const auto x = dump_activations(a, data, -1, "student").features;
  const auto y = dump_activations(b, data, -1, "teacher").features;
  return linear_cka(x, y);
}

}  // namespace

GenericResult run_generic_distillation(const MaeModel& teacher, GenericStudent& student, const Dataset& data,
                                       const TrainConfig& cfg, MetricsLog* log, const Dataset* heldout) {
  cfg.validate();
  const auto& spec = student.spec();
  spec.validate(teacher.spec());
  const auto& patch = spec.student.patch;
  if (data.height != patch.image_h || data.width != patch.image_w || data.channels != patch.channels) {
    throw ConfigError("generic: dataset geometry does not match the patch spec");
  }
  GenericResult result;
  if (heldout) result.cka_start = encoder_cka(student.encoder(), teacher.encoder(), *heldout);
  ParameterSet params = student.parameters();
  AdamW opt(params, cfg.adam);
  const std::int64_t spe = cfg.steps_per_epoch(data.size);
  const std::int64_t total = spe * cfg.epochs;
  const auto warmup = static_cast<std::int64_t>(cfg.warmup_epochs * static_cast<float>(spe));
  const std::int64_t n = patch.num_patches();
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(data.size, cfg.seed, epoch);
    double epoch_loss = 0.0;
    for (std::int64_t b = 0; b < spe; ++b, ++step) {
      const auto idx = batch_slice(order, b, cfg.batch_size);
      Rng aug_rng = make_rng(cfg.seed, 0x617567ULL, static_cast<std::uint64_t>(step));
      Rng dp_rng = make_rng(cfg.seed, 0x6470ULL, static_cast<std::uint64_t>(step));
      const Tensor patches = patchify(augment(data.images(idx), aug_rng, cfg.augment), patch).tokens;
      const auto plans = sample_masks(static_cast<std::int64_t>(idx.size()), n, spec.mask_ratio, cfg.seed,
                                      static_cast<std::uint64_t>(step));
      const float lr = cosine_lr(step, total, warmup, cfg.lr, cfg.min_lr);
      double loss = 0.0;
      try {
        Tensor l = generic_batch_loss(teacher, student, patches, plans, &dp_rng);
        loss = l.item();
        opt.zero_grad();
        l.backward();
      } catch (const NumericError& e) {
        throw TrainingError("generic", step, e.what());
      }
      if (!std::isfinite(loss)) throw TrainingError("generic", step, "non-finite loss");
      opt.step(lr);
      result.losses.push_back(loss);
      epoch_loss += loss;
      if (log) log->append(step, {loss, lr});
    }
    if (cfg.progress) {
      *cfg.progress << "[generic] epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << epoch_loss / spe << "\n";
    }
  }
  result.encoder_tokens = n - masked_count(n, spec.mask_ratio);
  if (heldout) result.cka_end = encoder_cka(student.encoder(), teacher.encoder(), *heldout);
  return result;
}

}  // namespace g2sd
