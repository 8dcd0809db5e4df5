#include <cmath>
#include <ostream>

#include "g2sd/errors.hpp"
#include "g2sd/mae.hpp"
#include "g2sd/ops.hpp"

namespace g2sd {

PretrainResult pretrain_mae(MaeModel& model, const Dataset& data, const TrainConfig& cfg, MetricsLog* log) {
  cfg.validate();
  const auto& patch = model.spec().encoder.patch;
  if (data.height != patch.image_h || data.width != patch.image_w || data.channels != patch.channels) {
    throw ConfigError("pretrain: dataset geometry does not match the model's patch spec");
  }
  ParameterSet params = model.parameters();
  AdamW opt(params, cfg.adam);
  const std::int64_t spe = cfg.steps_per_epoch(data.size);
  const std::int64_t total = spe * cfg.epochs;
  const auto warmup = static_cast<std::int64_t>(cfg.warmup_epochs * static_cast<float>(spe));
  const std::int64_t n = patch.num_patches();
  PretrainResult result;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(data.size, cfg.seed, epoch);
    double epoch_loss = 0.0;
    for (std::int64_t b = 0; b < spe; ++b, ++step) {
      const auto idx = batch_slice(order, b, cfg.batch_size);
      Rng aug_rng = make_rng(cfg.seed, 0x617567ULL, static_cast<std::uint64_t>(step));
      Rng dp_rng = make_rng(cfg.seed, 0x6470ULL, static_cast<std::uint64_t>(step));
      const Tensor images = augment(data.images(idx), aug_rng, cfg.augment);
      const Tensor patches = patchify(images, patch).tokens;
      const auto plans = sample_masks(static_cast<std::int64_t>(idx.size()), n, model.spec().mask_ratio, cfg.seed,
                                      static_cast<std::uint64_t>(step));
      const float lr = cosine_lr(step, total, warmup, cfg.lr, cfg.min_lr);
      double loss = 0.0;
      try {
        MaeOutput out = model.forward(patches, plans, &dp_rng);
        result.encoder_tokens = out.encoder_tokens;
        loss = out.loss.item();
        opt.zero_grad();
        out.loss.backward();
      } catch (const NumericError& e) {
        throw TrainingError("pretrain", step, e.what());
      }
      if (!std::isfinite(loss)) throw TrainingError("pretrain", step, "non-finite loss");
      opt.step(lr);
      result.losses.push_back(loss);
      epoch_loss += loss;
      if (log) log->append(step, {loss, lr});
    }
    if (cfg.progress) {
      *cfg.progress << "[pretrain] epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << epoch_loss / spe << "\n";
    }
  }
  return result;
}

}  // namespace g2sd
