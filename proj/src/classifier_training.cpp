#include <cmath>
#include <limits>
#include <ostream>

#include "g2sd/analysis.hpp"
#include "g2sd/distill_specific.hpp"
#include "g2sd/errors.hpp"
#include "g2sd/ops.hpp"

namespace g2sd {

const std::vector<std::string>& specific_metric_names() {
  static const std::vector<std::string> names{"L_Task", "L_KD", "L_SD", "eval_acc"};
  return names;
}

SpecificResult run_specific_distillation(const VitClassifier* teacher, VitClassifier& student, const Dataset& train,
                                         const Dataset* eval, const SpecificDistillSpec& spec, const TrainConfig& cfg,
                                         MetricsLog* log, int workers) {
  cfg.validate();
  spec.validate();
  const auto& patch = student.encoder().spec().patch;
  if (train.height != patch.image_h || train.width != patch.image_w || train.channels != patch.channels) {
    throw ConfigError("specific: dataset geometry does not match the patch spec");
  }
  if (train.num_classes != student.num_classes()) throw ConfigError("specific: dataset and student class counts differ");
  const bool distill = teacher != nullptr && spec.beta > 0.0F;
  if (distill) {
    if (teacher->num_classes() != student.num_classes()) {
      throw ConfigError("specific: teacher has " + std::to_string(teacher->num_classes()) + " classes, student " +
                        std::to_string(student.num_classes()));
    }
    if (!student.heads().dist_head) throw ConfigError("specific: student has no distillation head");
  }
  ParameterSet params = student.parameters();
  const int depth = student.encoder().spec().depth;
  AdamW opt(params, cfg.adam, layer_decay_scales(params, depth, spec.layer_decay));
  const std::int64_t spe = cfg.steps_per_epoch(train.size);
  const std::int64_t total = spe * cfg.epochs;
  const auto warmup = static_cast<std::int64_t>(cfg.warmup_epochs * static_cast<float>(spe));
  const float beta = distill ? spec.beta : 0.0F;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  SpecificResult result;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(train.size, cfg.seed, epoch);
    double epoch_loss = 0.0;
    for (std::int64_t b = 0; b < spe; ++b, ++step) {
      const auto idx = batch_slice(order, b, cfg.batch_size);
      Rng aug_rng = make_rng(cfg.seed, 0x617567ULL, static_cast<std::uint64_t>(step));
      Rng dp_rng = make_rng(cfg.seed, 0x6470ULL, static_cast<std::uint64_t>(step));
      const Tensor patches = patchify(augment(train.images(idx), aug_rng, cfg.augment), patch).tokens;
      const auto labels = train.labels_of(idx);
      const float lr = cosine_lr(step, total, warmup, cfg.lr, cfg.min_lr);
      SpecificLoss loss;
      try {
        Logits logits = student.forward(patches, {}, 0, &dp_rng);
        if (distill) {
          Tensor t;
          {
            NoGradGuard guard;
            t = combined_log_probs(teacher->forward(patches));
          }
          loss = spec.kd == KdMode::Hard ? specific_loss(logits, labels, hard_label(t), beta, spec.smoothing)
                                         : specific_loss_soft(logits, labels, t, beta, spec.smoothing, spec.kd_tau);
        } else {
          loss = specific_loss(logits, labels, {}, 0.0F, spec.smoothing);
        }
        opt.zero_grad();
        loss.total.backward();
      } catch (const NumericError& e) {
        throw TrainingError("specific", step, e.what());
      }
      const double lt = loss.total.item();
      if (!std::isfinite(lt)) throw TrainingError("specific", step, "non-finite loss");
      opt.step(lr);
      result.task_losses.push_back(loss.task.item());
      result.kd_losses.push_back(loss.kd.item());
      result.total_losses.push_back(lt);
      epoch_loss += lt;
      double acc = nan;
      if (eval && b == spe - 1) {
        acc = evaluate_accuracy(student, *eval, 128, workers);
        result.epoch_accuracy.push_back(acc);
      }
      if (log) log->append(step, {loss.task.item(), loss.kd.item(), lt, acc});
    }
    if (cfg.progress) {
      *cfg.progress << "[specific] epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << epoch_loss / spe;
      if (!result.epoch_accuracy.empty() && eval) *cfg.progress << " eval_acc " << result.epoch_accuracy.back();
      *cfg.progress << "\n";
    }
  }
  if (eval) {
    result.final_accuracy =
        result.epoch_accuracy.empty() ? evaluate_accuracy(student, *eval, 128, workers) : result.epoch_accuracy.back();
  }
  return result;
}

SpecificResult run_supervised(VitClassifier& model, const Dataset& train, const Dataset* eval, float smoothing,
                              float layer_decay, const TrainConfig& cfg, MetricsLog* log, int workers) {
  SpecificDistillSpec spec;
  spec.beta = 0.0F;
  spec.smoothing = smoothing;
  spec.layer_decay = layer_decay;
  return run_specific_distillation(nullptr, model, train, eval, spec, cfg, log, workers);
}

}  // namespace g2sd
