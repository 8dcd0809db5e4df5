#include "g2sd/distill_specific.hpp"

#include "g2sd/errors.hpp"
#include "g2sd/ops.hpp"

namespace g2sd {

void SpecificDistillSpec::validate() const {
  if (!(beta >= 0.0F)) throw ConfigError("specific: beta must be >= 0");
  if (!(smoothing >= 0.0F && smoothing < 1.0F)) throw ConfigError("specific: smoothing must be in [0,1)");
  if (!(layer_decay > 0.0F && layer_decay <= 1.0F)) throw ConfigError("specific: layer decay must be in (0,1]");
  if (!(kd_tau > 0.0F)) throw ConfigError("specific: tau must be > 0");
}

std::vector<std::int64_t> hard_label(const Tensor& teacher_logits) {
  if (teacher_logits.ndim() != 2 || teacher_logits.dim(1) < 2) {
    throw ShapeError("hard_label: expected [b, c] logits with c >= 2, got " + shape_str(teacher_logits.shape()));
  }
  return argmax_rows(teacher_logits);
}

SpecificLoss specific_loss(const Logits& student, std::span<const std::int64_t> labels,
                           std::span<const std::int64_t> teacher_labels, float beta, float smoothing) {
  SpecificLoss out;
  out.task = softmax_cross_entropy(student.cls, labels, smoothing);
  if (beta > 0.0F) {
    if (!student.dist.defined()) throw ConfigError("specific_loss: beta > 0 needs a distillation head");
    out.kd = softmax_cross_entropy(student.dist, teacher_labels, 0.0F);
    out.total = add(out.task, scale(out.kd, beta));
  } else {
    out.kd = Tensor::scalar(0.0F);
    out.total = out.task;
  }
  return out;
}

SpecificLoss specific_loss_soft(const Logits& student, std::span<const std::int64_t> labels,
                                const Tensor& teacher_logits, float beta, float smoothing, float tau) {
  SpecificLoss out;
  out.task = softmax_cross_entropy(student.cls, labels, smoothing);
  if (beta > 0.0F) {
    if (!student.dist.defined()) throw ConfigError("specific_loss: beta > 0 needs a distillation head");
    Tensor target;
    {
      NoGradGuard guard;
      target = softmax(scale(teacher_logits.detach(), 1.0F / tau));
    }
    out.kd = scale(soft_cross_entropy(scale(student.dist, 1.0F / tau), target), tau * tau);
    out.total = add(out.task, scale(out.kd, beta));
  } else {
    out.kd = Tensor::scalar(0.0F);
    out.total = out.task;
  }
  return out;
}

}  // namespace g2sd
