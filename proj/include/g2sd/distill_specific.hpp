#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "g2sd/metrics.hpp"
#include "g2sd/training.hpp"
#include "g2sd/vit.hpp"

namespace g2sd {

enum class KdMode { Hard, Soft };

struct SpecificDistillSpec {
  float beta = 1.0F;
  float smoothing = 0.1F;
  float layer_decay = 0.75F;
  KdMode kd = KdMode::Hard;
  float kd_tau = 1.0F;  // soft mode only

  void validate() const;
};

// Argmax per row, ties to the lowest index. Needs at least 2 classes.
std::vector<std::int64_t> hard_label(const Tensor& teacher_logits);

struct SpecificLoss {
  Tensor task;
  Tensor kd;  // scalar 0 when beta == 0
  Tensor total;
};

// CE(cls head, labels, smoothing) + beta * CE(distillation head, teacher
// labels). The teacher term carries no smoothing.
SpecificLoss specific_loss(const Logits& student, std::span<const std::int64_t> labels,
                           std::span<const std::int64_t> teacher_labels, float beta, float smoothing);
// Soft variant: tau^2 * CE(dist / tau, softmax(teacher / tau)).
SpecificLoss specific_loss_soft(const Logits& student, std::span<const std::int64_t> labels,
                                const Tensor& teacher_logits, float beta, float smoothing, float tau);

struct SpecificResult {
  std::vector<double> task_losses;
  std::vector<double> kd_losses;
  std::vector<double> total_losses;
  std::vector<double> epoch_accuracy;  // per epoch when an eval set is given
  double final_accuracy = 0.0;
};

// Fine-tunes `student` in place. With a teacher and beta > 0 the student
// needs a distillation head. Layer-wise lr decay follows spec.layer_decay.
// The log receives (step, L_Task, L_KD, L_SD, eval_acc); eval_acc is NaN
// except on the last step of each epoch.
SpecificResult run_specific_distillation(const VitClassifier* teacher, VitClassifier& student, const Dataset& train,
                                         const Dataset* eval, const SpecificDistillSpec& spec, const TrainConfig& cfg,
                                         MetricsLog* log = nullptr, int workers = 1);

// Plain supervised fine-tuning: the same loop with no teacher and beta 0.
SpecificResult run_supervised(VitClassifier& model, const Dataset& train, const Dataset* eval, float smoothing,
                              float layer_decay, const TrainConfig& cfg, MetricsLog* log = nullptr, int workers = 1);

// Column names of the specific-stage metrics log.
const std::vector<std::string>& specific_metric_names();

}  // namespace g2sd
