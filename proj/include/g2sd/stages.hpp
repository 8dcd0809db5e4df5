#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "g2sd/analysis.hpp"
#include "g2sd/config.hpp"
#include "g2sd/dataset.hpp"
#include "g2sd/distill_generic.hpp"
#include "g2sd/distill_specific.hpp"
#include "g2sd/mae.hpp"
#include "g2sd/training.hpp"

namespace g2sd {

struct StageContext {
  Config cfg;
  std::filesystem::path out;
  int workers = 1;
  std::ostream* progress = nullptr;
};

// "train" (labeled), "pool" (unlabeled pre-training images) or "test".
Dataset load_split(const Config& cfg, const std::string& split);

// Loop settings from "<section>.epochs", "<section>.lr", ...
TrainConfig train_config(const Config& cfg, const std::string& section, std::uint64_t seed);

MaeSpec teacher_spec(const Config& cfg);
VitSpec student_spec(const Config& cfg);
GenericDistillSpec generic_spec(const Config& cfg);
SpecificDistillSpec specific_spec(const Config& cfg);
std::vector<CorruptionSpec> corruption_specs(const Config& cfg);

// Each stage writes "<name>.ckpt" and "<name>_metrics.csv" under ctx.out.
MaeModel stage_pretrain(const StageContext& ctx, const Dataset& pool, const std::string& name = "teacher_mae");
VitClassifier stage_finetune_teacher(const StageContext& ctx, const MaeModel& mae, const Dataset& train,
                                     const Dataset* test, const std::string& name = "teacher_classifier");
GenericStudent stage_generic(const StageContext& ctx, const MaeModel& teacher, const Dataset& pool,
                             std::uint64_t seed, const std::string& name = "generic_student",
                             GenericResult* result = nullptr);
// Student MAE pre-training with the student encoder and the generic
// stage's decoder shape and budget.
MaeModel stage_student_mae(const StageContext& ctx, const Dataset& pool, std::uint64_t seed,
                           const std::string& name = "student_mae");
// teacher == nullptr trains on labels only. The student is modified in
// place; a distillation head is added when distilling.
SpecificResult stage_specific(const StageContext& ctx, const VitClassifier* teacher, VitClassifier& student,
                              bool scratch_init, const Dataset& train, const Dataset* test, std::uint64_t seed,
                              const std::string& name);

struct ArmResult {
  std::string arm;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double occlusion_drop = 0.0;  // relative drop at the 0.5 token-occlusion ratio
  double cka_to_teacher = 0.0;
  std::vector<OcclusionPoint> occlusion;
};

struct PipelineReport {
  double teacher_accuracy = 0.0;
  std::vector<ArmResult> rows;
  double seconds = 0.0;

  double mean(const std::string& arm, double ArmResult::*field) const;
  std::vector<std::string> arms() const;
};

// Arm names: "scratch", "specific-only", "generic-only" (G2SD w/o S.D),
// "G2SD", "mae-student".
const std::vector<std::string>& known_arms();

ArmResult measure_arm(const StageContext& ctx, const std::string& arm, std::uint64_t seed,
                      const VitClassifier& model, const VitClassifier& teacher, const Dataset& test);

// pretrain -> fine-tune teacher -> per seed: generic -> specific, plus the
// baseline arms -> eval -> analyze. Writes pipeline_report.csv and
// pipeline_summary.csv.
PipelineReport run_pipeline(const StageContext& ctx);

void write_pipeline_report(const std::filesystem::path& dir, const PipelineReport& report);
std::string format_pipeline_summary(const PipelineReport& report);

struct AblationRow {
  std::string value;
  double final_loss = 0.0;
  double accuracy = -1.0;  // -1 when the specific stage is skipped
};

// Axis in {mask_ratio, target_layer, decoder_depth, decoder_width}. One
// metrics file per value plus ablate_<axis>.csv.
std::vector<AblationRow> run_ablation(const StageContext& ctx, const std::string& axis,
                                      const std::vector<std::string>& values);

// Config key an ablation axis overrides.
std::string ablation_key(const std::string& axis);

}  // namespace g2sd
