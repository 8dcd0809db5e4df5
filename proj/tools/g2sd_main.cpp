#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "g2sd/analysis.hpp"
#include "g2sd/checkpoint.hpp"
#include "g2sd/errors.hpp"
#include "g2sd/metrics.hpp"
#include "g2sd/model_io.hpp"
#include "g2sd/runtime.hpp"
#include "g2sd/stages.hpp"

namespace fs = std::filesystem;
using namespace g2sd;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  long seed = -1;
  int workers = 0;
  std::string axis;
  std::string values;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "config file (key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "override, key=value (repeatable)");
  cmd->add_option("--out", o.out, "output directory (default $G2SD_OUT or ./runs)");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--workers", o.workers, "evaluation worker threads");
}

Config resolve(const Options& o) {
  Config cfg = default_config();
  if (!o.config.empty()) cfg.merge_known(Config::load(o.config));
  for (const auto& s : o.sets) cfg.apply_override(s);
  if (o.seed >= 0) cfg.set("run.seed", std::to_string(o.seed));
  if (o.workers > 0) cfg.set("run.workers", std::to_string(o.workers));
  if (!o.axis.empty()) cfg.set("ablate.axis", o.axis);
  if (!o.values.empty()) cfg.set("ablate.values", o.values);
  return cfg;
}

fs::path path_or(const Config& cfg, const std::string& key, const fs::path& fallback) {
  const auto v = cfg.get_string(key);
  return v.empty() ? fallback : fs::path(v);
}

std::uint64_t run_seed(const Config& cfg) { return static_cast<std::uint64_t>(cfg.get_int("run.seed")); }

VitClassifier load_classifier(const fs::path& path) {
  return classifier_from_checkpoint(load_checkpoint(path));
}

int verb_pretrain(const StageContext& ctx) {
  stage_pretrain(ctx, load_split(ctx.cfg, "pool"));
  std::cout << "wrote " << (ctx.out / "teacher_mae.ckpt").string() << "\n";
  return 0;
}

int verb_baseline(const StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const Dataset train = load_split(cfg, "train");
  const Dataset test = load_split(cfg, "test");
  const auto which = cfg.get_string("baseline.model");
  const auto init = cfg.get_string("paths.init");
  const auto seed = run_seed(cfg);
  Rng rng = make_rng(seed, 0x696e6974ULL);
  if (which == "teacher") {
    VitClassifier model = init.empty() ? VitClassifier(teacher_spec(cfg).encoder, train.num_classes, rng)
                                       : classifier_from_encoder(load_checkpoint(init), train.num_classes, rng);
    TrainConfig tc = train_config(cfg, "finetune", seed);
    tc.progress = ctx.progress;
    fs::remove(ctx.out / "teacher_classifier_metrics.csv");
    MetricsLog log(ctx.out / "teacher_classifier_metrics.csv", specific_metric_names());
    const auto r = run_supervised(model, train, &test, static_cast<float>(cfg.get_double("finetune.smoothing")),
                                  init.empty() ? 1.0F : static_cast<float>(cfg.get_double("finetune.layer_decay")), tc,
                                  &log, ctx.workers);
    save_checkpoint(ctx.out / "teacher_classifier.ckpt", to_checkpoint(model));
    std::cout << "teacher accuracy " << format_scalar(r.final_accuracy) << "\n";
    return 0;
  }
  if (which != "student") throw ConfigError("baseline.model must be teacher or student");
  VitClassifier model = init.empty() ? VitClassifier(student_spec(cfg), train.num_classes, rng)
                                     : classifier_from_encoder(load_checkpoint(init), train.num_classes, rng);
  stage_specific(ctx, nullptr, model, init.empty(), train, nullptr, seed, "baseline_student");
  std::cout << "student accuracy " << format_scalar(evaluate_accuracy(model, test, 128, ctx.workers)) << "\n";
  return 0;
}

int verb_generic(const StageContext& ctx) {
  const MaeModel teacher =
      mae_from_checkpoint(load_checkpoint(path_or(ctx.cfg, "paths.teacher_mae", ctx.out / "teacher_mae.ckpt")));
  GenericResult r;
  stage_generic(ctx, teacher, load_split(ctx.cfg, "pool"), run_seed(ctx.cfg), "generic_student", &r);
  std::cout << "final L_GD " << format_scalar(r.losses.empty() ? 0.0 : r.losses.back()) << "\n";
  return 0;
}

int verb_specific(const StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const Dataset train = load_split(cfg, "train");
  const Dataset test = load_split(cfg, "test");
  const VitClassifier teacher =
      load_classifier(path_or(cfg, "paths.teacher_classifier", ctx.out / "teacher_classifier.ckpt"));
  const auto seed = run_seed(cfg);
  Rng rng = make_rng(seed, 0x68656164ULL);
  const auto init = cfg.get_string("paths.init");
  const bool scratch = init == "scratch";
  VitClassifier student =
      scratch ? VitClassifier(student_spec(cfg), train.num_classes, rng)
              : classifier_from_encoder(load_checkpoint(init.empty() ? ctx.out / "generic_student.ckpt" : fs::path(init)),
                                        train.num_classes, rng);
  stage_specific(ctx, &teacher, student, scratch, train, &test, seed, "g2sd_student");
  std::cout << "student accuracy " << format_scalar(evaluate_accuracy(student, test, 128, ctx.workers)) << "\n";
  return 0;
}

int verb_eval(const StageContext& ctx) {
  const fs::path model_path = path_or(ctx.cfg, "paths.model", ctx.out / "g2sd_student.ckpt");
  const VitClassifier model = load_classifier(model_path);
  const Dataset test = load_split(ctx.cfg, "test");
  const double acc =
      evaluate_accuracy(model, test, static_cast<int>(ctx.cfg.get_int("eval.batch_size")), ctx.workers);
  std::ofstream out(ctx.out / "eval.csv");
  out << "model,split,accuracy\n" << model_path.string() << ",test," << format_scalar(acc) << "\n";
  std::cout << "accuracy " << format_scalar(acc) << "\n";
  return 0;
}

int verb_analyze(const StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const VitClassifier model = load_classifier(path_or(cfg, "paths.model", ctx.out / "g2sd_student.ckpt"));
  const Dataset test = load_split(cfg, "test");
  OcclusionOptions opts;
  opts.ratios = cfg.get_doubles("analyze.occlusion_ratios");
  opts.seed = static_cast<std::uint64_t>(cfg.get_int("analyze.seed"));
  opts.pixel_zero = cfg.get_bool("analyze.pixel_zero");
  opts.batch_size = static_cast<int>(cfg.get_int("eval.batch_size"));
  const auto curve = occlusion_curve(model, test, opts);
  write_occlusion_csv(ctx.out / "occlusion.csv", curve);
  write_occlusion_curve(ctx.out / "occlusion.dat", curve);
  const auto rows = corruption_eval(model, test, corruption_specs(cfg), opts.seed, opts.batch_size);
  write_corruption_csv(ctx.out / "corruption.csv", rows);
  for (const auto& p : curve) {
    std::cout << "occlusion " << format_scalar(p.ratio) << " acc " << format_scalar(p.accuracy) << " cka "
              << format_scalar(p.cka) << "\n";
  }
  for (const auto& r : rows) {
    std::cout << r.corruption << ":" << format_scalar(r.strength) << " acc " << format_scalar(r.accuracy) << " delta "
              << format_scalar(r.delta) << "\n";
  }
  const fs::path teacher_path = path_or(cfg, "paths.teacher_classifier", ctx.out / "teacher_classifier.ckpt");
  if (fs::exists(teacher_path)) {
    const VitClassifier teacher = load_classifier(teacher_path);
    const double cka = linear_cka(dump_activations(model.encoder(), test, -1, "model").features,
                                  dump_activations(teacher.encoder(), test, -1, "teacher").features);
    std::ofstream(ctx.out / "cka.csv") << "pair,cka\nmodel-teacher," << format_scalar(cka) << "\n";
    std::cout << "cka to teacher " << format_scalar(cka) << "\n";
  }
  return 0;
}

int verb_ablate(const StageContext& ctx) {
  const auto axis = ctx.cfg.get_string("ablate.axis");
  const auto rows = run_ablation(ctx, axis, ctx.cfg.get_strings("ablate.values"));
  for (const auto& r : rows) {
    std::cout << axis << "=" << r.value << " final L_GD " << format_scalar(r.final_loss);
    if (r.accuracy >= 0.0) std::cout << " acc " << format_scalar(r.accuracy);
    std::cout << "\n";
  }
  return 0;
}

int verb_pipeline(const StageContext& ctx) {
  const auto report = run_pipeline(ctx);
  std::cout << format_pipeline_summary(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"Generic-to-specific distillation of vision transformers"};
  app.require_subcommand(1);
  Options o;
  struct Verb {
    const char* name;
    const char* help;
    int (*run)(const StageContext&);
  };
  const std::vector<Verb> verbs{
      {"pretrain", "MAE pre-training of the teacher", verb_pretrain},
      {"distill-generic", "generic distillation into the student", verb_generic},
      {"distill-specific", "specific distillation for classification", verb_specific},
      {"train-baseline", "supervised training without a teacher", verb_baseline},
      {"eval", "held-out accuracy of a classifier checkpoint", verb_eval},
      {"analyze", "occlusion, corruption and CKA analyses", verb_analyze},
      {"ablate", "generic-stage ablation over one axis", verb_ablate},
      {"pipeline", "every stage end to end with the arms report", verb_pipeline},
  };
  std::vector<CLI::App*> cmds;
  for (const auto& v : verbs) {
    auto* cmd = app.add_subcommand(v.name, v.help);
    add_common(cmd, o);
    if (std::string(v.name) == "ablate") {
      cmd->add_option("--axis", o.axis, "mask_ratio | target_layer | decoder_depth | decoder_width");
      cmd->add_option("--values", o.values, "comma separated values");
    }
    cmds.push_back(cmd);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    std::cerr << app.help();
    return 2;
  }

  StageContext ctx;
  try {
    ctx.cfg = resolve(o);
    ctx.workers = static_cast<int>(ctx.cfg.get_int("run.workers"));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  }
  const char* env_out = std::getenv("G2SD_OUT");
  ctx.out = !o.out.empty() ? fs::path(o.out) : fs::path(env_out ? env_out : "runs");
  ctx.progress = &std::cerr;

  try {
    fs::create_directories(ctx.out);
    ctx.cfg.save(ctx.out / "resolved.cfg");
    for (std::size_t i = 0; i < verbs.size(); ++i) {
      if (cmds[i]->parsed()) return verbs[i].run(ctx);
    }
  } catch (const TrainingError& e) {
    std::cerr << "error: stage " << e.stage() << " failed at step " << e.step() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
