#include "g2sd/stages.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "g2sd/checkpoint.hpp"
#include "g2sd/errors.hpp"
#include "g2sd/metrics.hpp"
#include "g2sd/model_io.hpp"

namespace g2sd {

namespace {

void train_keys(Config& c, const std::string& s, int epochs, int batch, double lr, double wd, double warmup,
                bool crop, bool flip) {
  c.set(s + ".epochs", std::to_string(epochs));
  c.set(s + ".batch_size", std::to_string(batch));
  c.set(s + ".lr", format_scalar(lr));
  c.set(s + ".min_lr", "1e-06");
  c.set(s + ".warmup_epochs", format_scalar(warmup));
  c.set(s + ".weight_decay", format_scalar(wd));
  c.set(s + ".beta1", "0.9");
  c.set(s + ".beta2", "0.999");
  c.set(s + ".crop", crop ? "true" : "false");
  c.set(s + ".flip", flip ? "true" : "false");
}

}  // namespace

Config default_config() {
  Config c;
  c.set("run.seed", "0");
  c.set("run.workers", "1");

  c.set("data.recipe", "striped-shapes");
  c.set("data.dir", "");
  c.set("data.seed", "7");
  c.set("data.image_size", "32");
  c.set("data.train_size", "300");
  c.set("data.pool_size", "4000");
  c.set("data.test_size", "1000");

  c.set("teacher.seed", "1000");
  c.set("teacher.depth", "6");
  c.set("teacher.dim", "128");
  c.set("teacher.heads", "4");
  c.set("teacher.mlp_ratio", "4");
  c.set("teacher.drop_path", "0.1");
  c.set("teacher.patch", "8");
  c.set("teacher.decoder_depth", "4");
  c.set("teacher.decoder_dim", "64");
  c.set("teacher.decoder_heads", "4");

  c.set("student.depth", "3");
  c.set("student.dim", "64");
  c.set("student.heads", "4");
  c.set("student.mlp_ratio", "4");
  c.set("student.drop_path", "0");

  train_keys(c, "pretrain", 40, 64, 1.5e-3, 0.05, 2, true, true);
  c.set("pretrain.mask_ratio", "0.75");

  train_keys(c, "finetune", 60, 64, 1e-3, 0.05, 2, true, true);
  c.set("finetune.layer_decay", "0.75");
  c.set("finetune.smoothing", "0.1");

  train_keys(c, "generic", 20, 64, 1.5e-3, 0.05, 2, true, true);
  c.set("generic.mask_ratio", "0.75");
  c.set("generic.target_layer", "2");
  c.set("generic.decoder_depth", "2");
  c.set("generic.decoder_dim", "64");
  c.set("generic.decoder_heads", "4");
  c.set("generic.delta", "1");
  c.set("generic.target", "decoder_all");
  c.set("generic.reduction", "mean");

  train_keys(c, "specific", 60, 64, 1e-3, 0.05, 2, true, true);
  c.set("specific.beta", "1");
  c.set("specific.smoothing", "0.1");
  c.set("specific.layer_decay", "0.75");
  c.set("specific.scratch_layer_decay", "1");
  c.set("specific.kd", "hard");
  c.set("specific.kd_tau", "1");

  c.set("baseline.model", "student");

  c.set("eval.batch_size", "128");

  c.set("analyze.occlusion_ratios", "0,0.25,0.5,0.75");
  c.set("analyze.pixel_zero", "false");
  c.set("analyze.seed", "99");
  c.set("analyze.corruptions", "gaussian_noise:0.1,gaussian_noise:0.5,patch_shuffle:0.5,color_inversion:1");

  c.set("ablate.axis", "mask_ratio");
  c.set("ablate.values", "0.25,0.75");
  c.set("ablate.specific", "false");

  c.set("pipeline.seeds", "0,1,2");
  c.set("pipeline.arms", "scratch,specific-only,generic-only,G2SD,mae-student");

  c.set("paths.teacher_mae", "");
  c.set("paths.teacher_classifier", "");
  c.set("paths.init", "");
  c.set("paths.model", "");
  return c;
}

Dataset load_split(const Config& cfg, const std::string& split) {
  std::int64_t n = 0;
  std::uint64_t stream = 0;
  if (split == "train") {
    n = cfg.get_int("data.train_size");
    stream = 1;
  } else if (split == "pool") {
    n = cfg.get_int("data.pool_size");
    stream = 2;
  } else if (split == "test") {
    n = cfg.get_int("data.test_size");
    stream = 3;
  } else {
    throw ConfigError("unknown split '" + split + "'");
  }
  const auto size = static_cast<int>(cfg.get_int("data.image_size"));
  const std::string dir = cfg.get_string("data.dir");
  if (!dir.empty()) {
    return load_raw_rgb_dir((std::filesystem::path(dir) / split).string(), size, size, 10, split);
  }
  const auto seed = derive_seed(static_cast<std::uint64_t>(cfg.get_int("data.seed")), stream);
  return synth_dataset(cfg.get_string("data.recipe"), seed, n, split, size);
}

TrainConfig train_config(const Config& cfg, const std::string& s, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = static_cast<int>(cfg.get_int(s + ".epochs"));
  t.batch_size = static_cast<int>(cfg.get_int(s + ".batch_size"));
  t.lr = static_cast<float>(cfg.get_double(s + ".lr"));
  t.min_lr = static_cast<float>(cfg.get_double(s + ".min_lr"));
  t.warmup_epochs = static_cast<float>(cfg.get_double(s + ".warmup_epochs"));
  t.adam.weight_decay = static_cast<float>(cfg.get_double(s + ".weight_decay"));
  t.adam.beta1 = static_cast<float>(cfg.get_double(s + ".beta1"));
  t.adam.beta2 = static_cast<float>(cfg.get_double(s + ".beta2"));
  t.augment.crop = cfg.get_bool(s + ".crop");
  t.augment.flip = cfg.get_bool(s + ".flip");
  t.seed = seed;
  t.validate();
  return t;
}

namespace {

PatchSpec patch_spec(const Config& cfg) {
  PatchSpec p;
  p.image_h = p.image_w = static_cast<int>(cfg.get_int("data.image_size"));
  p.channels = 3;
  p.patch = static_cast<int>(cfg.get_int("teacher.patch"));
  p.validate();
  return p;
}

VitSpec vit_from(const Config& cfg, const std::string& s) {
  VitSpec v;
  v.depth = static_cast<int>(cfg.get_int(s + ".depth"));
  v.dim = static_cast<int>(cfg.get_int(s + ".dim"));
  v.heads = static_cast<int>(cfg.get_int(s + ".heads"));
  v.mlp_ratio = static_cast<int>(cfg.get_int(s + ".mlp_ratio"));
  v.drop_path = static_cast<float>(cfg.get_double(s + ".drop_path"));
  v.patch = patch_spec(cfg);
  v.validate();
  return v;
}

std::uint64_t seed_of(const Config& cfg, const std::string& key) { return static_cast<std::uint64_t>(cfg.get_int(key)); }

void save_model(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::filesystem::create_directories(path.parent_path());
  save_checkpoint(path, ckpt);
}

std::unique_ptr<MetricsLog> fresh_log(const std::filesystem::path& path, std::vector<std::string> names) {
  std::filesystem::create_directories(path.parent_path());
  std::filesystem::remove(path);
  return std::make_unique<MetricsLog>(path, std::move(names));
}

}  // namespace

MaeSpec teacher_spec(const Config& cfg) {
  MaeSpec m;
  m.encoder = vit_from(cfg, "teacher");
  m.decoder.depth = static_cast<int>(cfg.get_int("teacher.decoder_depth"));
  m.decoder.dim = static_cast<int>(cfg.get_int("teacher.decoder_dim"));
  m.decoder.heads = static_cast<int>(cfg.get_int("teacher.decoder_heads"));
  m.decoder.mlp_ratio = m.encoder.mlp_ratio;
  m.mask_ratio = cfg.get_double("pretrain.mask_ratio");
  m.validate();
  return m;
}

VitSpec student_spec(const Config& cfg) { return vit_from(cfg, "student"); }

GenericDistillSpec generic_spec(const Config& cfg) {
  GenericDistillSpec g;
  g.student = student_spec(cfg);
  g.student_decoder.depth = static_cast<int>(cfg.get_int("generic.decoder_depth"));
  g.student_decoder.dim = static_cast<int>(cfg.get_int("generic.decoder_dim"));
  g.student_decoder.heads = static_cast<int>(cfg.get_int("generic.decoder_heads"));
  g.student_decoder.mlp_ratio = g.student.mlp_ratio;
  g.target_layer = static_cast<int>(cfg.get_int("generic.target_layer"));
  g.mask_ratio = cfg.get_double("generic.mask_ratio");
  g.delta = static_cast<float>(cfg.get_double("generic.delta"));
  g.target = parse_generic_target(cfg.get_string("generic.target"));
  const auto red = cfg.get_string("generic.reduction");
  if (red != "mean" && red != "sum") throw ConfigError("generic.reduction must be mean or sum");
  g.reduction = red == "sum" ? LossReduction::Sum : LossReduction::Mean;
  g.validate();
  return g;
}

SpecificDistillSpec specific_spec(const Config& cfg) {
  SpecificDistillSpec s;
  s.beta = static_cast<float>(cfg.get_double("specific.beta"));
  s.smoothing = static_cast<float>(cfg.get_double("specific.smoothing"));
  s.layer_decay = static_cast<float>(cfg.get_double("specific.layer_decay"));
  const auto kd = cfg.get_string("specific.kd");
  if (kd != "hard" && kd != "soft") throw ConfigError("specific.kd must be hard or soft");
  s.kd = kd == "hard" ? KdMode::Hard : KdMode::Soft;
  s.kd_tau = static_cast<float>(cfg.get_double("specific.kd_tau"));
  s.validate();
  return s;
}

std::vector<CorruptionSpec> corruption_specs(const Config& cfg) {
  std::vector<CorruptionSpec> out;
  for (const auto& item : cfg.get_strings("analyze.corruptions")) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("corruption '" + item + "' must be name:strength");
    out.push_back({parse_corruption(item.substr(0, colon)), std::stod(item.substr(colon + 1))});
  }
  return out;
}

MaeModel stage_pretrain(const StageContext& ctx, const Dataset& pool, const std::string& name) {
  const MaeSpec spec = teacher_spec(ctx.cfg);
  const auto seed = seed_of(ctx.cfg, "teacher.seed");
  Rng rng = make_rng(seed, 0x696e6974ULL);
  MaeModel model(spec, rng);
  TrainConfig tc = train_config(ctx.cfg, "pretrain", seed);
  tc.progress = ctx.progress;
  auto log = fresh_log(ctx.out / (name + "_metrics.csv"), {"L_MAE", "lr"});
  pretrain_mae(model, pool, tc, log.get());
  save_model(ctx.out / (name + ".ckpt"), to_checkpoint(model));
  return model;
}

VitClassifier stage_finetune_teacher(const StageContext& ctx, const MaeModel& mae, const Dataset& train,
                                     const Dataset* test, const std::string& name) {
  const auto seed = seed_of(ctx.cfg, "teacher.seed");
  Rng rng = make_rng(seed, 0x68656164ULL);
  VitClassifier model = classifier_from_encoder(to_checkpoint(mae), train.num_classes, rng);
  TrainConfig tc = train_config(ctx.cfg, "finetune", derive_seed(seed, 1));
  tc.progress = ctx.progress;
  auto log = fresh_log(ctx.out / (name + "_metrics.csv"), specific_metric_names());
  run_supervised(model, train, test, static_cast<float>(ctx.cfg.get_double("finetune.smoothing")),
                 static_cast<float>(ctx.cfg.get_double("finetune.layer_decay")), tc, log.get(), ctx.workers);
  save_model(ctx.out / (name + ".ckpt"), to_checkpoint(model));
  return model;
}

GenericStudent stage_generic(const StageContext& ctx, const MaeModel& teacher, const Dataset& pool,
                             std::uint64_t seed, const std::string& name, GenericResult* result) {
  const GenericDistillSpec spec = generic_spec(ctx.cfg);
  spec.validate(teacher.spec());
  Rng rng = make_rng(seed, 0x67656eULL);
  const int enc_dim = spec.target == GenericTarget::DecoderAll || spec.target == GenericTarget::DecoderMasked
                          ? 0
                          : teacher.spec().encoder.dim;
  GenericStudent student(spec, teacher.spec().decoder.dim, enc_dim, rng);
  TrainConfig tc = train_config(ctx.cfg, "generic", seed);
  tc.progress = ctx.progress;
  auto log = fresh_log(ctx.out / (name + "_metrics.csv"), {"L_GD", "lr"});
  GenericResult r = run_generic_distillation(teacher, student, pool, tc, log.get());
  if (result) *result = r;
  save_model(ctx.out / (name + ".ckpt"), to_checkpoint(student, teacher.spec().decoder.dim, enc_dim));
  return student;
}

MaeModel stage_student_mae(const StageContext& ctx, const Dataset& pool, std::uint64_t seed, const std::string& name) {
  const GenericDistillSpec g = generic_spec(ctx.cfg);
  MaeSpec spec;
  spec.encoder = g.student;
  spec.decoder = g.student_decoder;
  spec.mask_ratio = g.mask_ratio;
  Rng rng = make_rng(seed, 0x6d6165ULL);
  MaeModel model(spec, rng);
  TrainConfig tc = train_config(ctx.cfg, "generic", seed);
  tc.progress = ctx.progress;
  auto log = fresh_log(ctx.out / (name + "_metrics.csv"), {"L_MAE", "lr"});
  pretrain_mae(model, pool, tc, log.get());
  save_model(ctx.out / (name + ".ckpt"), to_checkpoint(model));
  return model;
}

SpecificResult stage_specific(const StageContext& ctx, const VitClassifier* teacher, VitClassifier& student,
                              bool scratch_init, const Dataset& train, const Dataset* test, std::uint64_t seed,
                              const std::string& name) {
  SpecificDistillSpec spec = specific_spec(ctx.cfg);
  if (scratch_init) spec.layer_decay = static_cast<float>(ctx.cfg.get_double("specific.scratch_layer_decay"));
  if (!teacher) spec.beta = 0.0F;
  if (teacher && spec.beta > 0.0F && !student.heads().dist_head) {
    Rng rng = make_rng(seed, 0x64697374ULL);
    student.enable_distillation(rng);
  }
  TrainConfig tc = train_config(ctx.cfg, "specific", derive_seed(seed, 2));
  tc.progress = ctx.progress;
  auto log = fresh_log(ctx.out / (name + "_metrics.csv"), specific_metric_names());
  SpecificResult r = run_specific_distillation(teacher, student, train, test, spec, tc, log.get(), ctx.workers);
  save_model(ctx.out / (name + ".ckpt"), to_checkpoint(student));
  return r;
}

const std::vector<std::string>& known_arms() {
  static const std::vector<std::string> arms{"scratch", "specific-only", "generic-only", "G2SD", "mae-student"};
  return arms;
}

double PipelineReport::mean(const std::string& arm, double ArmResult::*field) const {
  double s = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.arm == arm) {
      s += r.*field;
      ++n;
    }
  }
  if (n == 0) throw ConfigError("pipeline report has no rows for arm " + arm);
  return s / n;
}

std::vector<std::string> PipelineReport::arms() const {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (std::find(out.begin(), out.end(), r.arm) == out.end()) out.push_back(r.arm);
  }
  return out;
}

ArmResult measure_arm(const StageContext& ctx, const std::string& arm, std::uint64_t seed, const VitClassifier& model,
                      const VitClassifier& teacher, const Dataset& test) {
  ArmResult r;
  r.arm = arm;
  r.seed = seed;
  OcclusionOptions opts;
  opts.ratios = ctx.cfg.get_doubles("analyze.occlusion_ratios");
  if (std::find(opts.ratios.begin(), opts.ratios.end(), 0.0) == opts.ratios.end()) opts.ratios.insert(opts.ratios.begin(), 0.0);
  if (std::find(opts.ratios.begin(), opts.ratios.end(), 0.5) == opts.ratios.end()) opts.ratios.push_back(0.5);
  opts.seed = seed_of(ctx.cfg, "analyze.seed");
  opts.pixel_zero = ctx.cfg.get_bool("analyze.pixel_zero");
  opts.batch_size = static_cast<int>(ctx.cfg.get_int("eval.batch_size"));
  r.occlusion = occlusion_curve(model, test, opts);
  r.accuracy = r.occlusion.front().ratio == 0.0 ? r.occlusion.front().accuracy
                                                : evaluate_accuracy(model, test, opts.batch_size, ctx.workers);
  r.occlusion_drop = relative_drop(r.occlusion, 0.5);
  const auto x = dump_activations(model.encoder(), test, -1, arm).features;
  const auto y = dump_activations(teacher.encoder(), test, -1, "teacher").features;
  r.cka_to_teacher = linear_cka(x, y);
  return r;
}

PipelineReport run_pipeline(const StageContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const Config& cfg = ctx.cfg;
  const Dataset train = load_split(cfg, "train");
  const Dataset pool = load_split(cfg, "pool");
  const Dataset test = load_split(cfg, "test");
  const auto arms = cfg.get_strings("pipeline.arms");
  for (const auto& a : arms) {
    if (std::find(known_arms().begin(), known_arms().end(), a) == known_arms().end()) {
      throw ConfigError("unknown pipeline arm '" + a + "'");
    }
  }
  auto wants = [&](const std::string& a) { return std::find(arms.begin(), arms.end(), a) != arms.end(); };

  MaeModel mae;
  if (cfg.get_string("paths.teacher_mae").empty()) {
    mae = stage_pretrain(ctx, pool);
  } else {
    mae = mae_from_checkpoint(load_checkpoint(cfg.get_string("paths.teacher_mae")));
  }
  VitClassifier teacher;
  if (cfg.get_string("paths.teacher_classifier").empty()) {
    teacher = stage_finetune_teacher(ctx, mae, train, nullptr);
  } else {
    teacher = classifier_from_checkpoint(load_checkpoint(cfg.get_string("paths.teacher_classifier")));
  }
  PipelineReport report;
  report.teacher_accuracy = evaluate_accuracy(teacher, test, 128, ctx.workers);
  if (ctx.progress) *ctx.progress << "[pipeline] teacher accuracy " << report.teacher_accuracy << "\n";

  const auto student = student_spec(cfg);
  for (double sd : cfg.get_doubles("pipeline.seeds")) {
    const auto seed = static_cast<std::uint64_t>(sd);
    const std::string tag = "seed" + std::to_string(seed) + "_";
    auto finish = [&](const std::string& arm, const VitClassifier& model) {
      ArmResult r = measure_arm(ctx, arm, seed, model, teacher, test);
      if (ctx.progress) {
        *ctx.progress << "[pipeline] seed " << seed << " " << arm << " acc " << r.accuracy << " drop@0.5 "
                      << r.occlusion_drop << " cka " << r.cka_to_teacher << "\n";
      }
      report.rows.push_back(std::move(r));
    };
    Rng head_rng = make_rng(seed, 0x68656164ULL);
    if (wants("scratch")) {
      Rng rng = make_rng(seed, 0x696e6974ULL);
      VitClassifier m(student, train.num_classes, rng);
      stage_specific(ctx, nullptr, m, true, train, nullptr, seed, tag + "scratch");
      finish("scratch", m);
    }
    if (wants("specific-only")) {
      Rng rng = make_rng(seed, 0x696e6974ULL);
      VitClassifier m(student, train.num_classes, rng);
      stage_specific(ctx, &teacher, m, true, train, nullptr, seed, tag + "specific_only");
      finish("specific-only", m);
    }
    if (wants("generic-only") || wants("G2SD")) {
      GenericStudent g = stage_generic(ctx, mae, pool, seed, tag + "generic_student");
      const Checkpoint gc = to_checkpoint(g, mae.spec().decoder.dim, mae.spec().encoder.dim);
      if (wants("generic-only")) {
        Rng rng = head_rng;
        VitClassifier m = classifier_from_encoder(gc, train.num_classes, rng);
        stage_specific(ctx, nullptr, m, false, train, nullptr, seed, tag + "generic_only");
        finish("generic-only", m);
      }
      if (wants("G2SD")) {
        Rng rng = head_rng;
        VitClassifier m = classifier_from_encoder(gc, train.num_classes, rng);
        stage_specific(ctx, &teacher, m, false, train, nullptr, seed, tag + "g2sd");
        finish("G2SD", m);
      }
    }
    if (wants("mae-student")) {
      MaeModel sm = stage_student_mae(ctx, pool, seed, tag + "student_mae");
      Rng rng = head_rng;
      VitClassifier m = classifier_from_encoder(to_checkpoint(sm), train.num_classes, rng);
      stage_specific(ctx, nullptr, m, false, train, nullptr, seed, tag + "mae_student");
      finish("mae-student", m);
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_pipeline_report(ctx.out, report);
  return report;
}

void write_pipeline_report(const std::filesystem::path& dir, const PipelineReport& report) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "pipeline_report.csv");
    out << "arm,seed,accuracy,occlusion_drop_0.5,cka_to_teacher\n";
    for (const auto& r : report.rows) {
      out << r.arm << ',' << r.seed << ',' << format_scalar(r.accuracy) << ',' << format_scalar(r.occlusion_drop) << ','
          << format_scalar(r.cka_to_teacher) << '\n';
    }
  }
  std::ofstream out(dir / "pipeline_summary.csv");
  out << "arm,accuracy,occlusion_drop_0.5,cka_to_teacher\n";
  out << "teacher," << format_scalar(report.teacher_accuracy) << ",,\n";
  for (const auto& a : report.arms()) {
    out << a << ',' << format_scalar(report.mean(a, &ArmResult::accuracy)) << ','
        << format_scalar(report.mean(a, &ArmResult::occlusion_drop)) << ','
        << format_scalar(report.mean(a, &ArmResult::cka_to_teacher)) << '\n';
  }
}

std::string format_pipeline_summary(const PipelineReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(16) << "arm" << std::setw(10) << "acc" << std::setw(14) << "occl-drop@0.5"
     << "cka-to-teacher\n";
  os << std::setw(16) << "teacher" << std::setw(10) << report.teacher_accuracy << "\n";
  for (const auto& a : report.arms()) {
    const std::string label = a == "generic-only" ? "G2SD w/o S.D" : a;
    os << std::setw(16) << label << std::setw(10) << report.mean(a, &ArmResult::accuracy) << std::setw(14)
       << report.mean(a, &ArmResult::occlusion_drop) << report.mean(a, &ArmResult::cka_to_teacher) << "\n";
  }
  return os.str();
}

std::string ablation_key(const std::string& axis) {
  if (axis == "mask_ratio") return "generic.mask_ratio";
  if (axis == "target_layer") return "generic.target_layer";
  if (axis == "decoder_depth") return "generic.decoder_depth";
  if (axis == "decoder_width") return "generic.decoder_dim";
  throw ConfigError("unknown ablation axis '" + axis + "' (mask_ratio, target_layer, decoder_depth, decoder_width)");
}

std::vector<AblationRow> run_ablation(const StageContext& ctx, const std::string& axis,
                                      const std::vector<std::string>& values) {
  const std::string key = ablation_key(axis);
  if (values.empty()) throw ConfigError("ablate: no values given");
  const Dataset pool = load_split(ctx.cfg, "pool");
  MaeModel mae;
  if (ctx.cfg.get_string("paths.teacher_mae").empty()) {
    mae = stage_pretrain(ctx, pool);
  } else {
    mae = mae_from_checkpoint(load_checkpoint(ctx.cfg.get_string("paths.teacher_mae")));
  }
  const bool with_specific = ctx.cfg.get_bool("ablate.specific");
  Dataset train;
  Dataset test;
  VitClassifier teacher;
  if (with_specific) {
    train = load_split(ctx.cfg, "train");
    test = load_split(ctx.cfg, "test");
    if (ctx.cfg.get_string("paths.teacher_classifier").empty()) {
      teacher = stage_finetune_teacher(ctx, mae, train, nullptr);
    } else {
      teacher = classifier_from_checkpoint(load_checkpoint(ctx.cfg.get_string("paths.teacher_classifier")));
    }
  }
  const auto seed = seed_of(ctx.cfg, "run.seed");
  std::vector<AblationRow> rows;
  for (const auto& v : values) {
    StageContext sub = ctx;
    sub.cfg.apply_override(key + "=" + v);
    const std::string name = "ablate_" + axis + "_" + v;
    GenericResult gr;
    GenericStudent g = stage_generic(sub, mae, pool, seed, name, &gr);
    AblationRow row;
    row.value = v;
    row.final_loss = gr.losses.empty() ? std::nan("") : gr.losses.back();
    if (with_specific) {
      Rng rng = make_rng(seed, 0x68656164ULL);
      VitClassifier m = classifier_from_encoder(to_checkpoint(g, mae.spec().decoder.dim, mae.spec().encoder.dim), train.num_classes, rng);
      stage_specific(sub, &teacher, m, false, train, nullptr, seed, name + "_specific");
      row.accuracy = evaluate_accuracy(m, test, 128, ctx.workers);
    }
    rows.push_back(row);
  }
  std::ofstream out(ctx.out / ("ablate_" + axis + ".csv"));
  out << axis << ",final_loss,accuracy\n";
  for (const auto& r : rows) out << r.value << ',' << format_scalar(r.final_loss) << ',' << format_scalar(r.accuracy) << '\n';
  return rows;
}

}  // namespace g2sd
