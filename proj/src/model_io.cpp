#include "g2sd/model_io.hpp"

#include "g2sd/errors.hpp"
#include "g2sd/metrics.hpp"

namespace g2sd {

namespace {

std::string num(double v) { return format_scalar(v); }

void require_all(ParameterSet& params, const Checkpoint& ckpt) {
  const auto copied = load_params(params, ckpt);
  if (copied != params.size()) {
    for (const auto& p : params.items()) {
      if (!ckpt.find(p.name)) throw CheckpointError("checkpoint lacks tensor " + p.name);
    }
  }
  if (ckpt.tensors.size() != params.size()) {
    for (const auto& t : ckpt.tensors) {
      if (!params.find(t.name)) throw CheckpointError("checkpoint has unexpected tensor " + t.name);
    }
  }
}

Config spec_config(const std::string& kind) {
  Config cfg;
  cfg.set("kind", kind);
  return cfg;
}

}  // namespace

void put_vit_spec(Config& cfg, const std::string& prefix, const VitSpec& spec) {
  cfg.set(prefix + "depth", std::to_string(spec.depth));
  cfg.set(prefix + "dim", std::to_string(spec.dim));
  cfg.set(prefix + "heads", std::to_string(spec.heads));
  cfg.set(prefix + "mlp_ratio", std::to_string(spec.mlp_ratio));
  cfg.set(prefix + "drop_path", num(spec.drop_path));
  cfg.set(prefix + "distill_token", spec.use_distill_token ? "true" : "false");
  cfg.set(prefix + "image_size", std::to_string(spec.patch.image_h));
  cfg.set(prefix + "image_width", std::to_string(spec.patch.image_w));
  cfg.set(prefix + "channels", std::to_string(spec.patch.channels));
  cfg.set(prefix + "patch", std::to_string(spec.patch.patch));
}

VitSpec get_vit_spec(const Config& cfg, const std::string& prefix) {
  VitSpec spec;
  spec.depth = static_cast<int>(cfg.get_int(prefix + "depth"));
  spec.dim = static_cast<int>(cfg.get_int(prefix + "dim"));
  spec.heads = static_cast<int>(cfg.get_int(prefix + "heads"));
  spec.mlp_ratio = static_cast<int>(cfg.get_int(prefix + "mlp_ratio"));
  spec.drop_path = static_cast<float>(cfg.get_double(prefix + "drop_path"));
  spec.use_distill_token = cfg.has(prefix + "distill_token") && cfg.get_bool(prefix + "distill_token");
  spec.patch.image_h = static_cast<int>(cfg.get_int(prefix + "image_size"));
  spec.patch.image_w =
      cfg.has(prefix + "image_width") ? static_cast<int>(cfg.get_int(prefix + "image_width")) : spec.patch.image_h;
  spec.patch.channels = static_cast<int>(cfg.get_int(prefix + "channels"));
  spec.patch.patch = static_cast<int>(cfg.get_int(prefix + "patch"));
  spec.validate();
  return spec;
}

void put_decoder_spec(Config& cfg, const std::string& prefix, const DecoderSpec& spec) {
  cfg.set(prefix + "depth", std::to_string(spec.depth));
  cfg.set(prefix + "dim", std::to_string(spec.dim));
  cfg.set(prefix + "heads", std::to_string(spec.heads));
  cfg.set(prefix + "mlp_ratio", std::to_string(spec.mlp_ratio));
}

DecoderSpec get_decoder_spec(const Config& cfg, const std::string& prefix) {
  DecoderSpec spec;
  spec.depth = static_cast<int>(cfg.get_int(prefix + "depth"));
  spec.dim = static_cast<int>(cfg.get_int(prefix + "dim"));
  spec.heads = static_cast<int>(cfg.get_int(prefix + "heads"));
  spec.mlp_ratio = static_cast<int>(cfg.get_int(prefix + "mlp_ratio"));
  spec.validate();
  return spec;
}

Config checkpoint_spec(const Checkpoint& ckpt) { return Config::parse(ckpt.spec); }

std::string checkpoint_kind(const Checkpoint& ckpt) {
  const Config cfg = checkpoint_spec(ckpt);
  if (!cfg.has("kind")) throw CheckpointError("checkpoint spec has no kind");
  return cfg.get_string("kind");
}

Checkpoint to_checkpoint(const MaeModel& model) {
  Config cfg = spec_config("mae");
  put_vit_spec(cfg, "encoder.", model.spec().encoder);
  put_decoder_spec(cfg, "decoder.", model.spec().decoder);
  cfg.set("mask_ratio", num(model.spec().mask_ratio));
  return checkpoint_from_params(model.parameters(), cfg.to_string());
}

Checkpoint to_checkpoint(const GenericStudent& student, int teacher_decoder_dim, int teacher_encoder_dim) {
  const auto& spec = student.spec();
  Config cfg = spec_config("generic_student");
  put_vit_spec(cfg, "encoder.", spec.student);
  put_decoder_spec(cfg, "decoder.", spec.student_decoder);
  cfg.set("target_layer", std::to_string(spec.target_layer));
  cfg.set("mask_ratio", num(spec.mask_ratio));
  cfg.set("delta", num(spec.delta));
  cfg.set("target", generic_target_name(spec.target));
  cfg.set("reduction", spec.reduction == LossReduction::Mean ? "mean" : "sum");
  cfg.set("teacher_decoder_dim", std::to_string(teacher_decoder_dim));
  cfg.set("teacher_encoder_dim", std::to_string(student.has_encoder_projection() ? teacher_encoder_dim : 0));
  return checkpoint_from_params(student.parameters(), cfg.to_string());
}

Checkpoint to_checkpoint(const VitClassifier& model) {
  Config cfg = spec_config("classifier");
  put_vit_spec(cfg, "encoder.", model.encoder().spec());
  cfg.set("num_classes", std::to_string(model.num_classes()));
  return checkpoint_from_params(model.parameters(), cfg.to_string());
}

MaeModel mae_from_checkpoint(const Checkpoint& ckpt) {
  const Config cfg = checkpoint_spec(ckpt);
  if (checkpoint_kind(ckpt) != "mae") throw CheckpointError("expected an mae checkpoint, got " + checkpoint_kind(ckpt));
  MaeSpec spec;
  spec.encoder = get_vit_spec(cfg, "encoder.");
  spec.decoder = get_decoder_spec(cfg, "decoder.");
  spec.mask_ratio = cfg.get_double("mask_ratio");
  Rng rng = make_rng(0);
  MaeModel model(spec, rng);
  ParameterSet params = model.parameters();
  require_all(params, ckpt);
  return model;
}

GenericStudent generic_student_from_checkpoint(const Checkpoint& ckpt) {
  const Config cfg = checkpoint_spec(ckpt);
  if (checkpoint_kind(ckpt) != "generic_student") {
    throw CheckpointError("expected a generic_student checkpoint, got " + checkpoint_kind(ckpt));
  }
  GenericDistillSpec spec;
  spec.student = get_vit_spec(cfg, "encoder.");
  spec.student_decoder = get_decoder_spec(cfg, "decoder.");
  spec.target_layer = static_cast<int>(cfg.get_int("target_layer"));
  spec.mask_ratio = cfg.get_double("mask_ratio");
  spec.delta = static_cast<float>(cfg.get_double("delta"));
  spec.target = parse_generic_target(cfg.get_string("target"));
  spec.reduction = cfg.get_string("reduction") == "sum" ? LossReduction::Sum : LossReduction::Mean;
  Rng rng = make_rng(0);
  GenericStudent student(spec, static_cast<int>(cfg.get_int("teacher_decoder_dim")),
                         static_cast<int>(cfg.get_int("teacher_encoder_dim")), rng);
  ParameterSet params = student.parameters();
  require_all(params, ckpt);
  return student;
}

VitClassifier classifier_from_checkpoint(const Checkpoint& ckpt) {
  const Config cfg = checkpoint_spec(ckpt);
  if (checkpoint_kind(ckpt) != "classifier") {
    throw CheckpointError("expected a classifier checkpoint, got " + checkpoint_kind(ckpt));
  }
  Rng rng = make_rng(0);
  VitClassifier model(get_vit_spec(cfg, "encoder."), static_cast<int>(cfg.get_int("num_classes")), rng);
  ParameterSet params = model.parameters();
  require_all(params, ckpt);
  return model;
}

VitSpec encoder_spec_of(const Checkpoint& ckpt) { return get_vit_spec(checkpoint_spec(ckpt), "encoder."); }

VitClassifier classifier_from_encoder(const Checkpoint& ckpt, int num_classes, Rng& rng) {
  VitSpec spec = encoder_spec_of(ckpt);
  spec.use_distill_token = false;
  VitClassifier model(spec, num_classes, rng);
  ParameterSet params = model.parameters();
  std::size_t expected = 0;
  for (const auto& p : params.items()) expected += p.name.starts_with("encoder.") ? 1 : 0;
  const auto copied = load_params(params, ckpt, "encoder.", "encoder.");
  if (copied != expected) {
    throw CheckpointError("checkpoint provides " + std::to_string(copied) + " of " + std::to_string(expected) +
                          " encoder tensors");
  }
  return model;
}

}  // namespace g2sd
