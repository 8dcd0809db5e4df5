#include "g2sd/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "g2sd/errors.hpp"

namespace g2sd {

void adamw_step(std::span<float> param, std::span<const float> grad, AdamState& state, float lr,
                const AdamWConfig& cfg) {
  if (param.size() != grad.size()) throw ShapeError("adamw_step: grad size mismatch");
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0F);
    state.v.assign(param.size(), 0.0F);
  }
  if (state.m.size() != param.size()) throw ShapeError("adamw_step: state size mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0F - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0F - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    const double update = mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * static_cast<double>(param[i]);
    param[i] = static_cast<float>(param[i] - lr * update);
  }
}

AdamW::AdamW(ParameterSet& params, AdamWConfig cfg, std::vector<float> lr_scale)
    : params_(&params), cfg_(cfg), lr_scale_(std::move(lr_scale)), state_(params.size()) {
  if (lr_scale_.empty()) lr_scale_.assign(params.size(), 1.0F);
  if (lr_scale_.size() != params.size()) throw ConfigError("AdamW: lr scale count does not match parameters");
}

void AdamW::step(float lr) {
  auto& items = params_->items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& p = items[i];
    if (!p.tensor.has_grad()) continue;
    AdamWConfig c = cfg_;
    if (!p.decay) c.weight_decay = 0.0F;
    adamw_step(p.tensor.mutable_data(), p.tensor.grad(), state_[i], lr * lr_scale_[i], c);
  }
}

float cosine_lr(std::int64_t step, std::int64_t total, std::int64_t warmup, float base, float min_lr) {
  if (warmup > 0 && step < warmup) return base * static_cast<float>(step + 1) / static_cast<float>(warmup);
  if (total <= warmup) return base;
  const double t = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(total - warmup));
  return static_cast<float>(min_lr + (base - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

std::vector<float> layer_decay_lrs(float base, int depth, float decay) {
  if (!(decay > 0.0F && decay <= 1.0F)) throw ConfigError("layer decay must be in (0, 1]");
  if (depth < 0) throw ConfigError("layer_decay_lrs: negative depth");
  std::vector<float> lrs(static_cast<std::size_t>(depth) + 2);
  for (int d = 0; d <= depth + 1; ++d) {
    lrs[static_cast<std::size_t>(d)] = static_cast<float>(base * std::pow(static_cast<double>(decay), depth + 1 - d));
  }
  return lrs;
}

std::vector<float> layer_decay_scales(const ParameterSet& params, int depth, float decay) {
  const auto lrs = layer_decay_lrs(1.0F, depth, decay);
  std::vector<float> out;
  out.reserve(params.size());
  for (const auto& p : params.items()) {
    const int layer = std::clamp(p.layer, 0, depth + 1);
    out.push_back(lrs[static_cast<std::size_t>(layer)]);
  }
  return out;
}

}  // namespace g2sd
