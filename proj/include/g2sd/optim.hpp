#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "g2sd/params.hpp"

namespace g2sd {

struct AdamWConfig {
  float beta1 = 0.9F;
  float beta2 = 0.999F;
  float eps = 1e-8F;
  float weight_decay = 0.05F;
};

struct AdamState {
  std::vector<float> m;
  std::vector<float> v;
  std::int64_t step = 0;
};

// One AdamW update with bias-corrected moments and decoupled weight decay:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
void adamw_step(std::span<float> param, std::span<const float> grad, AdamState& state, float lr,
                const AdamWConfig& cfg);

// AdamW over a parameter set. Each parameter gets lr * lr_scale[i]; weight
// decay is skipped for parameters flagged decay = false.
class AdamW {
 public:
  AdamW(ParameterSet& params, AdamWConfig cfg, std::vector<float> lr_scale = {});

  // Applies one update with the given base lr. Parameters without a grad
  // are skipped (their moments are left untouched).
  void step(float lr);
  void zero_grad() { params_->zero_grad(); }

  const std::vector<AdamState>& state() const { return state_; }

 private:
  ParameterSet* params_;
  AdamWConfig cfg_;
  std::vector<float> lr_scale_;
  std::vector<AdamState> state_;
};

// Linear warmup from 0 over `warmup` steps, then cosine decay to min_lr at
// `total` steps.
float cosine_lr(std::int64_t step, std::int64_t total, std::int64_t warmup, float base, float min_lr = 0.0F);

// Per-depth learning rates for an encoder of `depth` blocks. Index d in
// [0, depth+1]: 0 is the patch embedding, depth+1 the head. Group d gets
// base * decay^(depth + 1 - d).
std::vector<float> layer_decay_lrs(float base, int depth, float decay);

// Multiplicative lr scale per parameter (by Parameter::layer).
std::vector<float> layer_decay_scales(const ParameterSet& params, int depth, float decay);

}  // namespace g2sd
