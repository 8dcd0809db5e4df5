#include <gtest/gtest.h>

#include <cmath>

#include "g2sd/errors.hpp"
#include "g2sd/optim.hpp"

using namespace g2sd;

TEST(AdamW, MatchesHandComputedUpdate) {
  std::vector<float> p{1.0F, -2.0F};
  const std::vector<float> g{0.5F, -0.25F};
  AdamState st;
  AdamWConfig cfg;
  cfg.weight_decay = 0.1F;
  adamw_step(p, g, st, 0.01F, cfg);
  const std::vector<double> p0{1.0, -2.0};
  for (int i = 0; i < 2; ++i) {
    const double m = 0.1 * g[i];
    const double v = 0.001 * g[i] * g[i];
    const double mh = m / (1 - 0.9);
    const double vh = v / (1 - 0.999);
    const double expected = p0[i] - 0.01 * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * p0[i]);
    EXPECT_NEAR(p[i], expected, 1e-6);
  }
  EXPECT_EQ(st.step, 1);
}

TEST(AdamW, SkipsDecayWhenFlagged) {
  ParameterSet params;
  Tensor w = Tensor::full({2}, 1.0F);
  Tensor b = Tensor::full({2}, 1.0F);
  params.add("w", w, 0, true);
  params.add("b", b, 0, false);
  w.mutable_grad();
  b.mutable_grad();
  AdamW opt(params, AdamWConfig{0.9F, 0.999F, 1e-8F, 0.5F});
  opt.step(0.1F);
  EXPECT_FLOAT_EQ(b.data()[0], 1.0F);
  EXPECT_FLOAT_EQ(w.data()[0], 1.0F - 0.1F * 0.5F);
}

TEST(Schedule, CosineWithWarmup) {
  EXPECT_FLOAT_EQ(cosine_lr(0, 100, 10, 1.0F), 0.1F);
  EXPECT_FLOAT_EQ(cosine_lr(9, 100, 10, 1.0F), 1.0F);
  EXPECT_NEAR(cosine_lr(10, 100, 10, 1.0F), 1.0F, 1e-6);
  EXPECT_NEAR(cosine_lr(55, 100, 10, 1.0F, 0.0F), 0.5F, 1e-6);
  EXPECT_NEAR(cosine_lr(100, 100, 10, 1.0F, 0.1F), 0.1F, 1e-6);
}

TEST(LayerDecay, UniformWhenDecayIsOne) {
  for (float lr : layer_decay_lrs(0.5F, 4, 1.0F)) EXPECT_FLOAT_EQ(lr, 0.5F);
}

TEST(LayerDecay, PatchEmbedAtDepthTwelve) {
  const auto lrs = layer_decay_lrs(1.0F, 12, 0.75F);
  ASSERT_EQ(lrs.size(), 14U);
  EXPECT_NEAR(lrs.front(), std::pow(0.75, 13), 1e-9);
  EXPECT_FLOAT_EQ(lrs.back(), 1.0F);
  for (std::size_t i = 1; i < lrs.size(); ++i) EXPECT_LE(lrs[i - 1], lrs[i]);
}

TEST(LayerDecay, RejectsOutOfRange) {
  EXPECT_THROW(layer_decay_lrs(1.0F, 3, 0.0F), ConfigError);
  EXPECT_THROW(layer_decay_lrs(1.0F, 3, 1.5F), ConfigError);
}
