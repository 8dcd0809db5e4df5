#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "g2sd/errors.hpp"
#include "g2sd/ops.hpp"
#include "g2sd/vit.hpp"

using namespace g2sd;

namespace {

Tensor ramp_images(int b, int h, int w, int c) {
  std::vector<float> v(static_cast<std::size_t>(b * h * w * c));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i);
  return Tensor::from_data({b, h, w, c}, v);
}

}  // namespace

TEST(Patchify, RasterOrderRowMajorWithinPatch) {
  PatchSpec spec{4, 4, 1, 2};
  const Tensor img = ramp_images(1, 4, 4, 1);
  const TokenBatch t = patchify(img, spec);
  ASSERT_EQ(t.tokens.shape(), (Shape{1, 4, 4}));
  // Patch 1 is the top-right 2x2 block.
  EXPECT_EQ(std::vector<float>(t.tokens.data().begin() + 4, t.tokens.data().begin() + 8),
            (std::vector<float>{2, 3, 6, 7}));
  EXPECT_EQ(t.positions, (std::vector<std::int64_t>{0, 1, 2, 3}));
}

TEST(Patchify, RoundTrip) {
  PatchSpec spec{8, 12, 3, 4};
  const Tensor img = ramp_images(2, 8, 12, 3);
  const Tensor back = unpatchify(patchify(img, spec).tokens, spec);
  EXPECT_EQ(back.shape(), img.shape());
  EXPECT_TRUE(std::equal(back.data().begin(), back.data().end(), img.data().begin()));
}

TEST(Patchify, RejectsIndivisibleSize) {
  EXPECT_THROW(patchify(Tensor::zeros({1, 10, 10, 3}), PatchSpec{10, 10, 3, 4}), ConfigError);
}

TEST(Positional, SinCosTable) {
  PatchSpec spec{8, 8, 3, 4};
  const Tensor pe = positional_embedding(spec, 8);
  ASSERT_EQ(pe.shape(), (Shape{4, 8}));
  // Token 3 sits at grid (1, 1); first frequency is 1.
  EXPECT_NEAR(pe.data()[3 * 8 + 0], std::sin(1.0), 1e-6);
  EXPECT_NEAR(pe.data()[3 * 8 + 2], std::cos(1.0), 1e-6);
  EXPECT_NEAR(pe.data()[0 * 8 + 2], 1.0, 1e-6);
  EXPECT_THROW(positional_embedding(spec, 6), ConfigError);
}

TEST(Encoder, DepthZeroIsProjectionPlusPositions) {
  VitSpec spec;
  spec.depth = 0;
  spec.dim = 8;
  spec.heads = 2;
  spec.patch = PatchSpec{8, 8, 3, 4};
  Rng rng = make_rng(1);
  VitEncoder enc(spec, rng);
  Rng data_rng = make_rng(2);
  const Tensor patches = randn({2, 4, 48}, data_rng, 1.0F);
  const TokenBatch out = enc.encode(enc.embed(patches));
  const Tensor expected = add(enc.patch_embed()(patches), enc.pos_embed());
  const Tensor got = out.patch_tokens();
  for (std::int64_t i = 0; i < got.numel(); ++i) EXPECT_FLOAT_EQ(got.data()[i], expected.data()[i]);
}

TEST(Encoder, KeepsOnlySelectedPatches) {
  VitSpec spec;
  spec.depth = 1;
  spec.dim = 8;
  spec.heads = 2;
  spec.patch = PatchSpec{8, 8, 3, 4};
  Rng rng = make_rng(1);
  VitEncoder enc(spec, rng);
  const Tensor patches = randn({2, 4, 48}, rng, 1.0F);
  std::vector<std::int64_t> keep{0, 3, 1, 2};
  const TokenBatch out = enc.forward(patches, keep, 2);
  EXPECT_EQ(out.tokens.shape(), (Shape{2, 3, 8}));
  EXPECT_EQ(out.positions, keep);
}

TEST(Classifier, CombinedPredictionAveragesHeads) {
  Tensor a = Tensor::from_data({1, 2}, {2.0F, 0.0F});
  Tensor b = Tensor::from_data({1, 2}, {0.0F, 1.0F});
  const Tensor c = combined_log_probs(Logits{a, b});
  const Tensor la = log_softmax(a);
  const Tensor lb = log_softmax(b);
  EXPECT_FLOAT_EQ(c.data()[0], 0.5F * (la.data()[0] + lb.data()[0]));
  EXPECT_EQ(argmax_rows(c), (std::vector<std::int64_t>{0}));
}

TEST(Classifier, ArgmaxTiesGoLow) {
  EXPECT_EQ(argmax_rows(Tensor::from_data({2, 3}, {1, 3, 3, 0, 0, 0})), (std::vector<std::int64_t>{1, 0}));
}

TEST(Classifier, DistillationTokenStartsNearClassToken) {
  VitSpec spec;
  spec.depth = 1;
  spec.dim = 16;
  spec.heads = 2;
  Rng rng = make_rng(4);
  VitClassifier m(spec, 10, rng);
  m.enable_distillation(rng);
  const auto& cls = m.encoder().cls_token();
  const auto& dist = m.encoder().dist_token();
  double diff = 0.0;
  for (std::int64_t i = 0; i < cls.numel(); ++i) diff = std::max(diff, double(std::abs(cls.data()[i] - dist.data()[i])));
  EXPECT_GT(diff, 0.0);
  EXPECT_LT(diff, 0.2);
  const Logits l = m.forward(randn({3, 64, 48}, rng, 1.0F));
  EXPECT_EQ(l.dist.shape(), (Shape{3, 10}));
}

TEST(Classifier, ParameterNamesAreUnique) {
  VitSpec spec;
  spec.depth = 2;
  spec.dim = 16;
  spec.heads = 2;
  Rng rng = make_rng(4);
  VitClassifier m(spec, 10, rng);
  m.enable_distillation(rng);
  const ParameterSet p = m.parameters();
  std::set<std::string> names;
  for (const auto& item : p.items()) EXPECT_TRUE(names.insert(item.name).second) << item.name;
  EXPECT_NE(p.find("dist_head.weight"), nullptr);
  EXPECT_EQ(p.find("head.weight")->layer, 3);
  EXPECT_EQ(p.find("encoder.blocks.1.mlp.fc1.weight")->layer, 2);
}
