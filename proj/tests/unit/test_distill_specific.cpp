#include <gtest/gtest.h>

#include <cmath>

#include "g2sd/checkpoint.hpp"
#include "g2sd/dataset.hpp"
#include "g2sd/distill_generic.hpp"
#include "g2sd/analysis.hpp"
#include "g2sd/distill_specific.hpp"
#include "g2sd/errors.hpp"
#include "g2sd/model_io.hpp"
#include "g2sd/ops.hpp"

using namespace g2sd;

namespace {

VitSpec tiny_vit(int depth = 1, int dim = 16) {
  VitSpec s;
  s.depth = depth;
  s.dim = dim;
  s.heads = 2;
  s.patch.image_h = 16;
  s.patch.image_w = 16;
  return s;
}

// Label-smoothed cross entropy in double, written out directly.
double ce_oracle(const Tensor& logits, std::span<const std::int64_t> labels, double eps) {
  const auto b = logits.dim(0), c = logits.dim(1);
  double total = 0.0;
  for (std::int64_t i = 0; i < b; ++i) {
    const float* row = logits.data().data() + i * c;
    double mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::int64_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::int64_t j = 0; j < c; ++j) {
      const double q = (j == labels[static_cast<std::size_t>(i)] ? 1.0 - eps : 0.0) + eps / static_cast<double>(c);
      total -= q * (row[j] - lse);
    }
  }
  return total / static_cast<double>(b);
}

}  // namespace

TEST(HardLabel, Examples) {
  EXPECT_EQ(hard_label(Tensor::from_data({1, 2}, {0.1F, 0.9F})), (std::vector<std::int64_t>{1}));
  EXPECT_EQ(hard_label(Tensor::from_data({1, 3}, {2.0F, 2.0F, 1.0F})), (std::vector<std::int64_t>{0}));
  EXPECT_THROW(hard_label(Tensor::from_data({2, 1}, {0.0F, 1.0F})), ShapeError);
}

TEST(HardLabel, InvariantToShiftScaleAndMonotoneMaps) {
  Rng rng = make_rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor logits = randn({8, 10}, rng, 3.0F);
    const auto base = hard_label(logits);
    const float shift = static_cast<float>(uniform(rng, -5.0, 5.0));
    const float factor = static_cast<float>(uniform(rng, 0.01, 20.0));
    std::vector<float> shifted(logits.data().begin(), logits.data().end());
    std::vector<float> scaled = shifted, cubed = shifted;
    for (auto& v : shifted) v += shift;
    for (auto& v : scaled) v *= factor;
    for (auto& v : cubed) v = v * v * v + v;
    EXPECT_EQ(hard_label(Tensor::from_data({8, 10}, shifted)), base);
    EXPECT_EQ(hard_label(Tensor::from_data({8, 10}, scaled)), base);
    EXPECT_EQ(hard_label(Tensor::from_data({8, 10}, cubed)), base);
  }
}

TEST(SpecificLoss, MatchesIndependentCrossEntropy) {
  Rng rng = make_rng(12);
  Logits lg{randn({6, 5}, rng, 2.0F), randn({6, 5}, rng, 2.0F)};
  const std::vector<std::int64_t> y{0, 1, 2, 3, 4, 0};
  const std::vector<std::int64_t> t{1, 1, 2, 0, 4, 3};
  const SpecificLoss l = specific_loss(lg, y, t, 0.5F, 0.1F);
  EXPECT_NEAR(l.task.item(), ce_oracle(lg.cls, y, 0.1), 1e-5);
  EXPECT_NEAR(l.kd.item(), ce_oracle(lg.dist, t, 0.0), 1e-5);
}

TEST(SpecificLoss, AdditiveDecompositionIsExact) {
  Rng rng = make_rng(13);
  for (float beta : {0.0F, 0.5F, 1.0F, 3.0F}) {
    Logits lg{randn({4, 6}, rng, 1.0F), randn({4, 6}, rng, 1.0F)};
    const std::vector<std::int64_t> y{0, 2, 4, 5};
    const std::vector<std::int64_t> t{1, 2, 3, 5};
    const SpecificLoss l = specific_loss(lg, y, t, beta, 0.1F);
    const float task = softmax_cross_entropy(lg.cls, std::span<const std::int64_t>(y), 0.1F).item();
    const float kd = beta == 0.0F ? 0.0F : softmax_cross_entropy(lg.dist, std::span<const std::int64_t>(t)).item();
    EXPECT_EQ(l.task.item(), task);
    EXPECT_EQ(l.kd.item(), kd);
    EXPECT_FLOAT_EQ(l.total.item(), task + beta * kd);
  }
}

TEST(SpecificLoss, IdenticalHeadsAndLabelsGiveOnePlusBeta) {
  Rng rng = make_rng(14);
  const Tensor cls = randn({5, 4}, rng, 1.0F);
  Logits lg{cls, cls.clone()};
  const std::vector<std::int64_t> y{0, 1, 2, 3, 1};
  const SpecificLoss l = specific_loss(lg, y, y, 2.0F, 0.0F);
  EXPECT_NEAR(l.total.item(), 3.0 * l.task.item(), 1e-6);
}

TEST(SpecificLoss, SaturatedCorrectHeadsNearZero) {
  std::vector<float> v(3 * 4, -30.0F);
  const std::vector<std::int64_t> y{0, 3, 2};
  for (int i = 0; i < 3; ++i) v[static_cast<std::size_t>(i * 4 + y[static_cast<std::size_t>(i)])] = 30.0F;
  Logits lg{Tensor::from_data({3, 4}, v), Tensor::from_data({3, 4}, v)};
  EXPECT_LT(specific_loss(lg, y, y, 1.0F, 0.0F).total.item(), 1e-6F);
}

TEST(SpecificLoss, BetaZeroIsTaskLoss) {
  Rng rng = make_rng(15);
  Logits lg{randn({3, 4}, rng, 1.0F), Tensor{}};
  const std::vector<std::int64_t> y{0, 1, 2};
  const SpecificLoss l = specific_loss(lg, y, y, 0.0F, 0.1F);
  EXPECT_EQ(l.total.item(), l.task.item());
  EXPECT_THROW(specific_loss(lg, y, y, 1.0F, 0.1F), ConfigError);
}

TEST(SpecificSpec, Validation) {
  SpecificDistillSpec s;
  EXPECT_NO_THROW(s.validate());
  s.beta = -0.1F;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.layer_decay = 0.0F;
  EXPECT_THROW(s.validate(), ConfigError);
  s.layer_decay = 1.5F;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(SpecificRun, BetaZeroTraceEqualsSupervised) {
  const Dataset train = synth_dataset("gaussian-blobs", 1, 64, "train", 16);
  Rng r1 = make_rng(16);
  VitClassifier a(tiny_vit(), 10, r1);
  Rng r2 = make_rng(16);
  VitClassifier b(tiny_vit(), 10, r2);
  Rng r3 = make_rng(99);
  VitClassifier teacher(tiny_vit(), 10, r3);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  SpecificDistillSpec spec;
  spec.beta = 0.0F;
  spec.smoothing = 0.0F;
  const auto ra = run_specific_distillation(&teacher, a, train, nullptr, spec, cfg);
  const auto rb = run_supervised(b, train, nullptr, 0.0F, spec.layer_decay, cfg);
  ASSERT_EQ(ra.total_losses.size(), 8U);
  EXPECT_EQ(ra.total_losses, rb.total_losses);
}

TEST(SpecificRun, StudentStartsFromGenericCheckpoint) {
  GenericDistillSpec g;
  g.student = tiny_vit(2, 16);
  g.student_decoder = DecoderSpec{1, 16, 2, 2};
  g.target_layer = 1;
  Rng rng = make_rng(17);
  GenericStudent gs(g, 16, 0, rng);
  const Checkpoint ckpt = to_checkpoint(gs, 16, 0);
  Rng head_rng = make_rng(18);
  VitClassifier student = classifier_from_encoder(ckpt, 10, head_rng);
  const ParameterSet sp = student.parameters();
  for (const auto& p : sp.items()) {
    if (p.name.rfind("encoder.", 0) != 0) continue;
    const NamedTensor* src = ckpt.find(p.name);
    ASSERT_NE(src, nullptr) << p.name;
    EXPECT_TRUE(std::equal(src->data.begin(), src->data.end(), p.tensor.data().begin())) << p.name;
  }
}

TEST(SpecificRun, ClassCountMismatchThrows) {
  const Dataset train = synth_dataset("gaussian-blobs", 1, 32, "train", 16);
  Rng rng = make_rng(19);
  VitClassifier teacher(tiny_vit(), 5, rng);
  VitClassifier student(tiny_vit(), 10, rng);
  student.enable_distillation(rng);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  EXPECT_THROW(run_specific_distillation(&teacher, student, train, nullptr, SpecificDistillSpec{}, cfg), ConfigError);
}

TEST(SpecificRun, MissingDistillationHeadThrows) {
  const Dataset train = synth_dataset("gaussian-blobs", 1, 32, "train", 16);
  Rng rng = make_rng(20);
  VitClassifier teacher(tiny_vit(), 10, rng);
  VitClassifier student(tiny_vit(), 10, rng);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  EXPECT_THROW(run_specific_distillation(&teacher, student, train, nullptr, SpecificDistillSpec{}, cfg), ConfigError);
}

TEST(SpecificRun, DistilledToyRunLearns) {
  const Dataset train = synth_dataset("gaussian-blobs", 1, 256, "train", 16);
  const Dataset test = synth_dataset("gaussian-blobs", 2, 200, "test", 16);
  Rng rng = make_rng(21);
  VitClassifier teacher(tiny_vit(2, 32), 10, rng);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 32;
  cfg.lr = 2e-3F;
  run_supervised(teacher, train, nullptr, 0.1F, 1.0F, cfg);
  EXPECT_GT(evaluate_accuracy(teacher, test), 0.5);
  VitClassifier student(tiny_vit(1, 32), 10, rng);
  student.enable_distillation(rng);
  SpecificDistillSpec spec;
  spec.layer_decay = 1.0F;
  const auto r = run_specific_distillation(&teacher, student, train, &test, spec, cfg);
  ASSERT_EQ(r.epoch_accuracy.size(), 40U);
  EXPECT_GT(r.final_accuracy, 0.3);
  EXPECT_LT(r.total_losses.back(), r.total_losses.front());
}
