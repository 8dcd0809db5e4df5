#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "g2sd/dataset.hpp"
#include "g2sd/distill_generic.hpp"
#include "g2sd/errors.hpp"
#include "g2sd/ops.hpp"

using namespace g2sd;

namespace {

MaeSpec teacher_spec(int depth = 2, int dim = 32) {
  MaeSpec s;
  s.encoder.depth = depth;
  s.encoder.dim = dim;
  s.encoder.heads = 2;
  s.decoder = DecoderSpec{4, 32, 2, 2};
  return s;
}

GenericDistillSpec student_spec(int layer = 2) {
  GenericDistillSpec g;
  g.student.depth = 1;
  g.student.dim = 16;
  g.student.heads = 2;
  g.student_decoder = DecoderSpec{layer, 16, 2, 2};
  g.target_layer = layer;
  return g;
}

// Independent oracle: double precision, explicit loops.
double brute_generic(const Tensor& t, const Tensor& s, const std::vector<MaskPlan>& plans, bool masked_only,
                     double delta) {
  const auto b = t.dim(0), n = t.dim(1), d = t.dim(2);
  double total = 0.0;
  double count = 0.0;
  for (std::int64_t i = 0; i < b; ++i) {
    std::vector<bool> use(static_cast<std::size_t>(n), !masked_only);
    for (auto m : plans[static_cast<std::size_t>(i)].masked) use[static_cast<std::size_t>(m)] = true;
    for (std::int64_t j = 0; j < n; ++j) {
      if (!use[static_cast<std::size_t>(j)]) continue;
      const float* tr = t.data().data() + (i * n + j) * d;
      const float* sr = s.data().data() + (i * n + j) * d;
      double mu = 0.0;
      for (std::int64_t k = 0; k < d; ++k) mu += tr[k];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (std::int64_t k = 0; k < d; ++k) var += (tr[k] - mu) * (tr[k] - mu);
      var /= static_cast<double>(d);
      for (std::int64_t k = 0; k < d; ++k) {
        const double x = (tr[k] - mu) / std::sqrt(var + 1e-6) - sr[k];
        const double a = std::abs(x);
        total += a < delta ? 0.5 * x * x / delta : a - 0.5 * delta;
        count += 1.0;
      }
    }
  }
  return total / count;
}

}  // namespace

TEST(TeacherForward, LastLayerEqualsDecoderOutput) {
  Rng rng = make_rng(1);
  MaeModel teacher(teacher_spec(), rng);
  const auto plans = sample_masks(2, 64, 0.75, 1, 0);
  const Tensor p = randn({2, 64, 48}, rng, 1.0F);
  const Tensor z = teacher_forward_to_layer(teacher, p, plans, 4);
  EXPECT_EQ(z.shape(), (Shape{2, 64, 32}));
  EXPECT_TRUE(z.is_leaf());
  const Tensor ref = teacher.decoder_features(p, plans, 4);
  EXPECT_TRUE(std::equal(z.data().begin(), z.data().end(), ref.data().begin()));
  EXPECT_THROW(teacher_forward_to_layer(teacher, p, plans, 5), IndexError);
}

TEST(StudentPredict, ZeroProjectionGivesZero) {
  Rng rng = make_rng(2);
  GenericStudent s(student_spec(), 32, 0, rng);
  for (auto& v : s.projection().weight.mutable_data()) v = 0.0F;
  for (auto& v : s.projection().bias.mutable_data()) v = 0.0F;
  const auto plans = sample_masks(2, 64, 0.75, 2, 0);
  const GenericPrediction out = s.forward(randn({2, 64, 48}, rng, 1.0F), plans);
  EXPECT_EQ(out.decoder.shape(), (Shape{2, 64, 32}));
  for (float v : out.decoder.data()) EXPECT_EQ(v, 0.0F);
}

TEST(StudentPredict, IdentityProjectionPassesDecoderOutput) {
  Rng rng = make_rng(3);
  GenericStudent s(student_spec(), 16, 0, rng);
  auto w = s.projection().weight.mutable_data();
  std::fill(w.begin(), w.end(), 0.0F);
  for (int i = 0; i < 16; ++i) w[i * 16 + i] = 1.0F;
  for (auto& v : s.projection().bias.mutable_data()) v = 0.0F;
  const auto plans = sample_masks(1, 64, 0.75, 3, 0);
  const Tensor p = randn({1, 64, 48}, rng, 1.0F);
  const GenericPrediction out = s.forward(p, plans);
  const TokenBatch enc = s.encoder().forward(p, visible_index(plans), 16);
  const Tensor h = s.decoder().run_blocks(s.decoder().prepare(enc, plans));
  const Tensor raw = slice(h, 1, 1, h.dim(1));
  for (std::int64_t i = 0; i < raw.numel(); ++i) EXPECT_FLOAT_EQ(out.decoder.data()[i], raw.data()[i]);
  EXPECT_EQ(out.encoder_tokens, 16);
}

TEST(GenericLoss, ZeroAtAlignment) {
  Rng rng = make_rng(4);
  const Tensor t = randn({2, 16, 8}, rng, 2.0F);
  const auto plans = sample_masks(2, 16, 0.75, 4, 0);
  const Tensor aligned = layer_norm(t, Tensor{}, Tensor{}, 1e-6F);
  EXPECT_EQ(generic_loss(t, aligned, plans, TokenSet::All).item(), 0.0F);
}

TEST(GenericLoss, MatchesBruteForce) {
  Rng rng = make_rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor t = randn({3, 16, 8}, rng, 2.0F);
    const Tensor s = randn({3, 16, 8}, rng, 1.5F);
    const auto plans = sample_masks(3, 16, 0.75, trial, 0);
    EXPECT_NEAR(generic_loss(t, s, plans, TokenSet::All, 1.0F).item(), brute_generic(t, s, plans, false, 1.0), 1e-6);
    EXPECT_NEAR(generic_loss(t, s, plans, TokenSet::Masked, 0.5F).item(), brute_generic(t, s, plans, true, 0.5), 1e-6);
  }
}

TEST(GenericLoss, SumReductionScalesMean) {
  Rng rng = make_rng(6);
  const Tensor t = randn({2, 16, 8}, rng, 1.0F);
  const Tensor s = randn({2, 16, 8}, rng, 1.0F);
  const auto plans = sample_masks(2, 16, 0.5, 6, 0);
  const float mean = generic_loss(t, s, plans, TokenSet::All).item();
  const float total = generic_loss(t, s, plans, TokenSet::All, 1.0F, LossReduction::Sum).item();
  EXPECT_NEAR(total, mean * 2 * 16 * 8, 1e-3);
}

TEST(GenericLoss, InvariantToSharedTokenPermutation) {
  Rng rng = make_rng(7);
  const Tensor t = randn({1, 16, 8}, rng, 1.0F);
  const Tensor s = randn({1, 16, 8}, rng, 1.0F);
  std::vector<std::int64_t> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  const Tensor w = Tensor::full({1, 16}, 1.0F);
  const float a = generic_loss(t, s, w).item();
  const float b = generic_loss(gather_rows(t, perm, 16), gather_rows(s, perm, 16), w).item();
  EXPECT_NEAR(a, b, 1e-6);
}

TEST(GenericLoss, ShapeMismatchThrows) {
  const auto plans = sample_masks(1, 4, 0.5, 0, 0);
  EXPECT_THROW(generic_loss(Tensor::zeros({1, 4, 8}), Tensor::zeros({1, 4, 6}), plans, TokenSet::All), ShapeError);
}

TEST(GenericSpec, ValidatesAgainstTeacher) {
  GenericDistillSpec g = student_spec(5);
  EXPECT_THROW(g.validate(teacher_spec()), IndexError);
  g = student_spec(2);
  g.student.patch.patch = 8;
  EXPECT_THROW(g.validate(teacher_spec()), ConfigError);
}

TEST(GenericTarget, AllTargetVariantsRun) {
  Rng rng = make_rng(8);
  MaeModel teacher(teacher_spec(), rng);
  const Tensor p = randn({2, 64, 48}, rng, 1.0F);
  const auto plans = sample_masks(2, 64, 0.75, 8, 0);
  for (auto target : {GenericTarget::EncoderVisible, GenericTarget::DecoderMasked,
                      GenericTarget::EncoderVisibleDecoderMasked, GenericTarget::DecoderAll}) {
    GenericDistillSpec g = student_spec();
    g.target = target;
    GenericStudent s(g, 32, 32, rng);
    const Tensor loss = generic_batch_loss(teacher, s, p, plans);
    EXPECT_TRUE(std::isfinite(loss.item())) << generic_target_name(target);
    EXPECT_EQ(parse_generic_target(generic_target_name(target)), target);
  }
}

TEST(GenericRun, TeacherIsFrozenAndUntouched) {
  Rng rng = make_rng(9);
  MaeModel teacher(teacher_spec(), rng);
  GenericStudent s(student_spec(), 32, 0, rng);
  const Dataset data = synth_dataset("gaussian-blobs", 1, 64);
  std::vector<std::vector<float>> before;
  const ParameterSet tp = teacher.parameters();
  for (const auto& p : tp.items()) before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  const auto r = run_generic_distillation(teacher, s, data, cfg);
  EXPECT_EQ(r.losses.size(), 8U);
  EXPECT_EQ(r.encoder_tokens, 16);
  std::size_t i = 0;
  for (const auto& p : tp.items()) {
    EXPECT_FALSE(p.tensor.has_grad()) << p.name;
    EXPECT_TRUE(std::equal(p.tensor.data().begin(), p.tensor.data().end(), before[i++].begin())) << p.name;
  }
}

TEST(GenericRun, ToyRunLossFallsAndCkaRises) {
  MaeSpec ts = teacher_spec(6, 128);
  ts.encoder.heads = 4;
  ts.decoder = DecoderSpec{4, 64, 4, 4};
  Rng rng = make_rng(10);
  MaeModel teacher(ts, rng);
  const Dataset pool = synth_dataset("striped-shapes", 2, 256);
  TrainConfig pre;
  pre.epochs = 6;
  pre.batch_size = 32;
  pre.lr = 1.5e-3F;
  pretrain_mae(teacher, pool, pre);

  GenericDistillSpec g;
  g.student.depth = 3;
  g.student.dim = 64;
  g.student.heads = 4;
  g.student_decoder = DecoderSpec{2, 64, 4, 4};
  g.target_layer = 2;
  GenericStudent s(g, 64, 0, rng);
  TrainConfig cfg;
  cfg.epochs = 63;  // 8 steps per epoch: 504 steps
  cfg.batch_size = 32;
  cfg.lr = 1.5e-3F;
  const Dataset heldout = synth_dataset("striped-shapes", 3, 200, "test");
  const auto r = run_generic_distillation(teacher, s, pool, cfg, nullptr, &heldout);
  ASSERT_GE(r.losses.size(), 500U);
  auto avg = [&](std::size_t from) {
    return std::accumulate(r.losses.begin() + from, r.losses.begin() + from + 50, 0.0) / 50.0;
  };
  EXPECT_LT(avg(r.losses.size() - 50), avg(0));
  EXPECT_LT(avg(250), avg(0));
  EXPECT_GT(r.cka_end, r.cka_start);
}
