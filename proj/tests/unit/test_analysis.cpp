#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <Eigen/QR>

#include "g2sd/analysis.hpp"
#include "g2sd/distill_specific.hpp"
#include "g2sd/errors.hpp"

using namespace g2sd;

namespace {

Eigen::MatrixXd gaussian(Rng& rng, int n, int p) {
  Eigen::MatrixXd m(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) m(i, j) = normal(rng);
  return m;
}

Eigen::MatrixXd random_orthogonal(Rng& rng, int p) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(rng, p, p));
  return qr.householderQ() * Eigen::MatrixXd::Identity(p, p);
}

// HSIC form with an explicit centering matrix H and linear kernels.
double cka_hsic(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const auto n = x.rows();
  const Eigen::MatrixXd h =
      Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  const Eigen::MatrixXd k = h * (x * x.transpose()) * h;
  const Eigen::MatrixXd l = h * (y * y.transpose()) * h;
  return (k.cwiseProduct(l)).sum() / std::sqrt(k.cwiseProduct(k).sum() * l.cwiseProduct(l).sum());
}

VitSpec tiny_vit() {
  VitSpec s;
  s.depth = 1;
  s.dim = 16;
  s.heads = 2;
  s.patch.image_h = 16;
  s.patch.image_w = 16;
  return s;
}

}  // namespace

TEST(LinearCka, SelfSimilarityIsOne) {
  Rng rng = make_rng(30);
  for (int t = 0; t < 5; ++t) {
    const Eigen::MatrixXd x = gaussian(rng, 50 + 10 * t, 8 + t);
    EXPECT_NEAR(linear_cka(x, x), 1.0, 1e-12);
  }
}

TEST(LinearCka, OrthogonalAndScaleInvariant) {
  Rng rng = make_rng(31);
  for (int t = 0; t < 10; ++t) {
    const Eigen::MatrixXd x = gaussian(rng, 100, 12);
    const Eigen::MatrixXd y = gaussian(rng, 100, 7) + x.leftCols(7);
    const Eigen::MatrixXd q = random_orthogonal(rng, 12);
    const double c = uniform(rng, 0.01, 100.0);
    EXPECT_NEAR(linear_cka(x, c * x * q), 1.0, 1e-6);
    EXPECT_NEAR(linear_cka(c * x * q, y), linear_cka(x, y), 1e-6);
  }
}

TEST(LinearCka, SymmetricAndInRange) {
  Rng rng = make_rng(32);
  for (int t = 0; t < 20; ++t) {
    const Eigen::MatrixXd x = gaussian(rng, 40, 3 + t % 5);
    const Eigen::MatrixXd y = gaussian(rng, 40, 2 + t % 7) * 3.0 + Eigen::MatrixXd::Constant(40, 2 + t % 7, 5.0);
    const double a = linear_cka(x, y);
    EXPECT_LT(std::abs(a - linear_cka(y, x)), 1e-10);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(LinearCka, MatchesHsicFormulation) {
  Rng rng = make_rng(33);
  for (int t = 0; t < 5; ++t) {
    const Eigen::MatrixXd x = gaussian(rng, 30, 5);
    const Eigen::MatrixXd y = gaussian(rng, 30, 4) + x.leftCols(4) * 0.5;
    EXPECT_NEAR(linear_cka(x, y), cka_hsic(x, y), 1e-10);
  }
}

TEST(LinearCka, IndependentGaussiansAreDissimilar) {
  double total = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng = make_rng(34, s);
    const double v = linear_cka(gaussian(rng, 500, 16), gaussian(rng, 500, 16));
    EXPECT_LT(v, 0.3);
    total += v;
  }
  EXPECT_LT(total / 10.0, 0.1);
}

TEST(LinearCka, Errors) {
  Rng rng = make_rng(35);
  EXPECT_THROW(linear_cka(gaussian(rng, 5, 2), gaussian(rng, 6, 2)), ShapeError);
  EXPECT_THROW(linear_cka(gaussian(rng, 1, 2), gaussian(rng, 1, 2)), ShapeError);
  EXPECT_THROW(linear_cka(Eigen::MatrixXd::Constant(5, 2, 3.0), gaussian(rng, 5, 2)), NumericError);
}

TEST(ActivationDumpIo, RoundTrip) {
  Rng rng = make_rng(36);
  ActivationDump d{"student", 2, "test", gaussian(rng, 7, 3)};
  const auto path = std::filesystem::temp_directory_path() / "g2sd_dump_test.csv";
  d.save(path);
  const ActivationDump e = ActivationDump::load(path);
  EXPECT_EQ(e.model_id, "student");
  EXPECT_EQ(e.layer, 2);
  EXPECT_EQ(e.split, "test");
  EXPECT_EQ(e.features, d.features);
  std::filesystem::remove(path);
}

TEST(Occlusion, RatioZeroMatchesEvalAndDropsExactCounts) {
  const Dataset data = synth_dataset("gaussian-blobs", 3, 60, "test", 16);
  Rng rng = make_rng(37);
  VitClassifier model(tiny_vit(), 10, rng);
  OcclusionOptions opts;
  opts.ratios = {0.0, 0.25, 0.5, 0.75};
  const auto curve = occlusion_curve(model, data, opts);
  ASSERT_EQ(curve.size(), 4U);
  EXPECT_EQ(curve[0].accuracy, evaluate_accuracy(model, data));
  EXPECT_NEAR(curve[0].cka, 1.0, 1e-9);
  const std::int64_t n = tiny_vit().patch.num_patches();
  for (const auto& p : curve) EXPECT_EQ(p.dropped, std::llround(p.ratio * static_cast<double>(n)));
  EXPECT_EQ(relative_drop(curve, 0.0), 0.0);
  opts.pixel_zero = true;
  const auto zeroed = occlusion_curve(model, data, opts);
  EXPECT_EQ(zeroed[0].accuracy, curve[0].accuracy);
  opts.ratios = {1.0};
  EXPECT_THROW(occlusion_curve(model, data, opts), ConfigError);
}

TEST(Occlusion, RelativeDropDefinition) {
  std::vector<OcclusionPoint> c{{0.0, 0, 0.8, 1.0}, {0.5, 8, 0.6, 0.9}};
  EXPECT_DOUBLE_EQ(relative_drop(c, 0.5), 0.25);
  EXPECT_THROW(relative_drop(c, 0.25), ConfigError);
}

TEST(Corruption, ZeroStrengthIsIdentity) {
  const Dataset data = synth_dataset("striped-shapes", 4, 10, "test", 16);
  std::vector<std::int64_t> idx(10);
  for (int i = 0; i < 10; ++i) idx[static_cast<std::size_t>(i)] = i;
  const Tensor images = data.images(idx);
  for (auto kind : {Corruption::GaussianNoise, Corruption::PatchShuffle, Corruption::ColorInversion}) {
    Rng rng = make_rng(38);
    const Tensor out = corrupt(images, tiny_vit().patch, {kind, 0.0}, rng);
    EXPECT_TRUE(std::equal(out.data().begin(), out.data().end(), images.data().begin())) << corruption_name(kind);
    EXPECT_EQ(parse_corruption(corruption_name(kind)), kind);
  }
  EXPECT_THROW(parse_corruption("fog"), ConfigError);
}

TEST(Corruption, PatchShufflePermutesPatches) {
  const Dataset data = synth_dataset("striped-shapes", 5, 10, "test", 16);
  std::vector<std::int64_t> idx{0};
  const Tensor images = data.images(idx);
  Rng rng = make_rng(39);
  const Tensor out = corrupt(images, tiny_vit().patch, {Corruption::PatchShuffle, 1.0}, rng);
  std::vector<float> a(images.data().begin(), images.data().end());
  std::vector<float> b(out.data().begin(), out.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

TEST(Corruption, EvalSchemaAndNoiseHurts) {
  const Dataset train = synth_dataset("gaussian-blobs", 6, 200, "train", 16);
  const Dataset test = synth_dataset("gaussian-blobs", 7, 100, "test", 16);
  Rng rng = make_rng(40);
  VitClassifier model(tiny_vit(), 10, rng);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 32;
  run_supervised(model, train, nullptr, 0.1F, 1.0F, cfg);
  const std::vector<CorruptionSpec> specs{{Corruption::GaussianNoise, 0.0},
                                          {Corruption::GaussianNoise, 0.5},
                                          {Corruption::PatchShuffle, 0.5},
                                          {Corruption::ColorInversion, 1.0}};
  const auto rows = corruption_eval(model, test, specs, 1);
  ASSERT_EQ(rows.size(), specs.size());
  const double clean = evaluate_accuracy(model, test);
  EXPECT_EQ(rows[0].accuracy, clean);
  EXPECT_EQ(rows[0].delta, 0.0);
  EXPECT_LE(rows[1].accuracy, clean);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].corruption, corruption_name(specs[i].kind));
    EXPECT_EQ(rows[i].strength, specs[i].strength);
    EXPECT_DOUBLE_EQ(rows[i].delta, rows[i].accuracy - clean);
  }
  const auto path = std::filesystem::temp_directory_path() / "g2sd_corruption_test.csv";
  write_corruption_csv(path, rows);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 1 + static_cast<int>(rows.size()));
  std::filesystem::remove(path);
}
