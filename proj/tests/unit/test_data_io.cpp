#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "g2sd/checkpoint.hpp"
#include "g2sd/config.hpp"
#include "g2sd/dataset.hpp"
#include "g2sd/errors.hpp"
#include "g2sd/metrics.hpp"
#include "g2sd/model_io.hpp"

using namespace g2sd;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("g2sd_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::uint64_t fnv1a(std::span<const float> values) {
  std::uint64_t h = 1469598103934665603ULL;
  for (float v : values) {
    unsigned char b[4];
    std::memcpy(b, &v, 4);
    for (unsigned char c : b) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::vector<std::int64_t> iota_index(std::int64_t n) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

Checkpoint random_checkpoint() {
  Rng rng = make_rng(50);
  VitSpec s;
  s.depth = 2;
  s.dim = 16;
  s.heads = 2;
  VitClassifier model(s, 10, rng);
  model.enable_distillation(rng);
  return to_checkpoint(model);
}

}  // namespace

TEST(SynthDataset, DeterministicAndBalanced) {
  for (const auto& recipe : known_recipes()) {
    const Dataset a = synth_dataset(recipe, 3, 105);
    const Dataset b = synth_dataset(recipe, 3, 105);
    EXPECT_EQ(a.pixels, b.pixels) << recipe;
    EXPECT_EQ(a.labels, b.labels) << recipe;
    EXPECT_NE(a.pixels, synth_dataset(recipe, 4, 105).pixels) << recipe;
    std::map<std::int64_t, int> counts;
    for (auto l : a.labels) {
      ASSERT_GE(l, 0);
      ASSERT_LT(l, a.num_classes);
      ++counts[l];
    }
    ASSERT_EQ(static_cast<int>(counts.size()), a.num_classes);
    int lo = 1 << 30, hi = 0;
    for (auto& [k, c] : counts) lo = std::min(lo, c), hi = std::max(hi, c);
    EXPECT_LE(hi - lo, 1) << recipe;
    for (float v : a.pixels) ASSERT_TRUE(v >= 0.0F && v <= 1.0F);
  }
  EXPECT_THROW(synth_dataset("cifar", 0, 100), ConfigError);
  EXPECT_THROW(synth_dataset("striped-shapes", 0, 5), ConfigError);
}

TEST(SynthDataset, NearestCentroidBeatsSixtyPercentOnStripedShapes) {
  const Dataset train = synth_dataset("striped-shapes", 1, 2000);
  const Dataset test = synth_dataset("striped-shapes", 2, 500, "test");
  const auto d = static_cast<std::size_t>(train.image_numel());
  std::vector<std::vector<double>> centroid(10, std::vector<double>(d, 0.0));
  std::vector<int> count(10, 0);
  for (std::int64_t i = 0; i < train.size; ++i) {
    const auto l = static_cast<std::size_t>(train.labels[static_cast<std::size_t>(i)]);
    for (std::size_t j = 0; j < d; ++j) centroid[l][j] += train.pixels[static_cast<std::size_t>(i) * d + j];
    ++count[l];
  }
  for (std::size_t c = 0; c < 10; ++c)
    for (auto& v : centroid[c]) v /= count[c];
  int correct = 0;
  for (std::int64_t i = 0; i < test.size; ++i) {
    double best = 1e300;
    std::size_t arg = 0;
    for (std::size_t c = 0; c < 10; ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double e = test.pixels[static_cast<std::size_t>(i) * d + j] - centroid[c][j];
        dist += e * e;
      }
      if (dist < best) best = dist, arg = c;
    }
    correct += static_cast<std::int64_t>(arg) == test.labels[static_cast<std::size_t>(i)];
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(test.size), 0.6);
}

TEST(Augment, DisabledFlagsAreIdentity) {
  const Dataset data = synth_dataset("textured-digits", 1, 16);
  const Tensor x = data.images(iota_index(16));
  Rng rng = make_rng(1);
  const Tensor y = augment(x, rng, AugmentFlags{});
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}

TEST(Augment, FlipIsAnInvolution) {
  const Dataset data = synth_dataset("textured-digits", 1, 16);
  const Tensor x = data.images(iota_index(16));
  const Tensor once = hflip(x);
  const Tensor twice = hflip(once);
  EXPECT_FALSE(std::equal(x.data().begin(), x.data().end(), once.data().begin()));
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), twice.data().begin()));
}

TEST(Augment, SeededBatchMatchesGoldenHash) {
  const Dataset data = synth_dataset("striped-shapes", 9, 32);
  const Tensor x = data.images(iota_index(32));
  Rng a = make_rng(123);
  Rng b = make_rng(123);
  const Tensor ya = augment(x, a, AugmentFlags{true, true, 4});
  const Tensor yb = augment(x, b, AugmentFlags{true, true, 4});
  EXPECT_EQ(ya.shape(), x.shape());
  EXPECT_EQ(fnv1a(ya.data()), fnv1a(yb.data()));
  EXPECT_EQ(fnv1a(ya.data()), 1241241221795110608ULL);
}

TEST(CheckpointIo, RoundTripIsBitExact) {
  const fs::path dir = scratch_dir("ckpt_rt");
  const Checkpoint a = random_checkpoint();
  save_checkpoint(dir / "a.ckpt", a);
  const Checkpoint b = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(b.spec, a.spec);
  ASSERT_EQ(b.tensors.size(), a.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    EXPECT_EQ(b.tensors[i].name, a.tensors[i].name);
    EXPECT_EQ(b.tensors[i].shape, a.tensors[i].shape);
    EXPECT_EQ(std::memcmp(b.tensors[i].data.data(), a.tensors[i].data.data(), a.tensors[i].data.size() * 4), 0);
  }
  EXPECT_EQ(serialize_checkpoint(b), serialize_checkpoint(a));
  const VitClassifier m = classifier_from_checkpoint(b);
  EXPECT_EQ(serialize_checkpoint(to_checkpoint(m)), serialize_checkpoint(a));
  fs::remove_all(dir);
}

TEST(CheckpointIo, FlippedPayloadByteFailsChecksum) {
  const std::string bytes = serialize_checkpoint(random_checkpoint());
  for (std::size_t pos : {bytes.size() / 2, bytes.size() - 10, std::size_t{20}}) {
    std::string bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x01);
    EXPECT_THROW(parse_checkpoint(bad), CheckpointError) << pos;
  }
}

TEST(CheckpointIo, NewerVersionIsRejectedWithVersionMessage) {
  Checkpoint c = random_checkpoint();
  c.version = kCheckpointVersion + 1;
  try {
    parse_checkpoint(serialize_checkpoint(c));
    FAIL() << "expected a version error";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(CheckpointIo, TruncatedFileIsRejected) {
  const std::string bytes = serialize_checkpoint(random_checkpoint());
  for (std::size_t n : {std::size_t{0}, std::size_t{5}, std::size_t{15}, bytes.size() - 1}) {
    EXPECT_THROW(parse_checkpoint(std::string_view(bytes).substr(0, n)), CheckpointError) << n;
  }
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), CheckpointError);
}

TEST(CheckpointIo, NamesAreUniqueAndStable) {
  const Checkpoint a = random_checkpoint();
  const Checkpoint b = random_checkpoint();
  std::set<std::string> names;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    EXPECT_TRUE(names.insert(a.tensors[i].name).second);
    EXPECT_EQ(a.tensors[i].name, b.tensors[i].name);
  }
}

TEST(CheckpointIo, Crc32KnownValue) { EXPECT_EQ(crc32_of("123456789"), 0xCBF43926U); }

TEST(Metrics, AppendReopenAndRegression) {
  const fs::path dir = scratch_dir("metrics");
  const fs::path path = dir / "m.csv";
  {
    MetricsLog log(path, {"loss", "lr"});
    log.append(0, {1.5, 0.1});
    log.append(1, {1.25, 0.1});
    EXPECT_THROW(log.append(1, {1.0, 0.1}), ConfigError);
  }
  {
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "step,wall_ms,loss,lr");
  }
  {
    MetricsLog log(path, {"loss", "lr"});
    EXPECT_EQ(log.last_step(), 1);
    EXPECT_THROW(log.append(0, {1.0, 0.1}), ConfigError);
    log.append(5, {0.5, 0.05});
  }
  EXPECT_THROW(MetricsLog(path, {"other"}), ConfigError);
  const MetricsTable t = read_metrics(path);
  ASSERT_EQ(t.rows.size(), 3U);
  EXPECT_EQ(t.column("loss"), (std::vector<double>{1.5, 1.25, 0.5}));
  EXPECT_EQ(t.rows[2].step, 5);
  fs::remove_all(dir);
}

TEST(Metrics, NineDigitFormatRoundTripsThroughParser) {
  const fs::path dir = scratch_dir("metrics_fuzz");
  Rng rng = make_rng(51);
  std::vector<double> expected;
  {
    MetricsLog log(dir / "f.csv", {"v"});
    for (int i = 0; i < 2000; ++i) {
      const double v = normal(rng) * std::pow(10.0, uniform(rng, -30.0, 30.0));
      log.append(i, {v});
      expected.push_back(std::stod(format_scalar(v)));
      const float f = static_cast<float>(v);
      EXPECT_EQ(static_cast<float>(std::stod(format_scalar(f))), f);
    }
  }
  EXPECT_EQ(read_metrics(dir / "f.csv").column("v"), expected);
  fs::remove_all(dir);
}

TEST(ConfigIo, ParseSectionsCommentsAndRoundTrip) {
  const Config c = Config::parse("# comment\nrun.seed = 3\n[generic]\nmask_ratio = 0.5 # inline\nseeds = 0, 1,2\n");
  EXPECT_EQ(c.get_int("run.seed"), 3);
  EXPECT_EQ(c.get_double("generic.mask_ratio"), 0.5);
  EXPECT_EQ(c.get_doubles("generic.seeds"), (std::vector<double>{0, 1, 2}));
  EXPECT_EQ(Config::parse(c.to_string()).entries(), c.entries());
  EXPECT_THROW(c.get_string("missing"), ConfigError);
  EXPECT_THROW(Config::parse("novalue\n"), ConfigError);
}

TEST(ConfigIo, OverridesMustNameKnownKeys) {
  Config c = default_config();
  c.apply_override("generic.mask_ratio=0.25");
  EXPECT_EQ(c.get_double("generic.mask_ratio"), 0.25);
  EXPECT_THROW(c.apply_override("generic.nope=1"), ConfigError);
  EXPECT_THROW(c.apply_override("generic.mask_ratio"), ConfigError);
  EXPECT_THROW(c.merge_known(Config::parse("bogus.key = 1")), ConfigError);
}
