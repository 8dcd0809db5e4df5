#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "g2sd/dataset.hpp"
#include "g2sd/vit.hpp"

namespace g2sd {

// Linear centered kernel alignment. Columns are centered internally.
// Throws NumericError when either centered matrix is zero, ShapeError when
// the row counts differ or n < 2.
double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

// Per-example features pooled over patch tokens (class token excluded).
struct ActivationDump {
  std::string model_id;
  int layer = -1;  // -1: final normed encoder output
  std::string split;
  Eigen::MatrixXd features;  // [examples, dim]

  void save(const std::filesystem::path& path) const;
  static ActivationDump load(const std::filesystem::path& path);
};

// Mean over patch tokens of the encoder output after `layer` blocks
// (-1 selects the final normed output). [B, D].
Eigen::MatrixXd pooled_features(const VitEncoder& encoder, const Tensor& patches, std::span<const std::int64_t> keep = {},
                                std::int64_t k = 0, int layer = -1);

ActivationDump dump_activations(const VitEncoder& encoder, const Dataset& data, int layer, std::string model_id,
                                std::int64_t max_examples = -1, int batch_size = 128);

double evaluate_accuracy(const VitClassifier& model, const Dataset& data, int batch_size = 128, int workers = 1);

struct OcclusionPoint {
  double ratio = 0.0;
  std::int64_t dropped = 0;  // patch tokens removed (or zeroed) per sample
  double accuracy = 0.0;
  double cka = 1.0;          // occluded vs full-image pooled features
};

struct OcclusionOptions {
  std::vector<double> ratios{0.0, 0.25, 0.5, 0.75};
  std::uint64_t seed = 0;
  bool pixel_zero = false;  // zero the occluded patches instead of dropping tokens
  int batch_size = 128;
};

std::vector<OcclusionPoint> occlusion_curve(const VitClassifier& model, const Dataset& data,
                                            const OcclusionOptions& opts);

// (acc(0) - acc(r)) / acc(0); 0 when acc(0) is 0.
double relative_drop(const std::vector<OcclusionPoint>& curve, double ratio);

enum class Corruption { GaussianNoise, PatchShuffle, ColorInversion };

struct CorruptionSpec {
  Corruption kind = Corruption::GaussianNoise;
  double strength = 0.0;
};

struct CorruptionRow {
  std::string corruption;
  double strength = 0.0;
  double accuracy = 0.0;
  double delta = 0.0;  // accuracy minus clean accuracy
};

std::string corruption_name(Corruption c);
Corruption parse_corruption(const std::string& name);

// images [B, H, W, C]. Gaussian noise adds N(0, strength) and clamps to
// [0, 1]; patch shuffle permutes a `strength` fraction of the patches;
// color inversion blends toward 1 - x.
Tensor corrupt(const Tensor& images, const PatchSpec& patch, const CorruptionSpec& spec, Rng& rng);

std::vector<CorruptionRow> corruption_eval(const VitClassifier& model, const Dataset& data,
                                           const std::vector<CorruptionSpec>& specs, std::uint64_t seed,
                                           int batch_size = 128);

void write_occlusion_csv(const std::filesystem::path& path, const std::vector<OcclusionPoint>& curve);
void write_occlusion_curve(const std::filesystem::path& path, const std::vector<OcclusionPoint>& curve);
void write_corruption_csv(const std::filesystem::path& path, const std::vector<CorruptionRow>& rows);

}  // namespace g2sd
