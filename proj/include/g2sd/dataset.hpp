#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "g2sd/rng.hpp"
#include "g2sd/tensor.hpp"

namespace g2sd {

// In-memory image classification set; images are [n, H, W, C] in [0, 1].
struct Dataset {
  std::int64_t size = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  int num_classes = 0;
  std::vector<float> pixels;
  std::vector<std::int64_t> labels;
  std::string split;
  std::string recipe;
  std::uint64_t seed = 0;

  std::int64_t image_numel() const { return static_cast<std::int64_t>(height) * width * channels; }
  // Gathers the listed images into a [k, H, W, C] tensor.
  Tensor images(std::span<const std::int64_t> index) const;
  std::vector<std::int64_t> labels_of(std::span<const std::int64_t> index) const;
};

// Recipes: "striped-shapes", "gaussian-blobs", "textured-digits". All are
// 10-class, 32x32x3 by default and fully determined by (recipe, seed, n).
// Labels cycle 0..classes-1 so class counts differ by at most one.
Dataset synth_dataset(const std::string& recipe, std::uint64_t seed, std::int64_t n, const std::string& split = "train",
                      int image_size = 32);

const std::vector<std::string>& known_recipes();

struct AugmentFlags {
  bool crop = false;  // pad by `pad` pixels (edge replicate), random crop back
  bool flip = false;  // horizontal flip with probability 1/2
  int pad = 4;
};

// images: [B, H, W, C]. Shape preserving; with all flags off the output
// equals the input.
Tensor augment(const Tensor& images, Rng& rng, const AugmentFlags& flags);

// Deterministic horizontal mirror of every image.
Tensor hflip(const Tensor& images);

// Raw RGB directory reader: each file "<label>_<anything>.rgb" holds H*W*3
// bytes. Images are scaled to [0, 1].
Dataset load_raw_rgb_dir(const std::string& dir, int height, int width, int num_classes,
                         const std::string& split = "train");

}  // namespace g2sd
