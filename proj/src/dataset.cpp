#include "g2sd/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "g2sd/errors.hpp"

namespace g2sd {

Tensor Dataset::images(std::span<const std::int64_t> index) const {
  const std::int64_t per = image_numel();
  std::vector<float> out(static_cast<std::size_t>(per * static_cast<std::int64_t>(index.size())));
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto j = index[i];
    if (j < 0 || j >= size) throw IndexError("dataset index " + std::to_string(j) + " out of range");
    std::copy(pixels.begin() + j * per, pixels.begin() + (j + 1) * per, out.begin() + static_cast<std::int64_t>(i) * per);
  }
  return Tensor::from_data({static_cast<std::int64_t>(index.size()), height, width, channels}, std::move(out));
}

std::vector<std::int64_t> Dataset::labels_of(std::span<const std::int64_t> index) const {
  std::vector<std::int64_t> out;
  out.reserve(index.size());
  for (const auto j : index) {
    if (j < 0 || j >= size) throw IndexError("dataset index " + std::to_string(j) + " out of range");
    out.push_back(labels[static_cast<std::size_t>(j)]);
  }
  return out;
}

const std::vector<std::string>& known_recipes() {
  static const std::vector<std::string> names{"striped-shapes", "gaussian-blobs", "textured-digits"};
  return names;
}

namespace {

constexpr int kClasses = 10;

struct Canvas {
  int size;
  std::vector<float> rgb;  // size*size*3

  explicit Canvas(int s) : size(s), rgb(static_cast<std::size_t>(s * s * 3), 0.0F) {}
  float* at(int y, int x) { return rgb.data() + (static_cast<std::ptrdiff_t>(y) * size + x) * 3; }
  void fill(const std::array<float, 3>& c) {
    for (int i = 0; i < size * size; ++i) std::copy(c.begin(), c.end(), rgb.begin() + i * 3);
  }
};

std::array<float, 3> random_color(Rng& rng, double lo, double hi) {
  return {static_cast<float>(uniform(rng, lo, hi)), static_cast<float>(uniform(rng, lo, hi)),
          static_cast<float>(uniform(rng, lo, hi))};
}

void add_noise(Canvas& c, Rng& rng, double sigma) {
  for (auto& v : c.rgb) v = std::clamp(v + static_cast<float>(normal(rng, 0.0, sigma)), 0.0F, 1.0F);
}

// Shape membership in normalized coordinates u, v in [-1, 1].
bool inside_shape(int shape, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  switch (shape) {
    case 0: return u * u + v * v <= 1.0;                            // disc
    case 1: return au <= 0.85 && av <= 0.85;                         // square
    case 2: return v <= 0.8 && v >= -0.8 && au <= (v + 0.8) * 0.6;   // triangle
    case 3: return (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0);  // plus
    case 4: { const double r = u * u + v * v; return r <= 1.0 && r >= 0.4; }  // ring
    case 5: return au + av <= 1.0;                                   // diamond
    case 6: return (std::abs(u - v) <= 0.4 || std::abs(u + v) <= 0.4) && u * u + v * v <= 1.0;  // x
    case 7: return u * u + 4.0 * v * v <= 1.0;                       // flat ellipse
    case 8: return v <= 0.2 && u * u + (v - 0.2) * (v - 0.2) <= 1.0 && v >= -0.8;  // half disc
    case 9: return (u >= -0.8 && u <= -0.3 && av <= 0.85) || (v >= 0.35 && v <= 0.85 && u >= -0.8 && u <= 0.8);  // L
    default: return false;
  }
}

// 10 classes, one silhouette each, filled with stripes of random
// orientation, period and phase. Foreground is brighter than background so
// the silhouette survives averaging.
void draw_striped_shape(Canvas& c, int label, Rng& rng) {
  const int shape = label;
  const bool vertical = uniform01(rng) < 0.5;
  const auto bg = random_color(rng, 0.0, 0.35);
  const auto fg = random_color(rng, 0.65, 1.0);
  c.fill(bg);
  const double cy = c.size / 2.0 + uniform(rng, -3.0, 3.0);
  const double cx = c.size / 2.0 + uniform(rng, -3.0, 3.0);
  const double radius = uniform(rng, 0.28, 0.4) * c.size;
  const double period = uniform(rng, 3.0, 5.0);
  const double phase = uniform(rng, 0.0, period);
  for (int y = 0; y < c.size; ++y) {
    for (int x = 0; x < c.size; ++x) {
      const double u = (x + 0.5 - cx) / radius, v = (y + 0.5 - cy) / radius;
      if (!inside_shape(shape, u, v)) continue;
      const double coord = (vertical ? x : y) + phase;
      const bool on = std::fmod(coord, period) < period * 0.55;
      float* px = c.at(y, x);
      for (int k = 0; k < 3; ++k) px[k] = on ? fg[k] : 0.5F * (fg[k] + bg[k]);
    }
  }
  add_noise(c, rng, 0.06);
}

// Each class places 3 Gaussian blobs on a class-specific layout (jittered).
void draw_gaussian_blobs(Canvas& c, int label, Rng& rng) {
  static const std::array<std::array<std::array<double, 2>, 3>, kClasses> layouts{{
      {{{0.25, 0.25}, {0.5, 0.5}, {0.75, 0.75}}},
      {{{0.25, 0.75}, {0.5, 0.5}, {0.75, 0.25}}},
      {{{0.25, 0.25}, {0.25, 0.75}, {0.75, 0.5}}},
      {{{0.75, 0.25}, {0.75, 0.75}, {0.25, 0.5}}},
      {{{0.5, 0.2}, {0.5, 0.5}, {0.5, 0.8}}},
      {{{0.2, 0.5}, {0.5, 0.5}, {0.8, 0.5}}},
      {{{0.25, 0.25}, {0.25, 0.75}, {0.75, 0.25}}},
      {{{0.75, 0.75}, {0.25, 0.75}, {0.75, 0.25}}},
      {{{0.3, 0.3}, {0.3, 0.7}, {0.7, 0.7}}},
      {{{0.5, 0.25}, {0.75, 0.75}, {0.25, 0.75}}},
  }};
  const auto bg = random_color(rng, 0.0, 0.3);
  c.fill(bg);
  const auto& layout = layouts[static_cast<std::size_t>(label)];
  for (const auto& centre : layout) {
    const auto col = random_color(rng, 0.5, 1.0);
    const double cy = (centre[0] + uniform(rng, -0.06, 0.06)) * c.size;
    const double cx = (centre[1] + uniform(rng, -0.06, 0.06)) * c.size;
    const double sigma = uniform(rng, 0.07, 0.11) * c.size;
    for (int y = 0; y < c.size; ++y) {
      for (int x = 0; x < c.size; ++x) {
        const double d2 = (y + 0.5 - cy) * (y + 0.5 - cy) + (x + 0.5 - cx) * (x + 0.5 - cx);
        const double w = std::exp(-0.5 * d2 / (sigma * sigma));
        float* px = c.at(y, x);
        for (int k = 0; k < 3; ++k) px[k] = static_cast<float>(std::max<double>(px[k], w * col[k] + (1 - w) * px[k]));
      }
    }
  }
  add_noise(c, rng, 0.05);
}

// Seven-segment digits drawn with a random stroke texture.
void draw_textured_digit(Canvas& c, int label, Rng& rng) {
  // Segments a..g as bit masks per digit.
  static const std::array<int, kClasses> segments{0x3F, 0x06, 0x5B, 0x4F, 0x66, 0x6D, 0x7D, 0x07, 0x7F, 0x6F};
  const auto bg = random_color(rng, 0.0, 0.35);
  const auto fg = random_color(rng, 0.6, 1.0);
  c.fill(bg);
  const double h = uniform(rng, 0.55, 0.7) * c.size;
  const double w = h * uniform(rng, 0.5, 0.6);
  const double top = (c.size - h) / 2.0 + uniform(rng, -2.5, 2.5);
  const double left = (c.size - w) / 2.0 + uniform(rng, -2.5, 2.5);
  const double stroke = uniform(rng, 2.0, 3.2);
  const double tex_period = uniform(rng, 2.5, 4.0);
  const bool tex_diag = uniform01(rng) < 0.5;
  // Segment endpoints (x0, y0, x1, y1) in the unit box.
  static const std::array<std::array<double, 4>, 7> seg{{{0, 0, 1, 0},
                                                         {1, 0, 1, 0.5},
                                                         {1, 0.5, 1, 1},
                                                         {0, 1, 1, 1},
                                                         {0, 0.5, 0, 1},
                                                         {0, 0, 0, 0.5},
                                                         {0, 0.5, 1, 0.5}}};
  const int mask = segments[static_cast<std::size_t>(label)];
  for (int y = 0; y < c.size; ++y) {
    for (int x = 0; x < c.size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      bool on = false;
      for (int s = 0; s < 7 && !on; ++s) {
        if (!(mask & (1 << s))) continue;
        const double x0 = left + seg[s][0] * w, y0 = top + seg[s][1] * h;
        const double x1 = left + seg[s][2] * w, y1 = top + seg[s][3] * h;
        const double dx = x1 - x0, dy = y1 - y0;
        const double t = std::clamp(((px - x0) * dx + (py - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0);
        const double ex = px - (x0 + t * dx), ey = py - (y0 + t * dy);
        on = ex * ex + ey * ey <= 0.25 * stroke * stroke;
      }
      if (!on) continue;
      const double coord = tex_diag ? px + py : px;
      const float shade = std::fmod(coord, tex_period) < tex_period * 0.5 ? 1.0F : 0.75F;
      float* p = c.at(y, x);
      for (int k = 0; k < 3; ++k) p[k] = fg[k] * shade;
    }
  }
  add_noise(c, rng, 0.06);
}

}  // namespace

Dataset synth_dataset(const std::string& recipe, std::uint64_t seed, std::int64_t n, const std::string& split,
                      int image_size) {
  const auto& names = known_recipes();
  const auto it = std::find(names.begin(), names.end(), recipe);
  if (it == names.end()) throw ConfigError("unknown dataset recipe: " + recipe);
  if (n < kClasses) throw ConfigError("dataset size must be at least the class count (" + std::to_string(kClasses) + ")");
  if (image_size < 8) throw ConfigError("image size must be >= 8");
  const auto recipe_id = static_cast<std::uint64_t>(it - names.begin());
  Dataset ds;
  ds.size = n;
  ds.height = ds.width = image_size;
  ds.channels = 3;
  ds.num_classes = kClasses;
  ds.split = split;
  ds.recipe = recipe;
  ds.seed = seed;
  ds.pixels.resize(static_cast<std::size_t>(n * ds.image_numel()));
  ds.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % kClasses);
    Rng rng = make_rng(seed, recipe_id, static_cast<std::uint64_t>(i));
    Canvas c(image_size);
    switch (recipe_id) {
      case 0: draw_striped_shape(c, label, rng); break;
      case 1: draw_gaussian_blobs(c, label, rng); break;
      default: draw_textured_digit(c, label, rng); break;
    }
    std::copy(c.rgb.begin(), c.rgb.end(), ds.pixels.begin() + i * ds.image_numel());
    ds.labels[static_cast<std::size_t>(i)] = label;
  }
  return ds;
}

Tensor hflip(const Tensor& images) {
  if (images.ndim() != 4) throw ShapeError("hflip: expected [B,H,W,C]");
  const std::int64_t b = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  std::vector<float> out(images.data().begin(), images.data().end());
  const float* src = images.data().data();
  for (std::int64_t s = 0; s < b; ++s)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        std::copy(src + ((s * h + y) * w + (w - 1 - x)) * c, src + ((s * h + y) * w + (w - x)) * c,
                  out.begin() + ((s * h + y) * w + x) * c);
  return Tensor::from_data(images.shape(), std::move(out));
}

Tensor augment(const Tensor& images, Rng& rng, const AugmentFlags& flags) {
  if (images.ndim() != 4) throw ShapeError("augment: expected [B,H,W,C]");
  if (flags.pad < 0) throw ConfigError("augment: negative pad");
  const std::int64_t b = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  std::vector<float> out(images.data().begin(), images.data().end());
  const float* src = images.data().data();
  for (std::int64_t s = 0; s < b; ++s) {
    std::int64_t dy = 0, dx = 0;
    bool flip = false;
    if (flags.crop) {
      dy = static_cast<std::int64_t>(uniform_index(rng, 2 * flags.pad + 1)) - flags.pad;
      dx = static_cast<std::int64_t>(uniform_index(rng, 2 * flags.pad + 1)) - flags.pad;
    }
    if (flags.flip) flip = uniform01(rng) < 0.5;
    if (!flags.crop && !flip) continue;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t sx0 = flip ? w - 1 - x : x;
        const std::int64_t sy = std::clamp<std::int64_t>(y + dy, 0, h - 1);
        const std::int64_t sx = std::clamp<std::int64_t>(sx0 + dx, 0, w - 1);
        std::copy(src + ((s * h + sy) * w + sx) * c, src + ((s * h + sy) * w + sx + 1) * c,
                  out.begin() + ((s * h + y) * w + x) * c);
      }
    }
  }
  return Tensor::from_data(images.shape(), std::move(out));
}

Dataset load_raw_rgb_dir(const std::string& dir, int height, int width, int num_classes, const std::string& split) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError("raw image directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".rgb") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Dataset ds;
  ds.height = height;
  ds.width = width;
  ds.channels = 3;
  ds.num_classes = num_classes;
  ds.split = split;
  ds.recipe = "raw-rgb:" + dir;
  const std::size_t per = static_cast<std::size_t>(height) * width * 3;
  for (const auto& f : files) {
    const auto stem = f.stem().string();
    const auto us = stem.find('_');
    if (us == std::string::npos) throw ConfigError("raw image name lacks a label prefix: " + f.string());
    const long label = std::stol(stem.substr(0, us));
    if (label < 0 || label >= num_classes) throw IndexError("raw image label out of range: " + f.string());
    std::ifstream in(f, std::ios::binary);
    std::vector<unsigned char> bytes(per);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(per));
    if (in.gcount() != static_cast<std::streamsize>(per)) throw ConfigError("raw image has wrong size: " + f.string());
    for (const auto v : bytes) ds.pixels.push_back(static_cast<float>(v) / 255.0F);
    ds.labels.push_back(label);
  }
  ds.size = static_cast<std::int64_t>(ds.labels.size());
  return ds;
}

}  // namespace g2sd
