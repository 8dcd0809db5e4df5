#include "g2sd/analysis.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "g2sd/errors.hpp"
#include "g2sd/mae.hpp"
#include "g2sd/metrics.hpp"
#include "g2sd/ops.hpp"

namespace g2sd {

double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) {
    throw ShapeError("linear_cka: row counts differ (" + std::to_string(x.rows()) + " vs " + std::to_string(y.rows()) + ")");
  }
  if (x.rows() < 2) throw ShapeError("linear_cka: need at least 2 examples");
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
  const double nx = (xc.transpose() * xc).norm();
  const double ny = (yc.transpose() * yc).norm();
  if (!(nx > 0.0) || !(ny > 0.0)) throw NumericError("linear_cka: zero-variance representation");
  const double cross = (yc.transpose() * xc).squaredNorm();
  return std::clamp(cross / (nx * ny), 0.0, 1.0);
}

void ActivationDump::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# model=" << model_id << " layer=" << layer << " split=" << split << " rows=" << features.rows()
      << " cols=" << features.cols() << "\n";
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
      if (j) out << ',';
      std::array<char, 32> buf{};
      const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), features(i, j));
      out.write(buf.data(), res.ptr - buf.data());
    }
    out << '\n';
  }
}

ActivationDump ActivationDump::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  ActivationDump dump;
  std::string line;
  std::getline(in, line);
  if (line.rfind("# ", 0) != 0) throw ConfigError("activation dump: missing header in " + path.string());
  std::istringstream head(line.substr(2));
  std::string field;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  while (head >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    const auto key = field.substr(0, eq);
    const auto val = field.substr(eq + 1);
    if (key == "model") dump.model_id = val;
    else if (key == "layer") dump.layer = std::stoi(val);
    else if (key == "split") dump.split = val;
    else if (key == "rows") rows = std::stol(val);
    else if (key == "cols") cols = std::stol(val);
  }
  dump.features.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw ConfigError("activation dump: truncated " + path.string());
    std::istringstream row(line);
    for (Eigen::Index j = 0; j < cols; ++j) {
      std::string cell;
      if (!std::getline(row, cell, ',')) throw ConfigError("activation dump: short row in " + path.string());
      dump.features(i, j) = std::stod(cell);
    }
  }
  if (!dump.features.allFinite()) throw NumericError("activation dump: non-finite entries");
  return dump;
}

Eigen::MatrixXd pooled_features(const VitEncoder& encoder, const Tensor& patches, std::span<const std::int64_t> keep,
                                std::int64_t k, int layer) {
  NoGradGuard guard;
  Tensor tokens;
  if (layer < 0) {
    tokens = encoder.forward(patches, keep, k).patch_tokens();
  } else {
    if (layer > encoder.spec().depth) throw IndexError("pooled_features: layer " + std::to_string(layer) + " > depth");
    std::vector<Tensor> hidden;
    TokenBatch embedded = encoder.embed(patches, keep, k);
    encoder.encode(embedded, nullptr, &hidden);
    TokenBatch view = embedded;
    view.tokens = hidden[static_cast<std::size_t>(layer)];
    tokens = view.patch_tokens();
  }
  Tensor pooled = mean_axis(tokens, 1);
  const auto b = pooled.dim(0);
  const auto d = pooled.dim(1);
  Eigen::MatrixXd out(b, d);
  const float* p = pooled.data().data();
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t j = 0; j < d; ++j) out(i, j) = p[i * d + j];
  }
  return out;
}

namespace {

std::vector<std::int64_t> range_index(std::int64_t begin, std::int64_t end) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(end - begin));
  std::iota(idx.begin(), idx.end(), begin);
  return idx;
}

void check_geometry(const VitEncoder& encoder, const Dataset& data) {
  const auto& p = encoder.spec().patch;
  if (p.image_h != data.height || p.image_w != data.width || p.channels != data.channels) {
    throw ConfigError("dataset geometry does not match the model's patch spec");
  }
}

std::int64_t count_correct(const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& labels) {
  std::int64_t c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == labels[i] ? 1 : 0;
  return c;
}

}  // namespace

ActivationDump dump_activations(const VitEncoder& encoder, const Dataset& data, int layer, std::string model_id,
                                std::int64_t max_examples, int batch_size) {
  check_geometry(encoder, data);
  const std::int64_t n = max_examples < 0 ? data.size : std::min(max_examples, data.size);
  ActivationDump dump;
  dump.model_id = std::move(model_id);
  dump.layer = layer;
  dump.split = data.split;
  dump.features.resize(n, encoder.spec().dim);
  for (std::int64_t s = 0; s < n; s += batch_size) {
    const auto idx = range_index(s, std::min<std::int64_t>(s + batch_size, n));
    const Tensor patches = patchify(data.images(idx), encoder.spec().patch).tokens;
    dump.features.middleRows(s, static_cast<Eigen::Index>(idx.size())) = pooled_features(encoder, patches, {}, 0, layer);
  }
  return dump;
}

double evaluate_accuracy(const VitClassifier& model, const Dataset& data, int batch_size, int workers) {
  check_geometry(model.encoder(), data);
  if (data.size == 0) return 0.0;
  const std::int64_t batches = (data.size + batch_size - 1) / batch_size;
  workers = std::max(1, std::min<int>(workers, static_cast<int>(batches)));
  std::vector<std::int64_t> correct(static_cast<std::size_t>(workers), 0);
  auto run = [&](int w) {
    for (std::int64_t b = w; b < batches; b += workers) {
      const auto idx = range_index(b * batch_size, std::min<std::int64_t>((b + 1) * batch_size, data.size));
      const Tensor patches = patchify(data.images(idx), model.encoder().spec().patch).tokens;
      correct[static_cast<std::size_t>(w)] += count_correct(model.predict(patches), data.labels_of(idx));
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  const auto total = std::accumulate(correct.begin(), correct.end(), std::int64_t{0});
  return static_cast<double>(total) / static_cast<double>(data.size);
}

std::vector<OcclusionPoint> occlusion_curve(const VitClassifier& model, const Dataset& data,
                                            const OcclusionOptions& opts) {
  check_geometry(model.encoder(), data);
  const auto& patch = model.encoder().spec().patch;
  const std::int64_t n = patch.num_patches();
  const std::int64_t pd = patch.patch_dim();
  for (double r : opts.ratios) {
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("occlusion: ratio " + std::to_string(r) + " not in [0, 1)");
  }
  const Eigen::MatrixXd full = dump_activations(model.encoder(), data, -1, "full", -1, opts.batch_size).features;
  std::vector<OcclusionPoint> curve;
  for (std::size_t ri = 0; ri < opts.ratios.size(); ++ri) {
    OcclusionPoint pt;
    pt.ratio = opts.ratios[ri];
    pt.dropped = pt.ratio > 0.0 ? masked_count(n, pt.ratio) : 0;
    Eigen::MatrixXd occluded(data.size, full.cols());
    std::int64_t correct = 0;
    for (std::int64_t s = 0; s < data.size; s += opts.batch_size) {
      const auto idx = range_index(s, std::min<std::int64_t>(s + opts.batch_size, data.size));
      Tensor patches = patchify(data.images(idx), patch).tokens;
      std::vector<std::int64_t> keep;
      std::int64_t k = 0;
      if (pt.dropped > 0) {
        std::vector<MaskPlan> plans;
        for (auto i : idx) {
          Rng rng = make_rng(opts.seed, 0x6f63ULL + ri, static_cast<std::uint64_t>(i));
          plans.push_back(sample_mask(n, pt.ratio, rng));
        }
        if (opts.pixel_zero) {
          float* p = patches.mutable_data().data();
          for (std::size_t b = 0; b < plans.size(); ++b) {
            for (auto m : plans[b].masked) {
              std::fill_n(p + (static_cast<std::int64_t>(b) * n + m) * pd, pd, 0.0F);
            }
          }
        } else {
          keep = visible_index(plans);
          k = n - pt.dropped;
        }
      }
      correct += count_correct(model.predict(patches, keep, k), data.labels_of(idx));
      occluded.middleRows(s, static_cast<Eigen::Index>(idx.size())) =
          pooled_features(model.encoder(), patches, keep, k, -1);
    }
    pt.accuracy = static_cast<double>(correct) / static_cast<double>(data.size);
    pt.cka = linear_cka(full, occluded);
    curve.push_back(pt);
  }
  return curve;
}

double relative_drop(const std::vector<OcclusionPoint>& curve, double ratio) {
  const OcclusionPoint* base = nullptr;
  const OcclusionPoint* at = nullptr;
  for (const auto& p : curve) {
    if (p.ratio == 0.0) base = &p;
    if (std::abs(p.ratio - ratio) < 1e-12) at = &p;
  }
  if (!base || !at) throw ConfigError("relative_drop: curve lacks ratio 0 or the requested ratio");
  if (base->accuracy <= 0.0) return 0.0;
  return (base->accuracy - at->accuracy) / base->accuracy;
}

std::string corruption_name(Corruption c) {
  switch (c) {
    case Corruption::GaussianNoise: return "gaussian_noise";
    case Corruption::PatchShuffle: return "patch_shuffle";
    case Corruption::ColorInversion: return "color_inversion";
  }
  return "unknown";
}

Corruption parse_corruption(const std::string& name) {
  for (auto c : {Corruption::GaussianNoise, Corruption::PatchShuffle, Corruption::ColorInversion}) {
    if (corruption_name(c) == name) return c;
  }
  throw ConfigError("unknown corruption '" + name + "'");
}

Tensor corrupt(const Tensor& images, const PatchSpec& patch, const CorruptionSpec& spec, Rng& rng) {
  if (spec.strength < 0.0) throw ConfigError("corruption strength must be >= 0");
  if (spec.strength == 0.0) return images.detach();
  switch (spec.kind) {
    case Corruption::GaussianNoise: {
      Tensor out = images.clone();
      for (float& v : out.mutable_data()) {
        v = static_cast<float>(std::clamp(v + normal(rng, 0.0, spec.strength), 0.0, 1.0));
      }
      return out;
    }
    case Corruption::ColorInversion: {
      if (spec.strength > 1.0) throw ConfigError("color inversion strength must be <= 1");
      Tensor out = images.clone();
      const auto s = static_cast<float>(spec.strength);
      for (float& v : out.mutable_data()) v = (1.0F - s) * v + s * (1.0F - v);
      return out;
    }
    case Corruption::PatchShuffle: {
      if (spec.strength > 1.0) throw ConfigError("patch shuffle strength must be <= 1");
      Tensor tokens = patchify(images, patch).tokens.clone();
      const std::int64_t n = patch.num_patches();
      const std::int64_t pd = patch.patch_dim();
      const auto m = static_cast<std::int64_t>(std::floor(spec.strength * static_cast<double>(n) + 0.5));
      float* t = tokens.mutable_data().data();
      std::vector<float> buf(static_cast<std::size_t>(m * pd));
      for (std::int64_t b = 0; b < tokens.dim(0); ++b) {
        std::vector<std::int64_t> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        for (std::int64_t i = 0; i < m; ++i) {
          const auto j = i + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(n - i)));
          std::swap(order[i], order[j]);
        }
        std::vector<std::int64_t> perm(order.begin(), order.begin() + m);
        for (std::int64_t i = m - 1; i > 0; --i) {
          std::swap(perm[i], perm[uniform_index(rng, static_cast<std::uint64_t>(i + 1))]);
        }
        float* base = t + b * n * pd;
        for (std::int64_t i = 0; i < m; ++i) std::copy_n(base + perm[i] * pd, pd, buf.data() + i * pd);
        for (std::int64_t i = 0; i < m; ++i) std::copy_n(buf.data() + i * pd, pd, base + order[i] * pd);
      }
      return unpatchify(tokens, patch);
    }
  }
  return images.detach();
}

std::vector<CorruptionRow> corruption_eval(const VitClassifier& model, const Dataset& data,
                                           const std::vector<CorruptionSpec>& specs, std::uint64_t seed,
                                           int batch_size) {
  check_geometry(model.encoder(), data);
  const auto& patch = model.encoder().spec().patch;
  const double clean = evaluate_accuracy(model, data, batch_size);
  std::vector<CorruptionRow> rows;
  for (std::size_t si = 0; si < specs.size(); ++si) {
    std::int64_t correct = 0;
    for (std::int64_t s = 0, b = 0; s < data.size; s += batch_size, ++b) {
      const auto idx = range_index(s, std::min<std::int64_t>(s + batch_size, data.size));
      Rng rng = make_rng(seed, 0x636f7272ULL + si, static_cast<std::uint64_t>(b));
      const Tensor images = corrupt(data.images(idx), patch, specs[si], rng);
      correct += count_correct(model.predict(patchify(images, patch).tokens), data.labels_of(idx));
    }
    CorruptionRow row;
    row.corruption = corruption_name(specs[si].kind);
    row.strength = specs[si].strength;
    row.accuracy = static_cast<double>(correct) / static_cast<double>(std::max<std::int64_t>(data.size, 1));
    row.delta = row.accuracy - clean;
    rows.push_back(row);
  }
  return rows;
}

void write_occlusion_csv(const std::filesystem::path& path, const std::vector<OcclusionPoint>& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "ratio,dropped,accuracy,cka\n";
  for (const auto& p : curve) {
    out << format_scalar(p.ratio) << ',' << p.dropped << ',' << format_scalar(p.accuracy) << ','
        << format_scalar(p.cka) << '\n';
  }
}

void write_occlusion_curve(const std::filesystem::path& path, const std::vector<OcclusionPoint>& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# ratio accuracy cka\n";
  for (const auto& p : curve) {
    out << format_scalar(p.ratio) << ' ' << format_scalar(p.accuracy) << ' ' << format_scalar(p.cka) << '\n';
  }
}

void write_corruption_csv(const std::filesystem::path& path, const std::vector<CorruptionRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "corruption,strength,accuracy,delta\n";
  for (const auto& r : rows) {
    out << r.corruption << ',' << format_scalar(r.strength) << ',' << format_scalar(r.accuracy) << ','
        << format_scalar(r.delta) << '\n';
  }
}

}  // namespace g2sd
