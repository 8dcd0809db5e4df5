#include "g2sd/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "g2sd/errors.hpp"

namespace g2sd {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

std::string header_of(const std::vector<std::string>& names) {
  std::string h = "step,wall_ms";
  for (const auto& n : names) h += "," + n;
  return h;
}

}  // namespace

std::string format_scalar(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

MetricsLog::MetricsLog(const std::filesystem::path& path, std::vector<std::string> names)
    : path_(path), names_(std::move(names)), start_(std::chrono::steady_clock::now()) {
  for (const auto& n : names_) {
    if (n.find(',') != std::string::npos || n.empty()) throw ConfigError("invalid metrics column name: '" + n + "'");
  }
  if (std::filesystem::exists(path_) && std::filesystem::file_size(path_) > 0) {
    const auto table = read_metrics(path_);
    if (table.names != names_) {
      throw ConfigError("metrics file " + path_.string() + " has a different header");
    }
    if (!table.rows.empty()) {
      last_step_ = table.rows.back().step;
      has_rows_ = true;
    }
    return;
  }
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::trunc);
  if (!out) throw ConfigError("cannot create metrics file " + path_.string());
  out << header_of(names_) << "\n";
}

void MetricsLog::append(const MetricsRecord& record) {
  if (record.values.size() != names_.size()) throw ShapeError("metrics record has the wrong number of values");
  if (has_rows_ && record.step <= last_step_) {
    throw ConfigError("metrics step regression: " + std::to_string(record.step) + " after " + std::to_string(last_step_));
  }
  const double wall =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  std::ofstream out(path_, std::ios::app);
  if (!out) throw ConfigError("cannot append to metrics file " + path_.string());
  out << record.step << "," << format_scalar(std::floor(wall));
  for (const double v : record.values) out << "," << format_scalar(v);
  out << "\n";
  last_step_ = record.step;
  has_rows_ = true;
}

std::vector<double> MetricsTable::column(const std::string& name) const {
  std::size_t idx = names.size();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) idx = i;
  }
  if (idx == names.size()) throw ConfigError("no metrics column " + name);
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r.values[idx]);
  return out;
}

MetricsTable read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("metrics file is empty: " + path.string());
  auto header = split_csv(line);
  if (header.size() < 2 || header[0] != "step" || header[1] != "wall_ms") {
    throw ConfigError("metrics file has an unexpected header: " + path.string());
  }
  MetricsTable table;
  table.names.assign(header.begin() + 2, header.end());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw ConfigError("malformed metrics row in " + path.string());
    MetricsRow row;
    row.step = std::stoll(cells[0]);
    row.wall_ms = std::stod(cells[1]);
    for (std::size_t i = 2; i < cells.size(); ++i) row.values.push_back(std::stod(cells[i]));
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace g2sd
