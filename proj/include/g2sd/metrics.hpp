#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace g2sd {

struct MetricsRecord {
  std::int64_t step = 0;
  std::vector<double> values;  // in the log's column order
};

struct MetricsRow {
  std::int64_t step = 0;
  double wall_ms = 0.0;
  std::vector<double> values;
};

// Append-only CSV run log with header "step,wall_ms,<names...>". Scalars
// are written with 9 significant digits. Reopening an existing file keeps
// its rows; the header must match. Steps must strictly increase.
class MetricsLog {
 public:
  MetricsLog(const std::filesystem::path& path, std::vector<std::string> names);

  void append(const MetricsRecord& record);
  void append(std::int64_t step, const std::vector<double>& values) { append(MetricsRecord{step, values}); }

  const std::vector<std::string>& names() const { return names_; }
  const std::filesystem::path& path() const { return path_; }
  std::int64_t last_step() const { return last_step_; }

 private:
  std::filesystem::path path_;
  std::vector<std::string> names_;
  std::int64_t last_step_ = -1;
  bool has_rows_ = false;
  std::chrono::steady_clock::time_point start_;
};

// Formats with "%.9g".
std::string format_scalar(double v);

struct MetricsTable {
  std::vector<std::string> names;  // value columns (excluding step, wall_ms)
  std::vector<MetricsRow> rows;

  // Column of a named scalar across rows.
  std::vector<double> column(const std::string& name) const;
};

MetricsTable read_metrics(const std::filesystem::path& path);

}  // namespace g2sd
