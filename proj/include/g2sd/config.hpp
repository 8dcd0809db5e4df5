#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace g2sd {

// Flat key = value configuration. Keys carry a section prefix
// ("generic.mask_ratio"); a "[generic]" line prefixes the keys after it.
// '#' starts a comment.
class Config {
 public:
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  // Sorted "key = value" lines; parse(to_string()) reproduces the config.
  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get_string(const std::string& key) const;
  long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;  // comma separated
  std::vector<std::string> get_strings(const std::string& key) const;

  // "key=value"; the key must already exist.
  void apply_override(std::string_view assignment);
  // Overlays every key of `other`; unknown keys throw.
  void merge_known(const Config& other);

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Every recognised key with its default. A run's resolved configuration is
// this table overlaid with the config file and --set overrides.
Config default_config();

}  // namespace g2sd
