#pragma once

#include <stdexcept>
#include <string>

namespace g2sd {

// Shape or dimension disagreement between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Index (label, token position, layer) outside its valid range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Invalid specification or configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A forward op produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed, truncated, corrupted or incompatible checkpoint file.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged; carries the step at which it happened.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& stage, long step, const std::string& what)
      : std::runtime_error(stage + ": step " + std::to_string(step) + ": " + what),
        stage_(stage),
        step_(step) {}
  const std::string& stage() const { return stage_; }
  long step() const { return step_; }

 private:
  std::string stage_;
  long step_;
};

}  // namespace g2sd
