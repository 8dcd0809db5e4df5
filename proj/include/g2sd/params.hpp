#pragma once

#include <string>
#include <vector>

#include "g2sd/tensor.hpp"

namespace g2sd {

// A named trainable tensor. `layer` is the depth used by layer-wise lr
// decay: 0 for embeddings and special tokens, 1..D for encoder blocks,
// D+1 for heads and everything after the encoder.
struct Parameter {
  std::string name;
  Tensor tensor;
  int layer = 0;
  bool decay = true;  // weight decay applies (off for biases, norms, tokens)
};

class ParameterSet {
 public:
  void add(std::string name, Tensor tensor, int layer, bool decay);
  void extend(const ParameterSet& other);

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  const Parameter* find(const std::string& name) const;
  Parameter* find(const std::string& name);

  void zero_grad();
  std::int64_t numel() const;

 private:
  std::vector<Parameter> items_;
};

}  // namespace g2sd
