#include "g2sd/params.hpp"

#include "g2sd/errors.hpp"

namespace g2sd {

void ParameterSet::add(std::string name, Tensor tensor, int layer, bool decay) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
  tensor.set_requires_grad(true);
  items_.push_back({std::move(name), std::move(tensor), layer, decay});
}

void ParameterSet::extend(const ParameterSet& other) {
  for (const auto& p : other.items_) add(p.name, p.tensor, p.layer, p.decay);
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

std::int64_t ParameterSet::numel() const {
  std::int64_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

}  // namespace g2sd
