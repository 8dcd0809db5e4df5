#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "g2sd/dataset.hpp"
#include "g2sd/optim.hpp"

namespace g2sd {

// Loop settings shared by every stage.
struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  float lr = 1e-3F;
  float min_lr = 1e-6F;
  float warmup_epochs = 1.0F;
  AdamWConfig adam;
  AugmentFlags augment;
  std::uint64_t seed = 0;
  std::ostream* progress = nullptr;  // per-epoch summary lines when set

  void validate() const;
  std::int64_t steps_per_epoch(std::int64_t n) const { return (n + batch_size - 1) / batch_size; }
};

// Sample order for one epoch, drawn from the (seed, "epoch", epoch) stream.
std::vector<std::int64_t> epoch_order(std::int64_t n, std::uint64_t seed, int epoch);

// Batch `b` of an epoch order.
std::vector<std::int64_t> batch_slice(const std::vector<std::int64_t>& order, std::int64_t b, int batch_size);

}  // namespace g2sd
