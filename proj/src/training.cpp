#include "g2sd/training.hpp"

#include <algorithm>
#include <numeric>

#include "g2sd/errors.hpp"

namespace g2sd {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (lr < 0.0F || min_lr < 0.0F) throw ConfigError("train: learning rates must be >= 0");
  if (warmup_epochs < 0.0F) throw ConfigError("train: warmup must be >= 0");
}

std::vector<std::int64_t> epoch_order(std::int64_t n, std::uint64_t seed, int epoch) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 0x65706f6368ULL, static_cast<std::uint64_t>(epoch));
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(i + 1)));
    std::swap(order[i], order[j]);
  }
  return order;
}

std::vector<std::int64_t> batch_slice(const std::vector<std::int64_t>& order, std::int64_t b, int batch_size) {
  const auto begin = std::min<std::int64_t>(b * batch_size, static_cast<std::int64_t>(order.size()));
  const auto end = std::min<std::int64_t>(begin + batch_size, static_cast<std::int64_t>(order.size()));
  return {order.begin() + begin, order.begin() + end};
}

}  // namespace g2sd
