#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "g2sd/params.hpp"

namespace g2sd {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "G2SDCKPT";

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

// On disk (all integers little-endian):
//   "G2SDCKPT" | u32 version | u32 spec_len | spec (UTF-8 key = value text)
//   | u32 count | count x { u32 name_len | name | u8 dtype (1 = f32)
//   | u32 ndim | i64 dims[ndim] | f32 payload } | u32 CRC32 of all prior bytes
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string spec;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Snapshot of parameter values (copied).
Checkpoint checkpoint_from_params(const ParameterSet& params, std::string spec);

// Copies tensors whose names start with `from_prefix` into parameters named
// `to_prefix` + rest. Returns the number copied. Shape mismatches throw.
std::size_t load_params(ParameterSet& params, const Checkpoint& ckpt, std::string_view from_prefix = "",
                        std::string_view to_prefix = "");

// CRC-32 (IEEE, as used by zlib).
std::uint32_t crc32_of(std::string_view bytes);

}  // namespace g2sd
