#include "g2sd/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "g2sd/errors.hpp"

namespace g2sd {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class U>
  U get() {
    need(sizeof(U));
    U value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return value;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

constexpr std::uint8_t kDtypeF32 = 1;

}  // namespace

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::set<std::string> names;
  std::string out(kCheckpointMagic);
  put<std::uint32_t>(out, ckpt.version);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.spec.size()));
  out += ckpt.spec;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (!names.insert(t.name).second) throw CheckpointError("duplicate tensor name: " + t.name);
    if (shape_numel(t.shape) != static_cast<std::int64_t>(t.data.size())) {
      throw CheckpointError("tensor " + t.name + " payload does not match its shape");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint8_t>(out, kDtypeF32);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (const auto d : t.shape) put<std::int64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  }
  put<std::uint32_t>(out, crc32_of(out));
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kCheckpointMagic.size()) != kCheckpointMagic) throw CheckpointError("not a checkpoint (bad magic)");
  Checkpoint ckpt;
  ckpt.version = r.get<std::uint32_t>();
  if (ckpt.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(ckpt.version) + " (this reader handles " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < kCheckpointMagic.size() + 4 + 4) throw CheckpointError("checkpoint truncated");
  const auto body = bytes.substr(0, bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (crc32_of(body) != stored) throw CheckpointError("checkpoint checksum mismatch");
  Reader b(body);
  b.take(kCheckpointMagic.size());
  b.get<std::uint32_t>();
  const auto spec_len = b.get<std::uint32_t>();
  ckpt.spec = std::string(b.take(spec_len));
  const auto count = b.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = std::string(b.take(b.get<std::uint32_t>()));
    if (b.get<std::uint8_t>() != kDtypeF32) throw CheckpointError("tensor " + t.name + ": unsupported dtype");
    const auto nd = b.get<std::uint32_t>();
    for (std::uint32_t d = 0; d < nd; ++d) t.shape.push_back(b.get<std::int64_t>());
    const auto n = static_cast<std::size_t>(shape_numel(t.shape));
    const auto payload = b.take(n * sizeof(float));
    t.data.resize(n);
    std::memcpy(t.data.data(), payload.data(), payload.size());
    if (ckpt.find(t.name)) throw CheckpointError("duplicate tensor name: " + t.name);
    ckpt.tensors.push_back(std::move(t));
  }
  if (b.pos() != body.size()) throw CheckpointError("trailing bytes after tensor table");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_checkpoint(ss.str());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

Checkpoint checkpoint_from_params(const ParameterSet& params, std::string spec) {
  Checkpoint ckpt;
  ckpt.spec = std::move(spec);
  for (const auto& p : params.items()) {
    ckpt.tensors.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  return ckpt;
}

std::size_t load_params(ParameterSet& params, const Checkpoint& ckpt, std::string_view from_prefix,
                        std::string_view to_prefix) {
  std::size_t copied = 0;
  for (const auto& t : ckpt.tensors) {
    if (!t.name.starts_with(from_prefix)) continue;
    const std::string target = std::string(to_prefix) + t.name.substr(from_prefix.size());
    auto* p = params.find(target);
    if (p == nullptr) continue;
    if (p->tensor.shape() != t.shape) {
      throw CheckpointError("shape mismatch for " + target + ": checkpoint " + shape_str(t.shape) + " vs model " +
                            shape_str(p->tensor.shape()));
    }
    std::copy(t.data.begin(), t.data.end(), p->tensor.mutable_data().begin());
    ++copied;
  }
  return copied;
}

}  // namespace g2sd
