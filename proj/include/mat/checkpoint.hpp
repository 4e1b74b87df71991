#pragma once

// Binary checkpoint container. All integers little-endian.
//
//   bytes  field
//   8      magic "MATCKPT\0"
//   4      u32 format version (kCheckpointVersion)
//   4      u32 architecture (0 linear, 1 mlp, 2 conv)
//   4      u32 num_classes
//   4      u32 input rank r, followed by r x u32 dims
//   4      u32 width count w, followed by w x u32 widths
//   8      i64 epoch
//   4      u32 mask length m, followed by m x u8 channel mask
//   4      u32 rng-state length s, followed by s opaque bytes
//   8      u64 parameter count P (must equal the model spec's parameter count)
//   4P     f32 parameters (IEEE-754 binary32)
//   32     SHA-256 of every preceding byte

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mat/error.hpp"
#include "mat/hash.hpp"
#include "mat/model.hpp"

namespace mat {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'M', 'A', 'T', 'C', 'K', 'P', 'T', '\0'};

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.append(b, n);
  }
  template <class U>
  void le(U v) {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
    Bits bits;
    std::memcpy(&bits, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& b, std::size_t end) : buf_(b), end_(end) {}
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class U>
  U le() {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
    need(sizeof(U));
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      bits |= static_cast<Bits>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, &bits, sizeof(U));
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw PersistenceError("checkpoint truncated");
  }
  const std::string& buf_;
  std::size_t pos_ = 0, end_;
};

}  // namespace detail

inline std::string serialize_checkpoint(const ModelCheckpoint& m) {
  m.spec.validate();
  if (m.params.size() != m.spec.param_count()) throw PersistenceError("parameter count does not match spec");
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 8);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(m.spec.arch));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(m.spec.num_classes));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(m.spec.input_shape.size()));
  for (int d : m.spec.input_shape) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(m.spec.widths.size()));
  for (int d : m.spec.widths) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
  w.le<std::int64_t>(m.epoch);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(m.channel_mask.size()));
  w.raw(m.channel_mask.data(), m.channel_mask.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(m.rng_state.size()));
  w.raw(m.rng_state.data(), m.rng_state.size());
  w.le<std::uint64_t>(m.params.size());
  for (float p : m.params) w.le<float>(p);
  const auto digest = sha256(w.bytes());
  w.raw(digest.data(), digest.size());
  return std::move(w.bytes());
}

inline ModelCheckpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 + 4 + 32) throw PersistenceError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw PersistenceError("not a checkpoint file (bad magic)");
  const std::size_t body = bytes.size() - 32;
  detail::ByteReader r(bytes, body);
  char magic[8];
  r.raw(magic, 8);
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw PersistenceError("checkpoint format version " + std::to_string(version) + " unsupported (expected " +
                           std::to_string(kCheckpointVersion) + ")");
  ModelCheckpoint m;
  const auto arch = r.le<std::uint32_t>();
  if (arch > 2) throw PersistenceError("unknown architecture code " + std::to_string(arch));
  m.spec.arch = static_cast<Arch>(arch);
  m.spec.num_classes = static_cast<int>(r.le<std::uint32_t>());
  const auto rank = r.le<std::uint32_t>();
  if (rank > 8) throw PersistenceError("implausible input rank");
  for (std::uint32_t i = 0; i < rank; ++i) m.spec.input_shape.push_back(static_cast<int>(r.le<std::uint32_t>()));
  const auto nw = r.le<std::uint32_t>();
  if (nw > 8) throw PersistenceError("implausible width count");
  for (std::uint32_t i = 0; i < nw; ++i) m.spec.widths.push_back(static_cast<int>(r.le<std::uint32_t>()));
  m.epoch = r.le<std::int64_t>();
  const auto mask_len = r.le<std::uint32_t>();
  if (mask_len > body) throw PersistenceError("checkpoint truncated");
  m.channel_mask.resize(mask_len);
  r.raw(m.channel_mask.data(), mask_len);
  const auto rng_len = r.le<std::uint32_t>();
  if (rng_len > body) throw PersistenceError("checkpoint truncated");
  m.rng_state.resize(rng_len);
  r.raw(m.rng_state.data(), rng_len);
  const auto count = r.le<std::uint64_t>();
  try {
    m.spec.validate();
  } catch (const InputError& e) {
    throw PersistenceError(std::string("checkpoint carries an invalid spec: ") + e.what());
  }
  if (count != m.spec.param_count()) throw PersistenceError("parameter count does not match the stored spec");
  if (count > body / 4) throw PersistenceError("checkpoint truncated");
  m.params.resize(count);
  for (auto& p : m.params) p = r.le<float>();
  if (r.pos() != body) throw PersistenceError("trailing bytes in checkpoint");
  const auto digest = sha256(std::string_view(bytes.data(), body));
  if (std::memcmp(digest.data(), bytes.data() + body, 32) != 0) throw PersistenceError("checkpoint checksum mismatch");
  if (m.spec.arch == Arch::conv && m.channel_mask.size() != static_cast<std::size_t>(m.spec.widths[3]))
    throw PersistenceError("channel mask length does not match the last conv layer");
  return m;
}

inline void save_checkpoint(const ModelCheckpoint& m, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(m);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PersistenceError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw PersistenceError("short write to " + path.string());
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

// Content hash of a model (hex SHA-256 of its serialized form).
inline std::string model_hash(const ModelCheckpoint& m) { return sha256_hex(serialize_checkpoint(m)); }

}  // namespace mat
