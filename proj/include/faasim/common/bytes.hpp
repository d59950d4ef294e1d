#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace faasim {

// 32-byte value used for block hashes, content addresses and account ids.
using Hash32 = std::array<uint8_t, 32>;

// Account / entity identifier on the management ledger.
using Address = Hash32;

using Bytes = std::vector<uint8_t>;

constexpr Hash32 kZeroHash{};

std::string to_hex(std::span<const uint8_t> data);
Bytes from_hex(std::string_view hex);
Hash32 hash32_from_hex(std::string_view hex);

inline std::string to_hex(const Hash32& h) {
  return to_hex(std::span<const uint8_t>(h.data(), h.size()));
}

// Big-endian u64, used everywhere an integer feeds a digest.
inline std::array<uint8_t, 8> be64(uint64_t v) {
  std::array<uint8_t, 8> out{};
  for (int i = 7; i >= 0; --i) {
    out[static_cast<size_t>(i)] = static_cast<uint8_t>(v & 0xff);
    v >>= 8;
  }
  return out;
}

inline uint64_t read_be64(std::span<const uint8_t> in) {
  uint64_t v = 0;
  for (size_t i = 0; i < 8; ++i) {
    v = (v << 8) | in[i];
  }
  return v;
}

// Incremental byte-string builder for digest preimages.
class ByteWriter {
 public:
  ByteWriter& raw(std::span<const uint8_t> data) {
    buf_.insert(buf_.end(), data.begin(), data.end());
    return *this;
  }
  ByteWriter& raw(const Hash32& h) {
    return raw(std::span<const uint8_t>(h.data(), h.size()));
  }
  ByteWriter& str(std::string_view s) {
    const auto* p = reinterpret_cast<const uint8_t*>(s.data());
    return raw(std::span<const uint8_t>(p, s.size()));
  }
  ByteWriter& u64(uint64_t v) {
    auto b = be64(v);
    return raw(std::span<const uint8_t>(b.data(), b.size()));
  }
  ByteWriter& i64(int64_t v) { return u64(static_cast<uint64_t>(v)); }

  const Bytes& bytes() const { return buf_; }

 private:
  Bytes buf_;
};

inline std::span<const uint8_t> as_bytes(std::string_view s) {
  return {reinterpret_cast<const uint8_t*>(s.data()), s.size()};
}

}  // namespace faasim
