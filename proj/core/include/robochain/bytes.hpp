#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace robochain {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// Simulation time. Never wall-clock.
using Tick = std::uint64_t;

/// 32-byte digest (SHA-256 output, block hashes, content ids).
struct Digest {
  std::array<std::uint8_t, 32> bytes{};

  static Digest zero() { return Digest{}; }
  static Digest from_hex(std::string_view hex);

  std::string hex() const;
  std::string short_hex() const { return hex().substr(0, 12); }
  bool is_zero() const;
  ByteView view() const { return bytes; }

  auto operator<=>(const Digest&) const = default;
};

std::string to_hex(ByteView data);
Bytes from_hex(std::string_view hex);

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

/// Length-prefixed little-endian field encoding shared by every hashed or
/// transmitted structure:
///   field   := u32le(len) || bytes
///   integer := field of 8 bytes, little-endian
///   real    := field of 8 bytes, IEEE-754 binary64 little-endian
class CanonicalWriter {
 public:
  CanonicalWriter& tag(std::uint8_t t);
  CanonicalWriter& field(ByteView data);
  CanonicalWriter& field(std::string_view s) { return field(as_bytes(s)); }
  CanonicalWriter& field(const Digest& d) { return field(d.view()); }
  CanonicalWriter& u64(std::uint64_t v);
  CanonicalWriter& f64(double v);
  CanonicalWriter& boolean(bool v);

  // Unframed primitives, for formats that carry their own structure.
  CanonicalWriter& raw(ByteView data);
  CanonicalWriter& raw_u32(std::uint32_t v);
  CanonicalWriter& raw_u64(std::uint64_t v);
  CanonicalWriter& raw_f64(double v);
  CanonicalWriter& raw_u8(std::uint8_t v);

  const Bytes& bytes() const& { return out_; }
  Bytes take() && { return std::move(out_); }

 private:
  Bytes out_;
};

/// Strict reader for CanonicalWriter output. Any framing mismatch throws
/// Error{CorruptData}.
class CanonicalReader {
 public:
  explicit CanonicalReader(ByteView data) : data_(data) {}

  std::uint8_t tag();
  ByteView field();
  std::string string_field();
  Digest digest_field();
  std::uint64_t u64();
  double f64();
  bool boolean();

  ByteView raw(std::size_t n);
  std::uint32_t raw_u32();
  std::uint64_t raw_u64();
  double raw_f64();
  std::uint8_t raw_u8();

  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }
  void expect_done() const;

 private:
  ByteView data_;
  std::size_t pos_ = 0;
};

std::uint64_t load_u64le(const std::uint8_t* p);
std::uint32_t load_u32le(const std::uint8_t* p);

}  // namespace robochain
