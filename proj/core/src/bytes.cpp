#include "robochain/bytes.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "robochain/errors.hpp"

namespace robochain {

namespace {

constexpr char kHexDigits[] = "0123456789abcdef";

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::string to_hex(ByteView data) {
  std::string out;
  out.reserve(data.size() * 2);
  for (std::uint8_t b : data) {
    out.push_back(kHexDigits[b >> 4]);
    out.push_back(kHexDigits[b & 0x0f]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw Error(ErrorCode::CorruptData, "odd-length hex string");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int hi = hex_value(hex[2 * i]);
    int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(ErrorCode::CorruptData, "invalid hex digit");
    out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return out;
}

Digest Digest::from_hex(std::string_view hex) {
  Bytes raw = robochain::from_hex(hex);
  if (raw.size() != 32) throw Error(ErrorCode::CorruptData, "digest must be 32 bytes");
  Digest d;
  std::copy(raw.begin(), raw.end(), d.bytes.begin());
  return d;
}

std::string Digest::hex() const { return to_hex(bytes); }

bool Digest::is_zero() const {
  return std::all_of(bytes.begin(), bytes.end(), [](std::uint8_t b) { return b == 0; });
}

std::uint64_t load_u64le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint32_t load_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

CanonicalWriter& CanonicalWriter::tag(std::uint8_t t) { return raw_u8(t); }

CanonicalWriter& CanonicalWriter::field(ByteView data) {
  if (data.size() > 0xffffffffu) throw Error(ErrorCode::CorruptData, "field exceeds 4 GiB");
  raw_u32(static_cast<std::uint32_t>(data.size()));
  return raw(data);
}

CanonicalWriter& CanonicalWriter::u64(std::uint64_t v) {
  raw_u32(8);
  return raw_u64(v);
}

CanonicalWriter& CanonicalWriter::f64(double v) {
  raw_u32(8);
  return raw_f64(v);
}

CanonicalWriter& CanonicalWriter::boolean(bool v) {
  raw_u32(1);
  return raw_u8(v ? 1 : 0);
}

CanonicalWriter& CanonicalWriter::raw(ByteView data) {
  out_.insert(out_.end(), data.begin(), data.end());
  return *this;
}

CanonicalWriter& CanonicalWriter::raw_u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  return *this;
}

CanonicalWriter& CanonicalWriter::raw_u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  return *this;
}

CanonicalWriter& CanonicalWriter::raw_f64(double v) { return raw_u64(std::bit_cast<std::uint64_t>(v)); }

CanonicalWriter& CanonicalWriter::raw_u8(std::uint8_t v) {
  out_.push_back(v);
  return *this;
}

ByteView CanonicalReader::raw(std::size_t n) {
  if (remaining() < n) throw Error(ErrorCode::CorruptData, "truncated input");
  ByteView out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t CanonicalReader::raw_u8() { return raw(1)[0]; }
std::uint32_t CanonicalReader::raw_u32() { return load_u32le(raw(4).data()); }
std::uint64_t CanonicalReader::raw_u64() { return load_u64le(raw(8).data()); }
double CanonicalReader::raw_f64() { return std::bit_cast<double>(raw_u64()); }

std::uint8_t CanonicalReader::tag() { return raw_u8(); }

ByteView CanonicalReader::field() {
  std::uint32_t len = raw_u32();
  return raw(len);
}

std::string CanonicalReader::string_field() {
  ByteView f = field();
  return {reinterpret_cast<const char*>(f.data()), f.size()};
}

Digest CanonicalReader::digest_field() {
  ByteView f = field();
  if (f.size() != 32) throw Error(ErrorCode::CorruptData, "digest field must be 32 bytes");
  Digest d;
  std::copy(f.begin(), f.end(), d.bytes.begin());
  return d;
}

std::uint64_t CanonicalReader::u64() {
  if (raw_u32() != 8) throw Error(ErrorCode::CorruptData, "integer field must be 8 bytes");
  return raw_u64();
}

double CanonicalReader::f64() {
  if (raw_u32() != 8) throw Error(ErrorCode::CorruptData, "real field must be 8 bytes");
  return raw_f64();
}

bool CanonicalReader::boolean() {
  if (raw_u32() != 1) throw Error(ErrorCode::CorruptData, "boolean field must be 1 byte");
  std::uint8_t v = raw_u8();
  if (v > 1) throw Error(ErrorCode::CorruptData, "boolean out of range");
  return v == 1;
}

void CanonicalReader::expect_done() const {
  if (!done()) throw Error(ErrorCode::CorruptData, "trailing bytes after record");
}

}  // namespace robochain
