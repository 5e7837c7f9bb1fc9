#pragma once

// Little-endian byte encoding shared by the container and parameter formats.
// Encoding is spelled out byte by byte so files do not depend on host
// endianness.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <string>

namespace drgcn::detail {

class ByteWriter {
 public:
  void magic(const std::array<char, 4>& m) { buf_.append(m.data(), m.size()); }
  void bytes(const std::string& s) { buf_.append(s); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

/// Error is constructed as Error(file, message).
template <class Error>
class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string file) : bytes_(bytes), file_(std::move(file)) {}

  void magic(const std::array<char, 4>& m) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, m.data(), 4) != 0) {
      throw Error(file_, "magic mismatch, expected \"" + std::string(m.data(), 4) + "\"");
    }
    pos_ += 4;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  /// Checks that count records of record_size bytes remain.
  void expect_records(std::uint64_t count, std::uint64_t record_size) {
    const std::uint64_t remaining = bytes_.size() - pos_;
    if (record_size != 0 && count > remaining / record_size) throw Error(file_, "truncated file");
  }
  void finish() const {
    if (pos_ != bytes_.size()) throw Error(file_, "trailing bytes after payload");
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(file_, "truncated file");
  }
  const std::string& bytes_;
  std::string file_;
  std::size_t pos_ = 0;
};

}  // namespace drgcn::detail
