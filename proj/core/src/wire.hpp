#pragma once

// Little-endian encode/decode helpers shared by the binary dataset and
// checkpoint formats. Buffers are std::string byte blobs.

#include <bit>
#include <cstdint>
#include <string>

#include "marginlab/errors.hpp"

namespace marginlab::wire {

inline void append_u8(std::string& out, std::uint8_t v) {
  out.push_back(static_cast<char>(v));
}

inline void append_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

inline void append_f64le(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

// Reader with bounds checks; parse errors carry the byte offset.
class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}

  std::size_t offset() const { return offset_; }
  bool at_end() const { return offset_ == buf_.size(); }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[offset_++]);
  }

  std::uint32_t u32le() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) | static_cast<unsigned char>(buf_[offset_ + i]);
    }
    offset_ += 4;
    return v;
  }

  double f64le() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
      v = (v << 8) | static_cast<unsigned char>(buf_[offset_ + i]);
    }
    offset_ += 8;
    return std::bit_cast<double>(v);
  }

 private:
  void need(std::size_t bytes) {
    if (offset_ + bytes > buf_.size()) {
      throw ParseError("truncated file at byte offset " +
                           std::to_string(buf_.size()),
                       static_cast<long>(buf_.size()));
    }
  }

  const std::string& buf_;
  std::size_t offset_ = 0;
};

}  // namespace marginlab::wire
