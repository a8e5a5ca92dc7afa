#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fmrifuse/common.hpp"

namespace fmrifuse {

// Bounds-checked little-endian reader over an in-memory buffer. Every
// failure reports the byte offset it happened at.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }
  bool eof() const { return offset_ == bytes_.size(); }

  std::uint8_t u8();
  std::uint16_t u16le();
  std::uint32_t u32le();
  float f32le();
  std::string ascii(std::size_t n);
  void skip(std::size_t n);
  void seek(std::size_t offset);

 private:
  void need(std::size_t n) const;
  std::span<const std::uint8_t> bytes_;
  std::size_t offset_ = 0;
};

// Little-endian writer used by the binary file formats.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16le(std::uint16_t v);
  void u32le(std::uint32_t v);
  void f32le(float v);
  void f64le(double v);
  void ascii(std::string_view s);
  void fill(std::size_t n, std::uint8_t v);

  std::size_t size() const { return out_.size(); }
  const std::vector<std::uint8_t>& bytes() const { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes to a temp file in the same directory, then renames into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace fmrifuse
