#include "fmrifuse/bytes.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fmrifuse {

void ByteReader::need(std::size_t n) const {
  if (offset_ + n > bytes_.size()) {
    throw FormatError("unexpected end of data: need " + std::to_string(n) +
                      " bytes at byte offset " + std::to_string(offset_));
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return bytes_[offset_++];
}

std::uint16_t ByteReader::u16le() {
  need(2);
  std::uint16_t v = std::uint16_t(bytes_[offset_]) | std::uint16_t(bytes_[offset_ + 1]) << 8;
  offset_ += 2;
  return v;
}

std::uint32_t ByteReader::u32le() {
  need(4);
  std::uint32_t v = std::uint32_t(bytes_[offset_]) | std::uint32_t(bytes_[offset_ + 1]) << 8 |
                    std::uint32_t(bytes_[offset_ + 2]) << 16 |
                    std::uint32_t(bytes_[offset_ + 3]) << 24;
  offset_ += 4;
  return v;
}

float ByteReader::f32le() {
  std::uint32_t raw = u32le();
  return std::bit_cast<float>(raw);
}

std::string ByteReader::ascii(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + offset_), n);
  offset_ += n;
  return s;
}

void ByteReader::skip(std::size_t n) {
  need(n);
  offset_ += n;
}

void ByteReader::seek(std::size_t offset) {
  if (offset > bytes_.size()) throw FormatError("seek past end of data");
  offset_ = offset;
}

void ByteWriter::u16le(std::uint16_t v) {
  out_.push_back(std::uint8_t(v));
  out_.push_back(std::uint8_t(v >> 8));
}

void ByteWriter::u32le(std::uint32_t v) {
  out_.push_back(std::uint8_t(v));
  out_.push_back(std::uint8_t(v >> 8));
  out_.push_back(std::uint8_t(v >> 16));
  out_.push_back(std::uint8_t(v >> 24));
}

void ByteWriter::f32le(float v) { u32le(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::f64le(double v) {
  std::uint64_t raw = std::bit_cast<std::uint64_t>(v);
  u32le(std::uint32_t(raw));
  u32le(std::uint32_t(raw >> 32));
}

void ByteWriter::ascii(std::string_view s) {
  out_.insert(out_.end(), s.begin(), s.end());
}

void ByteWriter::fill(std::size_t n, std::uint8_t v) { out_.insert(out_.end(), n, v); }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename to " + path.string() + " failed: " + ec.message());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace fmrifuse
