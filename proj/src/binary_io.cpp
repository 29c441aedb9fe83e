#include "ncal/binary_io.hpp"

#include <bit>
#include <cstring>

namespace ncal {

namespace {

template <typename T>
void to_le(T v, unsigned char* out) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out[i] = static_cast<unsigned char>(v >> (8 * i));
}

template <typename T>
T from_le(const unsigned char* in) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in[i]) << (8 * i);
  return v;
}

}  // namespace

BinaryWriter::BinaryWriter(const std::string& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw IoError("cannot open '" + path + "' for writing");
}

void BinaryWriter::bytes(const unsigned char* data, std::size_t n) {
  out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out_) throw IoError("write failed on '" + path_ + "'");
}

void BinaryWriter::magic(std::string_view tag) {
  bytes(reinterpret_cast<const unsigned char*>(tag.data()), tag.size());
}

void BinaryWriter::u8(std::uint8_t v) { bytes(&v, 1); }

void BinaryWriter::u16(std::uint16_t v) {
  unsigned char b[2];
  to_le(v, b);
  bytes(b, 2);
}

void BinaryWriter::u32(std::uint32_t v) {
  unsigned char b[4];
  to_le(v, b);
  bytes(b, 4);
}

void BinaryWriter::u64(std::uint64_t v) {
  unsigned char b[8];
  to_le(v, b);
  bytes(b, 8);
}

void BinaryWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::f64s(std::span<const double> values) {
  for (double v : values) f64(v);
}

void BinaryWriter::close() {
  out_.flush();
  if (!out_) throw IoError("flush failed on '" + path_ + "'");
  out_.close();
}

BinaryReader::BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open '" + path + "' for reading");
}

void BinaryReader::bytes(unsigned char* data, std::size_t n) {
  in_.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n));
  if (in_.gcount() != static_cast<std::streamsize>(n)) {
    throw IoError("unexpected end of file in '" + path_ + "'");
  }
}

void BinaryReader::expect_magic(std::string_view tag) {
  std::string got(tag.size(), '\0');
  bytes(reinterpret_cast<unsigned char*>(got.data()), got.size());
  if (got != tag) {
    throw IoError("'" + path_ + "' is not a " + std::string(tag) + " file");
  }
}

std::uint8_t BinaryReader::u8() {
  unsigned char b;
  bytes(&b, 1);
  return b;
}

std::uint16_t BinaryReader::u16() {
  unsigned char b[2];
  bytes(b, 2);
  return from_le<std::uint16_t>(b);
}

std::uint32_t BinaryReader::u32() {
  unsigned char b[4];
  bytes(b, 4);
  return from_le<std::uint32_t>(b);
}

std::uint64_t BinaryReader::u64() {
  unsigned char b[8];
  bytes(b, 8);
  return from_le<std::uint64_t>(b);
}

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

void BinaryReader::f64s(std::span<double> out) {
  for (double& v : out) v = f64();
}

bool BinaryReader::at_end() { return in_.peek() == std::ifstream::traits_type::eof(); }

}  // namespace ncal
