#ifndef NCAL_BINARY_IO_HPP_
#define NCAL_BINARY_IO_HPP_

#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ncal {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Little-endian binary writer used by the dataset and checkpoint formats.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path);

  void magic(std::string_view tag);
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  void close();

 private:
  void bytes(const unsigned char* data, std::size_t n);

  std::string path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path);

  void expect_magic(std::string_view tag);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f64s(std::span<double> out);
  bool at_end();

 private:
  void bytes(unsigned char* data, std::size_t n);

  std::string path_;
  std::ifstream in_;
};

}  // namespace ncal

#endif  // NCAL_BINARY_IO_HPP_
