#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace uq {

/// Little-endian writer used by every binary container in the project.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void raw(std::string_view bytes);
  void f32(std::span<const float> values);
  void f32(float v) { f32(std::span<const float>(&v, 1)); }

  std::uint64_t bytes_written() const { return written_; }

 private:
  std::ostream& out_;
  std::uint64_t written_ = 0;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}

  std::uint32_t u32();
  std::uint64_t u64();
  std::string raw(std::size_t n);
  void f32(std::span<float> out);
  std::vector<float> f32(std::size_t n);

 private:
  std::istream& in_;
};

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
void write_text_file(const std::filesystem::path& path, std::string_view contents);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace uq
