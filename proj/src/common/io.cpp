#include "uq/common/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "uq/common/error.hpp"

namespace uq {

namespace {

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> buf;
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> buf;
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!in) fail(ErrorCode::kFormat, "unexpected end of binary stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void BinaryWriter::u32(std::uint32_t v) {
  put_le(out_, v);
  written_ += 4;
}

void BinaryWriter::u64(std::uint64_t v) {
  put_le(out_, v);
  written_ += 8;
}

void BinaryWriter::raw(std::string_view bytes) {
  out_.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  written_ += bytes.size();
}

void BinaryWriter::f32(std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out_.write(reinterpret_cast<const char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float v : values) put_le(out_, std::bit_cast<std::uint32_t>(v));
  }
  written_ += values.size() * sizeof(float);
  if (!out_) fail(ErrorCode::kIo, "binary write failed");
}

std::uint32_t BinaryReader::u32() { return get_le<std::uint32_t>(in_); }
std::uint64_t BinaryReader::u64() { return get_le<std::uint64_t>(in_); }

std::string BinaryReader::raw(std::size_t n) {
  std::string s(n, '\0');
  in_.read(s.data(), static_cast<std::streamsize>(n));
  if (!in_) fail(ErrorCode::kFormat, "unexpected end of binary stream");
  return s;
}

void BinaryReader::f32(std::span<float> out) {
  if constexpr (std::endian::native == std::endian::little) {
    in_.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * sizeof(float)));
    if (!in_) fail(ErrorCode::kFormat, "unexpected end of binary stream");
  } else {
    for (float& v : out) v = std::bit_cast<float>(get_le<std::uint32_t>(in_));
  }
}

std::vector<float> BinaryReader::f32(std::size_t n) {
  std::vector<float> v(n);
  f32(std::span<float>(v));
  return v;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      fail(ErrorCode::kIo, "sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md.data(), &len);
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kDigits[md[i] >> 4]);
      out.push_back(kDigits[md[i] & 0xF]);
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view data) {
  Sha256 h;
  h.update(data.data(), data.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

}  // namespace uq
