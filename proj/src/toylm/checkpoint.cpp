#include "uq/toylm/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "uq/common/error.hpp"
#include "uq/common/io.hpp"

namespace uq::lm {

void write_container(const std::filesystem::path& path, std::string_view magic, const std::string& config,
                     std::span<const float> payload) {
  if (magic.size() != 4) fail(ErrorCode::kFormat, "container magic must be 4 bytes");
  std::ostringstream buf(std::ios::binary);
  BinaryWriter w(buf);
  w.raw(magic);
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(config.size()));
  w.raw(config);
  w.u64(payload.size());
  w.f32(payload);
  write_text_file(path, buf.str());
}

Container read_container(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open checkpoint " + path.string());
  BinaryReader r(in);
  const std::string got = r.raw(4);
  if (got != magic) fail(ErrorCode::kFormat, path.string() + ": expected magic " + std::string(magic) + ", found " + got);
  if (auto v = r.u32(); v != kContainerVersion) {
    fail(ErrorCode::kFormat, path.string() + ": unsupported container version " + std::to_string(v));
  }
  Container c;
  c.config = r.raw(r.u32());
  c.payload = r.f32(r.u64());
  return c;
}

}  // namespace uq::lm
