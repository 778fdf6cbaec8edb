#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace uq::lm {

/// Shared checkpoint container: 4 magic bytes, u32 version, u32 config
/// length, UTF-8 JSON config, u64 float count, little-endian f32 payload.
inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
  std::string config;
  std::vector<float> payload;
};

void write_container(const std::filesystem::path& path, std::string_view magic, const std::string& config,
                     std::span<const float> payload);
/// Throws kFormat on a wrong magic, version, or a truncated file.
Container read_container(const std::filesystem::path& path, std::string_view magic);

}  // namespace uq::lm
