#pragma once

// FOLKCKPT files:
//   "FOLKCKPT" | u32 version | u64 manifest length | UTF-8 JSON manifest |
//   little-endian f32 payload (student, teacher, adam.m, adam.v, center)
// The manifest lists every section's names and shapes in payload order.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "folk/config.hpp"
#include "folk/trainer.hpp"

namespace folk {
inline namespace FOLK_PRECISION_NS {
namespace checkpoint {

inline constexpr std::uint32_t kVersion = 1;

void save(const std::filesystem::path& path, const trainer::TrainState& state, const FolkConfig& cfg);

struct Loaded {
  FolkConfig config;
  trainer::TrainState state;
  nlohmann::json manifest;
};

// Throws DecodeError on bad magic, unknown version, malformed manifest or
// "payload length mismatch".
Loaded load(const std::filesystem::path& path);

// Header and manifest only; the payload length is still verified.
nlohmann::json read_manifest(const std::filesystem::path& path);

}  // namespace checkpoint
}  // namespace FOLK_PRECISION_NS
}  // namespace folk
