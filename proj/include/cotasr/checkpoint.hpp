#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cotasr/config.hpp"
#include "cotasr/model.hpp"

namespace cotasr::checkpoint {

// Layout (all integers little-endian):
//   8 bytes   magic "COTASRCK"
//   u32       format version
//   u64 + str model config echo (key = value lines)
//   u64 + str metadata (key = value lines, e.g. mode)
//   u64       tensor count
//   per tensor: u32 name length, name, u64 rows, u64 cols, rows*cols f64
inline constexpr char kMagic[8] = {'C', 'O', 'T', 'A', 'S', 'R', 'C', 'K'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct Checkpoint {
  model::CotAsrModel model;
  config::KeyValues metadata;
};

std::string serialize(const model::CotAsrModel& model, const config::KeyValues& metadata = {});
// CheckpointError on bad magic, version mismatch, truncation, trailing
// bytes, or tensors that do not match the configured shapes.
Checkpoint deserialize(std::string_view bytes);

// IoError when the file cannot be written or read.
void save(const std::filesystem::path& path, const model::CotAsrModel& model,
          const config::KeyValues& metadata = {});
Checkpoint load(const std::filesystem::path& path);

}  // namespace cotasr::checkpoint
