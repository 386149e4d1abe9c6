#pragma once

#include <filesystem>

#include "eyecue/model.hpp"

namespace eyecue {

inline constexpr std::uint32_t kCheckpointSchemaVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ParamStore<float> params;
};

// Layout (all little-endian):
//   "EYECUECK"  u32 schema_version  u32 config_len  config JSON bytes
//   u32 array_count
//   per array: u32 name_len, name, u32 rank (=2), u64 rows, u64 cols,
//              rows*cols float32, row-major
std::string serialize_checkpoint(const ModelConfig& config, const ParamStore<float>& params);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ParamStore<float>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace eyecue
