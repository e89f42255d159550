#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "omniseq/model.hpp"
#include "omniseq/registry.hpp"

namespace omniseq {

inline constexpr int kCheckpointFormatVersion = 1;

Json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const Json& j);

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::string variant;
  std::uint64_t seed = 0;
};

// Layout: one line of JSON header (format, format_version, config,
// catalog_size, seed, variant, and the name/shape of every parameter in
// ModelParams::ordered() order), then each parameter's values as raw
// little-endian IEEE-754 doubles, row-major, in that same order.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelParams& params, const std::string& variant, std::uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace omniseq
