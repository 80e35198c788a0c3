#pragma once

// Binary model checkpoints: magic, format version, configuration as JSON,
// optimizer step, then named float64 little-endian tensors. Adam moments are
// stored as "<name>@m" and "<name>@v".

#include <filesystem>
#include <string>

#include "cbct/network.hpp"

namespace cbct {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const ModelState& state);
/// Throws IoError on unreadable or truncated files and SchemaError on a
/// mismatched magic, version or parameter set.
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace cbct
