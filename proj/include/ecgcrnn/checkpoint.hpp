#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgcrnn/nn.hpp"

namespace ecgcrnn::nn {

/// Checkpoint layout:
///   8 bytes   magic "ECGCRNN1"
///   4 bytes   metadata length L, little-endian u32
///   L bytes   UTF-8 JSON metadata (architecture, param_count, plus caller fields)
///   8*P bytes parameters as little-endian f64, canonical ModelParams order
struct Checkpoint {
  ModelParams params;
  nlohmann::json metadata;
};

inline constexpr char kCheckpointMagic[8] = {'E', 'C', 'G', 'C', 'R', 'N', 'N', '1'};

nlohmann::json architecture_to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);

std::vector<std::byte> encode_checkpoint(const ModelParams& params, nlohmann::json metadata);
Checkpoint decode_checkpoint(std::span<const std::byte> bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, nlohmann::json metadata);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ecgcrnn::nn
