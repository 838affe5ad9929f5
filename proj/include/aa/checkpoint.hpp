#pragma once

// Checkpoint = JSON header <name>.json plus a little-endian f32 blob
// <name>.bin holding flat_view(). The header records the blob's SHA-256.

#include "aa/network.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace aa::nn {

struct CheckpointMeta {
    std::uint64_t seed = 0;
    int epoch = 0;
    std::string phase;       // "prior", "aa", ...
    std::string optimizer;   // "adam" | "sgd"
    std::uint64_t optimizer_steps = 0;
    nlohmann::json extra = nlohmann::json::object();
};

struct Checkpoint {
    Params params;
    CheckpointMeta meta;
    std::string blob_sha256;
};

// path is the header (.json); the blob goes next to it with extension .bin.
// Returns the blob digest.
std::string save_checkpoint(const std::filesystem::path& path, const Params& params, const CheckpointMeta& meta);
// Throws DataError when the blob digest does not match the header.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Digest of the blob that would be written for these parameters.
std::string params_digest(const Params& params);

void to_json(nlohmann::json& j, const ConvSpec& s);
void from_json(const nlohmann::json& j, ConvSpec& s);
void to_json(nlohmann::json& j, const Architecture& a);
void from_json(const nlohmann::json& j, Architecture& a);

}  // namespace aa::nn
