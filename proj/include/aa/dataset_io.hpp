#pragma once

// Dataset container ("AAJD", little-endian):
//
//   char[4]  magic "AAJD"
//   u16      version (1)
//   u16      height, u16 width
//   u16      class count, then per class: u16 byte length + UTF-8 name
//   u32      image count
//   records: u16 label id, f32 pixels[height * width] row-major
//
// The JSON sidecar carries the generator specs, seed, per-class counts,
// split indices and the SHA-256 of the container.

#include "aa/eventgen.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace aa::eventgen {

inline constexpr std::uint16_t kDatasetVersion = 1;

struct GenerationInfo {
    std::vector<ClassSpec> specs;
    GeneratorConfig config;
    int per_class_count = 0;
    double split_fraction = 0.0;
};

std::string encode_dataset(const Dataset& ds);
// Splits are not part of the container; the result has none.
Dataset decode_dataset(std::string_view bytes);

// Writes <stem>.aajd and <stem>.json.
void save_dataset(const Dataset& ds, const GenerationInfo& info, const std::filesystem::path& stem);
// Reads both files and checks the container digest recorded in the sidecar.
Dataset load_dataset(const std::filesystem::path& stem);
nlohmann::json load_sidecar(const std::filesystem::path& stem);

std::filesystem::path container_path(const std::filesystem::path& stem);
std::filesystem::path sidecar_path(const std::filesystem::path& stem);

// 16-bit binary PGM (P5, maxval 65535, big-endian samples), scaled to the grid peak.
void write_pgm(const std::vector<double>& grid, int height, int width, const std::filesystem::path& path);
void write_grid_csv(const std::vector<double>& grid, int height, int width, const std::filesystem::path& path);

void to_json(nlohmann::json& j, const ClassSpec& s);
void from_json(const nlohmann::json& j, ClassSpec& s);
void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

}  // namespace aa::eventgen
