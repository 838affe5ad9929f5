#include "aa/dataset_io.hpp"

#include "aa/digest.hpp"
#include "aa/errors.hpp"
#include "aa/file_util.hpp"

#include <algorithm>
#include <cmath>

namespace aa::eventgen {

using nlohmann::json;

std::filesystem::path container_path(const std::filesystem::path& stem) {
    auto p = stem;
    p += ".aajd";
    return p;
}

std::filesystem::path sidecar_path(const std::filesystem::path& stem) {
    auto p = stem;
    p += ".json";
    return p;
}

std::string encode_dataset(const Dataset& ds) {
    if (ds.classes.size() > 0xFFFF || ds.images.size() > 0xFFFFFFFFu)
        throw ConfigError("encode_dataset: dataset too large for container format");
    ByteWriter w;
    w.bytes("AAJD");
    w.u16(kDatasetVersion);
    w.u16(static_cast<std::uint16_t>(ds.height));
    w.u16(static_cast<std::uint16_t>(ds.width));
    w.u16(static_cast<std::uint16_t>(ds.classes.size()));
    for (const auto& name : ds.classes) {
        if (name.size() > 0xFFFF) throw ConfigError("encode_dataset: class name too long");
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
    }
    w.u32(static_cast<std::uint32_t>(ds.images.size()));
    for (const auto& im : ds.images) {
        w.u16(static_cast<std::uint16_t>(ds.class_index(im.label)));
        for (float v : im.pixels) w.f32(v);
    }
    return w.take();
}

Dataset decode_dataset(std::string_view bytes) {
    ByteReader r(bytes);
    if (r.bytes(4) != "AAJD") throw DataError("dataset container: bad magic");
    const auto version = r.u16();
    if (version != kDatasetVersion)
        throw DataError("dataset container: unsupported version " + std::to_string(version));
    Dataset ds;
    ds.height = r.u16();
    ds.width = r.u16();
    const auto n_classes = r.u16();
    for (std::uint16_t i = 0; i < n_classes; ++i) {
        const auto len = r.u16();
        ds.classes.emplace_back(r.bytes(len));
    }
    const auto n_images = r.u32();
    const auto n_pixels = static_cast<std::size_t>(ds.height) * ds.width;
    ds.images.reserve(n_images);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        JetImage im;
        const auto label = r.u16();
        if (label >= ds.classes.size()) throw DataError("dataset container: label id out of range");
        im.label = ds.classes[label];
        im.height = ds.height;
        im.width = ds.width;
        im.pixels.resize(n_pixels);
        double total = 0.0;
        for (auto& v : im.pixels) {
            v = r.f32();
            total += v;
        }
        im.total_energy = total;
        ds.images.push_back(std::move(im));
    }
    if (!r.at_end()) throw DataError("dataset container: trailing bytes");
    return ds;
}

void save_dataset(const Dataset& ds, const GenerationInfo& info, const std::filesystem::path& stem) {
    const std::string bytes = encode_dataset(ds);
    write_file(container_path(stem), bytes);

    json counts = json::object();
    for (const auto& c : ds.classes) counts[c] = ds.count(c);
    json side = {
        {"format", "AAJD"},
        {"version", kDatasetVersion},
        {"container", container_path(stem).filename().string()},
        {"container_sha256", sha256_hex(bytes)},
        {"seed", ds.seed},
        {"height", ds.height},
        {"width", ds.width},
        {"classes", ds.classes},
        {"counts", counts},
        {"per_class_count", info.per_class_count},
        {"split_fraction", info.split_fraction},
        {"generator", info.config},
        {"specs", info.specs},
        {"splits", ds.splits},
    };
    write_file(sidecar_path(stem), side.dump(2) + "\n");
}

json load_sidecar(const std::filesystem::path& stem) {
    const std::string text = read_file(sidecar_path(stem));
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError("dataset sidecar " + sidecar_path(stem).string() + ": " + e.what());
    }
}

Dataset load_dataset(const std::filesystem::path& stem) {
    const json side = load_sidecar(stem);
    const std::string bytes = read_file(container_path(stem));
    if (side.value("container_sha256", "") != sha256_hex(bytes))
        throw DataError("dataset " + container_path(stem).string() + ": digest does not match sidecar");
    Dataset ds = decode_dataset(bytes);
    try {
        ds.seed = side.at("seed").get<std::uint64_t>();
        ds.splits = side.at("splits").get<std::map<std::string, std::vector<std::size_t>>>();
    } catch (const json::exception& e) {
        throw DataError("dataset sidecar: " + std::string(e.what()));
    }
    ds.validate();
    return ds;
}

void write_pgm(const std::vector<double>& grid, int height, int width, const std::filesystem::path& path) {
    if (grid.size() != static_cast<std::size_t>(height) * width) throw DimensionError("write_pgm: grid size mismatch");
    const double peak = grid.empty() ? 0.0 : *std::max_element(grid.begin(), grid.end());
    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n65535\n";
    for (double v : grid) {
        const double scaled = peak > 0.0 ? std::clamp(v / peak, 0.0, 1.0) * 65535.0 : 0.0;
        const auto s = static_cast<std::uint16_t>(std::lround(scaled));
        out.push_back(static_cast<char>(s >> 8));
        out.push_back(static_cast<char>(s & 0xFF));
    }
    write_file(path, out);
}

void write_grid_csv(const std::vector<double>& grid, int height, int width, const std::filesystem::path& path) {
    if (grid.size() != static_cast<std::size_t>(height) * width)
        throw DimensionError("write_grid_csv: grid size mismatch");
    std::string out;
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            if (c) out.push_back(',');
            out += format_double(grid[static_cast<std::size_t>(r) * width + c]);
        }
        out.push_back('\n');
    }
    write_file(path, out);
}

void to_json(json& j, const ClassSpec& s) {
    j = json{{"name", s.name},
             {"prong_count", s.prong_count},
             {"prong_spread", s.prong_spread},
             {"energy_profile", s.energy_profile},
             {"displacement_scale", s.displacement_scale},
             {"noise_level", s.noise_level}};
}

void from_json(const json& j, ClassSpec& s) {
    j.at("name").get_to(s.name);
    j.at("prong_count").get_to(s.prong_count);
    j.at("prong_spread").get_to(s.prong_spread);
    j.at("energy_profile").get_to(s.energy_profile);
    s.displacement_scale = j.value("displacement_scale", 0.0);
    s.noise_level = j.value("noise_level", 0.0);
}

void to_json(json& j, const GeneratorConfig& c) {
    j = json{{"height", c.height}, {"width", c.width}, {"energy_min", c.energy_min}, {"energy_max", c.energy_max}};
}

void from_json(const json& j, GeneratorConfig& c) {
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.energy_min = j.value("energy_min", c.energy_min);
    c.energy_max = j.value("energy_max", c.energy_max);
}

}  // namespace aa::eventgen
