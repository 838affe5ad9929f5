#include "aa/eventgen.hpp"

#include "aa/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace aa::eventgen {

namespace {

[[noreturn]] void spec_error(const ClassSpec& spec, const std::string& field, const std::string& msg) {
    throw ConfigError("ClassSpec '" + spec.name + "': " + field + " " + msg);
}

}  // namespace

void ClassSpec::validate() const {
    if (name.empty()) spec_error(*this, "name", "must not be empty");
    if (prong_count < 1) spec_error(*this, "prong_count", "must be >= 1");
    if (!(prong_spread > 0.0) || !std::isfinite(prong_spread))
        spec_error(*this, "prong_spread", "must be finite and > 0");
    if (energy_profile.size() != static_cast<std::size_t>(prong_count))
        spec_error(*this, "energy_profile", "must have prong_count entries");
    for (double a : energy_profile)
        if (!(a > 0.0) || !std::isfinite(a)) spec_error(*this, "energy_profile", "entries must be finite and > 0");
    if (!(displacement_scale >= 0.0) || !std::isfinite(displacement_scale))
        spec_error(*this, "displacement_scale", "must be finite and >= 0");
    if (!(noise_level >= 0.0) || !std::isfinite(noise_level))
        spec_error(*this, "noise_level", "must be finite and >= 0");
}

void GeneratorConfig::validate() const {
    if (height < 4 || width < 4 || height > 65535 || width > 65535)
        throw ConfigError("GeneratorConfig: grid must be between 4 and 65535 cells per side");
    if (!(energy_min > 0.0) || !(energy_max > energy_min) || !std::isfinite(energy_max))
        throw ConfigError("GeneratorConfig: require 0 < energy_min < energy_max");
}

ProngLayout sample_layout(const ClassSpec& spec, const GeneratorConfig& config, Rng& rng) {
    spec.validate();
    config.validate();

    ProngLayout layout;
    // Keep the drawn energy strictly inside the range so float rounding of the
    // rendered pixels cannot push the cached total across a bound.
    const double span = config.energy_max - config.energy_min;
    std::uniform_real_distribution<double> energy_dist(config.energy_min + 1e-6 * span,
                                                       config.energy_max - 1e-6 * span);
    layout.total_energy = energy_dist(rng);

    std::vector<double> shares(spec.energy_profile.size());
    double share_sum = 0.0;
    for (std::size_t k = 0; k < shares.size(); ++k) {
        std::gamma_distribution<double> gamma(spec.energy_profile[k], 1.0);
        shares[k] = gamma(rng);
        share_sum += shares[k];
    }
    if (!(share_sum > 0.0)) {
        std::fill(shares.begin(), shares.end(), 1.0);
        share_sum = static_cast<double>(shares.size());
    }

    const double axis_row = 0.5 * (config.height - 1);
    const double axis_col = 0.5 * (config.width - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double two_pi = 2.0 * std::numbers::pi;

    const int n = spec.prong_count;
    layout.prongs.resize(static_cast<std::size_t>(n));
    if (n == 1) {
        // Uniform in the disk of radius displacement_scale.
        const double r = spec.displacement_scale * std::sqrt(unit(rng));
        const double theta = two_pi * unit(rng);
        layout.prongs[0].row = axis_row + r * std::sin(theta);
        layout.prongs[0].col = axis_col + r * std::cos(theta);
    } else {
        // Evenly spaced directions with a random overall rotation, small
        // angular jitter and radii in [0.25, 1] * displacement_scale.
        const double gap = two_pi / n;
        const double theta0 = two_pi * unit(rng);
        for (int k = 0; k < n; ++k) {
            const double theta = theta0 + gap * k + gap * 0.1 * (2.0 * unit(rng) - 1.0);
            const double r = spec.displacement_scale * (0.25 + 0.75 * unit(rng));
            layout.prongs[static_cast<std::size_t>(k)].row = axis_row + r * std::sin(theta);
            layout.prongs[static_cast<std::size_t>(k)].col = axis_col + r * std::cos(theta);
        }
    }
    for (std::size_t k = 0; k < layout.prongs.size(); ++k) {
        auto& p = layout.prongs[k];
        p.row = std::clamp(p.row, 0.0, config.height - 1.0);
        p.col = std::clamp(p.col, 0.0, config.width - 1.0);
        p.energy = layout.total_energy * shares[k] / share_sum;
    }
    return layout;
}

JetImage render_image(const ClassSpec& spec, const ProngLayout& layout,
                      const GeneratorConfig& config, Rng& rng) {
    const auto h = static_cast<std::size_t>(config.height);
    const auto w = static_cast<std::size_t>(config.width);
    std::vector<double> grid(h * w, 0.0);
    std::vector<double> blob(h * w);

    const double inv_two_var = 1.0 / (2.0 * spec.prong_spread * spec.prong_spread);
    for (const auto& p : layout.prongs) {
        double norm = 0.0;
        for (std::size_t r = 0; r < h; ++r) {
            const double dr = static_cast<double>(r) - p.row;
            for (std::size_t c = 0; c < w; ++c) {
                const double dc = static_cast<double>(c) - p.col;
                const double v = std::exp(-(dr * dr + dc * dc) * inv_two_var);
                blob[r * w + c] = v;
                norm += v;
            }
        }
        // The blob is normalized on the grid, so a truncated edge prong keeps its energy.
        const double scale = p.energy / norm;
        for (std::size_t i = 0; i < grid.size(); ++i) grid[i] += scale * blob[i];
    }

    if (spec.noise_level > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.noise_level);
        for (double& v : grid) v = std::max(0.0, v + noise(rng));
    }

    double sum = 0.0;
    for (double v : grid) sum += v;
    const double rescale = layout.total_energy / sum;

    JetImage image;
    image.height = config.height;
    image.width = config.width;
    image.label = spec.name;
    image.pixels.resize(grid.size());
    double total = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        image.pixels[i] = static_cast<float>(grid[i] * rescale);
        total += image.pixels[i];
    }
    image.total_energy = total;
    return image;
}

JetImage generate_image(const ClassSpec& spec, Rng& rng, const GeneratorConfig& config) {
    const ProngLayout layout = sample_layout(spec, config, rng);
    return render_image(spec, layout, config, rng);
}

std::size_t Dataset::class_index(const std::string& name) const {
    auto it = std::find(classes.begin(), classes.end(), name);
    if (it == classes.end()) throw LookupError("unknown class '" + name + "'");
    return static_cast<std::size_t>(it - classes.begin());
}

bool Dataset::has_class(const std::string& name) const {
    return std::find(classes.begin(), classes.end(), name) != classes.end();
}

std::size_t Dataset::count(const std::string& name) const {
    return static_cast<std::size_t>(
        std::count_if(images.begin(), images.end(), [&](const JetImage& im) { return im.label == name; }));
}

const std::vector<std::size_t>& Dataset::split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw LookupError("dataset has no split '" + name + "'");
    return it->second;
}

std::vector<std::size_t> Dataset::split_of_class(const std::string& split_name,
                                                 const std::string& class_name) const {
    class_index(class_name);
    std::vector<std::size_t> out;
    for (std::size_t i : split(split_name))
        if (images[i].label == class_name) out.push_back(i);
    return out;
}

Dataset Dataset::subset(const std::vector<std::string>& keep) const {
    for (const auto& k : keep) class_index(k);
    Dataset out;
    out.height = height;
    out.width = width;
    out.classes = keep;
    out.seed = seed;
    std::vector<std::size_t> remap(images.size(), SIZE_MAX);
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (std::find(keep.begin(), keep.end(), images[i].label) != keep.end()) {
            remap[i] = out.images.size();
            out.images.push_back(images[i]);
        }
    }
    for (const auto& [name, idx] : splits) {
        auto& dst = out.splits[name];
        for (std::size_t i : idx)
            if (remap[i] != SIZE_MAX) dst.push_back(remap[i]);
    }
    return out;
}

void Dataset::validate() const {
    std::set<std::string> names(classes.begin(), classes.end());
    if (names.size() != classes.size()) throw DataError("dataset: duplicate class names");
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& im = images[i];
        if (!names.count(im.label))
            throw DataError("dataset: image " + std::to_string(i) + " has undeclared label '" + im.label + "'");
        if (im.height != height || im.width != width ||
            im.pixels.size() != static_cast<std::size_t>(height) * width)
            throw DataError("dataset: image " + std::to_string(i) + " has wrong shape");
        double sum = 0.0;
        for (float v : im.pixels) {
            if (!(v >= 0.0f) || !std::isfinite(v))
                throw DataError("dataset: image " + std::to_string(i) + " has a negative or non-finite pixel");
            sum += v;
        }
        if (std::abs(sum - im.total_energy) > 1e-9 * std::max(1.0, std::abs(sum)))
            throw DataError("dataset: image " + std::to_string(i) + " total_energy does not match pixels");
    }
    std::vector<int> seen(images.size(), 0);
    for (const auto& [name, idx] : splits)
        for (std::size_t i : idx) {
            if (i >= images.size()) throw DataError("dataset: split '" + name + "' index out of range");
            if (seen[i]++) throw DataError("dataset: splits overlap at index " + std::to_string(i));
        }
    if (!splits.empty())
        for (std::size_t i = 0; i < seen.size(); ++i)
            if (!seen[i]) throw DataError("dataset: index " + std::to_string(i) + " not in any split");
}

Dataset generate_dataset(const std::vector<ClassSpec>& specs, int per_class_count,
                         double split_fraction, std::uint64_t seed, const GeneratorConfig& config) {
    if (specs.empty()) throw ConfigError("generate_dataset: empty class spec list");
    if (per_class_count < 1) throw ConfigError("generate_dataset: per_class_count must be >= 1");
    if (!(split_fraction >= 0.0 && split_fraction <= 1.0))
        throw ConfigError("generate_dataset: split_fraction must be in [0, 1]");
    config.validate();
    std::set<std::string> names;
    for (const auto& s : specs) {
        s.validate();
        if (!names.insert(s.name).second) throw ConfigError("generate_dataset: duplicate class '" + s.name + "'");
    }

    Dataset ds;
    ds.height = config.height;
    ds.width = config.width;
    ds.seed = seed;
    const auto n = static_cast<std::size_t>(per_class_count);
    const auto n_train = static_cast<std::size_t>(std::llround(split_fraction * per_class_count));
    ds.images.reserve(specs.size() * n);
    auto& train = ds.splits["train"];
    auto& test = ds.splits["test"];
    for (std::size_t ci = 0; ci < specs.size(); ++ci) {
        ds.classes.push_back(specs[ci].name);
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t index = ci * n + j;
            Rng rng = make_rng(seed, "image", index);
            ds.images.push_back(generate_image(specs[ci], rng, config));
            (j < n_train ? train : test).push_back(index);
        }
    }
    return ds;
}

std::vector<double> average_image(const Dataset& ds, const std::string& class_name) {
    ds.class_index(class_name);
    std::vector<double> mean(static_cast<std::size_t>(ds.height) * ds.width, 0.0);
    std::size_t n = 0;
    for (const auto& im : ds.images) {
        if (im.label != class_name) continue;
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += im.pixels[i];
        ++n;
    }
    if (n == 0) throw LookupError("average_image: class '" + class_name + "' has no images");
    for (double& v : mean) v /= static_cast<double>(n);
    return mean;
}

std::vector<float> normalized_pixels(const JetImage& image) {
    std::vector<float> out(image.pixels.size());
    const double inv = image.total_energy > 0.0 ? 1.0 / image.total_energy : 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(image.pixels[i] * inv);
    return out;
}

std::vector<ClassSpec> default_specs() {
    //        name   prongs spread  profile                  displacement noise
    return {
        {"QCD", 1, 2.4, {1.0}, 1.5, 0.2},
        {"W", 2, 1.3, {6.0, 6.0}, 4.0, 0.2},
        {"Top", 3, 1.6, {1.0, 1.0, 1.0}, 4.0, 0.2},
        {"R2", 2, 1.0, {3.0, 3.0}, 6.5, 0.2},
        {"R3", 3, 1.0, {8.0, 3.0, 1.5}, 7.0, 0.2},
        {"R4", 4, 1.0, {4.0, 4.0, 4.0, 4.0}, 6.5, 0.2},
        {"EFT", 2, 1.5, {8.0, 2.0}, 8.0, 0.2},
    };
}

ClassSpec default_spec(const std::string& name) {
    for (auto& s : default_specs())
        if (s.name == name) return s;
    throw LookupError("no default spec for class '" + name + "'");
}

}  // namespace aa::eventgen
