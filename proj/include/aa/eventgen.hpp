#pragma once

// Parametric toy jet-image generator. Each class is a set of Gaussian
// "prongs" whose energies are shared through a Dirichlet draw; the output is
// an H x W calorimeter grid in angular coordinates spanning [-1, 1]^2.

#include "aa/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace aa::eventgen {

struct ClassSpec {
    std::string name;
    int prong_count = 1;
    double prong_spread = 2.0;           // Gaussian sigma, grid units
    std::vector<double> energy_profile;  // Dirichlet concentrations, one per prong
    double displacement_scale = 0.0;     // prong distance from the jet axis, grid units
    double noise_level = 0.0;            // per-cell Gaussian noise sigma, GeV

    void validate() const;
};

struct GeneratorConfig {
    int height = 32;
    int width = 32;
    double energy_min = 750.0;  // GeV, stands in for the pT selection
    double energy_max = 1500.0;

    void validate() const;
};

struct JetImage {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // row-major, GeV
    std::string label;
    double total_energy = 0.0;  // sum of pixels

    float at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

struct Prong {
    double row = 0.0;  // continuous pixel coordinates; pixel (r, c) has its center at (r, c)
    double col = 0.0;
    double energy = 0.0;
};

struct ProngLayout {
    std::vector<Prong> prongs;
    double total_energy = 0.0;
};

// The two halves of generate_image, exposed so tests can see where the
// prongs were placed.
ProngLayout sample_layout(const ClassSpec& spec, const GeneratorConfig& config, Rng& rng);
JetImage render_image(const ClassSpec& spec, const ProngLayout& layout,
                      const GeneratorConfig& config, Rng& rng);

JetImage generate_image(const ClassSpec& spec, Rng& rng, const GeneratorConfig& config = {});

struct Dataset {
    int height = 0;
    int width = 0;
    std::vector<std::string> classes;  // declared class set, label ids index into it
    std::vector<JetImage> images;
    std::map<std::string, std::vector<std::size_t>> splits;  // "train", "test"
    std::uint64_t seed = 0;

    std::size_t class_index(const std::string& name) const;  // throws LookupError
    bool has_class(const std::string& name) const;
    std::size_t count(const std::string& name) const;
    const std::vector<std::size_t>& split(const std::string& name) const;
    // Indices of a split restricted to one class, in dataset order.
    std::vector<std::size_t> split_of_class(const std::string& split_name,
                                            const std::string& class_name) const;

    // Keeps only the named classes (in the given order) and remaps splits.
    Dataset subset(const std::vector<std::string>& keep) const;

    // Checks every invariant; throws DataError on violation.
    void validate() const;
};

// Per-class stratified split: the first round(n * split_fraction) images of
// each class go to "train". Image i draws from the substream (seed, i).
Dataset generate_dataset(const std::vector<ClassSpec>& specs, int per_class_count,
                         double split_fraction, std::uint64_t seed,
                         const GeneratorConfig& config = {});

std::vector<double> average_image(const Dataset& ds, const std::string& class_name);

// Network input: pixels scaled to unit total energy.
std::vector<float> normalized_pixels(const JetImage& image);

// QCD, W, Top, R2, R3, R4, EFT.
std::vector<ClassSpec> default_specs();
ClassSpec default_spec(const std::string& name);

inline constexpr int kPaperEventsPerClass = 50000;
inline constexpr int kDeskEventsPerClass = 5000;

}  // namespace aa::eventgen
