#pragma once

// Experiment configuration and the on-disk layout of one experiment:
//
//   <out>/config.json      echoed configuration (re-runnable)
//   <out>/datasets/        normal.{aajd,json}, anomaly.{aajd,json}, avg_<class>.pgm
//   <out>/checkpoints/     prior.{json,bin}, aa.{json,bin}
//   <out>/scores/          <model>_<dataset>.{csv,json}
//   <out>/reports/         run reports, loss curves, eval/scan output, report.json
//   <out>/ablation/        sweep.json, saturation.csv
//
// Every random stream is derived from `seed` with a fixed tag:
// "dataset-normal", "dataset-anomaly", "train".

#include "aa/analysis.hpp"
#include "aa/eventgen.hpp"
#include "aa/network.hpp"
#include "aa/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace aa::cli {

namespace fs = std::filesystem;

struct AnalysisSettings {
    std::vector<double> deltas{0.08, 0.1, 0.12};
    std::optional<double> step;          // default delta / 10
    std::string model = "aa";            // checkpoint whose scores are scanned
    std::string split = "test";
    std::string axis_class = "Top";      // scanned probability
    std::string anomaly = "EFT";
    std::vector<std::string> backgrounds{"QCD", "Top"};
    analysis::CrossSectionTable cross_sections{{"QCD", analysis::kQcdCrossSection},
                                               {"Top", analysis::kTopCrossSectionPlaceholder}};
    std::vector<double> luminosities{100, 300, 500, 1000, 1500, 2000, 2500, 3000, 4000, 6000};
    int histogram_bins = 50;
};

struct AblationSettings {
    std::vector<std::string> order{"W", "R4", "EFT", "R3", "R2"};
    std::optional<std::string> held_out;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    fs::path out = "experiment";
    eventgen::GeneratorConfig generator;
    std::vector<eventgen::ClassSpec> normal;
    std::vector<eventgen::ClassSpec> anomalies;
    int per_class_count = eventgen::kDeskEventsPerClass;
    int anomaly_per_class_count = 1000;
    double split_fraction = 0.8;
    std::optional<nn::Architecture> architecture;  // default desk_default(K)
    train::TrainConfig train;
    AblationSettings ablation;
    AnalysisSettings analysis;

    nn::Architecture resolved_architecture() const;
    std::vector<std::string> normal_names() const;
    std::vector<std::string> anomaly_names() const;
    void validate() const;  // throws ConfigError
};

// Class entries may be a bare name (a built-in class) or a full spec object.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const fs::path& path);
// The echo leaves out `out`; the directory holding it is the experiment.
nlohmann::json config_echo(const ExperimentConfig& c);
std::string config_digest(const ExperimentConfig& c);

struct Layout {
    fs::path root;

    fs::path config() const { return root / "config.json"; }
    fs::path datasets() const { return root / "datasets"; }
    fs::path checkpoints() const { return root / "checkpoints"; }
    fs::path scores() const { return root / "scores"; }
    fs::path reports() const { return root / "reports"; }
    fs::path ablation() const { return root / "ablation"; }
    fs::path dataset_stem(const std::string& which) const { return datasets() / which; }
    fs::path checkpoint(const std::string& phase) const { return checkpoints() / (phase + ".json"); }
};

// Advisory exclusive lock on <root>/.lock, released on destruction.
class ExperimentLock {
public:
    explicit ExperimentLock(const fs::path& root);
    ~ExperimentLock();
    ExperimentLock(const ExperimentLock&) = delete;
    ExperimentLock& operator=(const ExperimentLock&) = delete;

private:
    int fd_ = -1;
};

// Path relative to the experiment root, '/'-separated.
std::string relative(const Layout& layout, const fs::path& p);

}  // namespace aa::cli
