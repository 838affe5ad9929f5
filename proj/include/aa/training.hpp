#pragma once

// Two-phase training. The prior run fits the normal classes with one-hot
// cross entropy. The anomaly-awareness run continues from it with
//
//     loss = mean CE(normal batch) + lambda_aa * mean uniform-CE(anomaly batch)
//
// where uniform-CE pushes anomalies towards p_k = 1/K for every normal class.

#include "aa/eventgen.hpp"
#include "aa/network.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aa::train {

using eventgen::Dataset;

enum class Optimizer { sgd, adam };

struct TrainConfig {
    double lambda_aa = 0.5;
    int epochs = 5;  // desk scale; the reference setup used 100
    int aa_epochs = 0;  // length of the AA run; 0 reuses epochs
    int batch_size = 100;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    std::vector<std::string> anomaly_classes;
    double anomaly_mix_ratio = 1.0;  // anomaly examples per normal example per step
    Optimizer optimizer = Optimizer::adam;
    // Per-epoch train/test accuracy costs a full pass over both splits.
    bool track_epoch_accuracy = true;

    int aa_run_epochs() const { return aa_epochs > 0 ? aa_epochs : epochs; }
    void validate() const;  // throws ConfigError
};

struct EpochLog {
    int epoch = 0;
    double l1 = 0.0;
    double l2 = 0.0;
    double total = 0.0;
    double train_accuracy = -1.0;  // -1 when not tracked
    double test_accuracy = -1.0;
};

struct RunReport {
    std::string phase;  // "prior" | "aa"
    std::vector<std::string> normal_classes;
    std::vector<EpochLog> epochs;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::string checkpoint;  // filled in by whoever persists the parameters
    TrainConfig config;
    std::uint64_t optimizer_steps = 0;
};

struct RunResult {
    nn::Params params;
    RunReport report;
};

// -log probs[target_class]. probs must be a valid probability vector.
double cross_entropy(std::span<const double> probs, std::size_t target_class);
// -(1/K) sum_k log probs[k]; its minimum log K is reached at the uniform vector.
double uniform_cross_entropy(std::span<const double> probs);

std::vector<double> one_hot(std::size_t k, std::size_t index);
std::vector<double> uniform_target(std::size_t k);

// Trains on the "train" split of `normal` (whose class list defines the K
// normal classes). Starts from `init` when given, otherwise from
// init_params(arch, config.seed). lambda_aa is ignored.
RunResult prior_run(const Dataset& normal, const nn::Architecture& arch, const TrainConfig& config,
                    const nn::Params* init = nullptr);

// `anomalies` may only contain classes listed in config.anomaly_classes.
RunResult aa_run(const Dataset& normal, const Dataset& anomalies, const nn::Architecture& arch,
                 const TrainConfig& config, const nn::Params& init);

// Fraction of images in the split whose argmax class matches the label.
double accuracy(const nn::Params& params, const Dataset& normal, const std::string& split);

struct SweepRun {
    std::vector<std::string> aware;              // classes in the AA term
    RunReport report;
    std::map<std::string, double> centering;     // per anomaly class, test split
    std::optional<double> held_out_centering;
    double mean_centering = 0.0;                 // over every class in centering
};

struct SweepResult {
    std::vector<std::string> order;
    std::optional<std::string> held_out;
    std::map<std::string, double> baseline_centering;  // the init model
    double baseline_mean_centering = 0.0;
    std::vector<SweepRun> runs;                  // runs[n] is aware of order[0..n]
};

// Cumulative AA runs over `order` (classes of `pool`), each started from
// `init`. If held_out is set it must be a class of the pool; it is removed
// from the order and never enters the AA term. The pool needs at least two
// classes.
SweepResult ablation_sweep(const Dataset& normal, const Dataset& pool, const std::vector<std::string>& order,
                           const std::optional<std::string>& held_out, const nn::Architecture& arch,
                           const TrainConfig& config, const nn::Params& init);

// CSV with header epoch,l1,l2,total,train_acc,test_acc.
std::string loss_curve_csv(const RunReport& report);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const RunReport& r);
void to_json(nlohmann::json& j, const SweepResult& s);

}  // namespace aa::train
