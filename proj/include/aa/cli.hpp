#pragma once

#include "aa/experiment.hpp"

#include <string>
#include <vector>

namespace aa::cli {

struct TrainOptions {
    std::string phase = "prior";  // prior | aa | sweep
    std::optional<fs::path> init;
    bool cold_start = false;
    std::optional<fs::path> checkpoint_out;  // default checkpoints/<phase>.json
};

struct EvalOptions {
    std::optional<fs::path> checkpoint;  // default: every checkpoint present
};

void cmd_gen(const ExperimentConfig& config);
void cmd_train(const ExperimentConfig& config, const TrainOptions& options);
void cmd_eval(const ExperimentConfig& config, const EvalOptions& options = {});
void cmd_scan(const ExperimentConfig& config);
// Returns the SHA-256 of the written report.json.
std::string cmd_report(const ExperimentConfig& config);

// Score file: header event_id,true_class,p_0..p_{K-1}. Throws ParseError with
// the offending line number.
std::vector<analysis::ScoreRecord> read_scores_csv(const std::string& text);
std::string write_scores_csv(const std::vector<analysis::ScoreRecord>& records);

// Parses argv, runs one command and maps errors to exit codes:
// 0 ok, 2 configuration, 3 data/parse/IO, 4 numeric, 1 anything else.
int run(const std::vector<std::string>& args);

}  // namespace aa::cli
