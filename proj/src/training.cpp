#include "aa/training.hpp"

#include "aa/analysis.hpp"
#include "aa/digest.hpp"
#include "aa/errors.hpp"
#include "aa/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace aa::train {

namespace {

void check_probs(std::span<const double> probs) {
    if (probs.empty()) throw DimensionError("probability vector is empty");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("probability entries must lie in [0, 1]");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("probabilities must sum to 1");
}

// Normalized network inputs for a whole dataset, computed once per run.
struct Inputs {
    std::vector<std::vector<float>> pixels;
    std::vector<std::size_t> label;  // index into the dataset's class list

    explicit Inputs(const Dataset& ds) {
        pixels.reserve(ds.images.size());
        label.reserve(ds.images.size());
        for (const auto& im : ds.images) {
            pixels.push_back(eventgen::normalized_pixels(im));
            label.push_back(ds.class_index(im.label));
        }
    }
    std::span<const float> at(std::size_t i) const { return pixels[i]; }
};

double accuracy_of(const nn::Params& params, const Inputs& in, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    nn::ForwardTrace trace;
    std::size_t correct = 0;
    for (std::size_t i : idx) {
        nn::forward_into<float>(params, in.at(i), trace);
        const auto& p = trace.output_probs;
        const auto pred = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        correct += pred == in.label[i];
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

void check_normal(const Dataset& normal, const nn::Architecture& arch) {
    arch.validate();
    if (normal.classes.size() != static_cast<std::size_t>(arch.num_classes))
        throw ConfigError("normal dataset declares " + std::to_string(normal.classes.size()) +
                          " classes but the architecture has " + std::to_string(arch.num_classes) + " outputs");
    if (normal.height != arch.input_height || normal.width != arch.input_width)
        throw DimensionError("normal dataset images are " + std::to_string(normal.height) + "x" +
                             std::to_string(normal.width) + ", architecture expects " +
                             std::to_string(arch.input_height) + "x" + std::to_string(arch.input_width));
    for (const auto& c : normal.classes)
        if (normal.split_of_class("train", c).empty())
            throw ConfigError("normal dataset has no training images of declared class '" + c + "'");
}

struct AnomalySource {
    const Inputs* inputs = nullptr;
    std::vector<std::vector<std::size_t>> per_class;  // train indices, one list per AA class
};

RunResult run(const std::string& phase, const Dataset& normal, const AnomalySource* anomalies,
              const nn::Architecture& arch, const TrainConfig& config, int epochs, const nn::Params& init) {
    const bool aware = anomalies != nullptr;
    const double lambda = aware ? config.lambda_aa : 0.0;
    const Inputs in(normal);
    const auto k = static_cast<std::size_t>(arch.num_classes);
    std::vector<std::vector<double>> targets;
    for (std::size_t c = 0; c < k; ++c) targets.push_back(one_hot(k, c));
    const std::vector<double> uniform = uniform_target(k);

    const auto& train_idx = normal.split("train");
    const auto& test_idx = normal.split("test");
    const auto batch = static_cast<std::size_t>(config.batch_size);
    const std::size_t anomaly_batch =
        aware ? std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.batch_size * config.anomaly_mix_ratio)))
              : 0;

    RunResult result{init, {}};
    auto& report = result.report;
    report.phase = phase;
    report.normal_classes = normal.classes;
    report.config = config;

    nn::Params& params = result.params;
    nn::Gradient grad(arch);
    nn::Workspace<float> ws;
    nn::AdamState adam;
    const nn::AdamHyper hyper{config.learning_rate};
    std::vector<std::size_t> order = train_idx;
    std::vector<std::size_t> anomaly_pick;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        // Fisher-Yates with a per-epoch stream.
        Rng shuffle_rng = make_rng(config.seed, "shuffle", static_cast<std::uint64_t>(epoch));
        order = train_idx;
        for (std::size_t i = order.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(order[i - 1], order[pick(shuffle_rng)]);
        }
        Rng anomaly_rng = make_rng(config.seed, "anomaly-batch", static_cast<std::uint64_t>(epoch));

        double l1_sum = 0.0, l2_sum = 0.0, total_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            const double w1 = 1.0 / static_cast<double>(end - start);
            grad.set_zero();
            double l1 = 0.0;
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t i = order[b];
                l1 += nn::accumulate_gradient<float>(params, in.at(i), targets[in.label[i]], w1, grad, ws);
            }
            l1 *= w1;

            double l2 = 0.0;
            if (aware && !anomalies->per_class.empty()) {
                // Stratified: anomaly_batch / n per class, remainder to the first classes.
                const std::size_t n_cls = anomalies->per_class.size();
                anomaly_pick.clear();
                for (std::size_t c = 0; c < n_cls; ++c) {
                    const auto& pool = anomalies->per_class[c];
                    const std::size_t take = anomaly_batch / n_cls + (c < anomaly_batch % n_cls ? 1 : 0);
                    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
                    for (std::size_t t = 0; t < take; ++t) anomaly_pick.push_back(pool[pick(anomaly_rng)]);
                }
                const double w2 = lambda / static_cast<double>(anomaly_pick.size());
                for (std::size_t i : anomaly_pick)
                    l2 += nn::accumulate_gradient<float>(params, anomalies->inputs->at(i), uniform, w2, grad, ws);
                l2 /= static_cast<double>(anomaly_pick.size());
            }

            if (config.optimizer == Optimizer::adam)
                nn::adam_step(params, grad, adam, hyper);
            else
                nn::sgd_step(params, grad, hyper.learning_rate);
            ++report.optimizer_steps;

            if (!std::isfinite(l1) || !std::isfinite(l2))
                throw NumericError(phase + " run: non-finite loss at epoch " + std::to_string(epoch));
            l1_sum += l1;
            l2_sum += l2;
            total_sum += l1 + lambda * l2;
            ++steps;
        }

        EpochLog log;
        log.epoch = epoch + 1;
        log.l1 = l1_sum / static_cast<double>(steps);
        log.l2 = l2_sum / static_cast<double>(steps);
        log.total = total_sum / static_cast<double>(steps);
        if (config.track_epoch_accuracy) {
            log.train_accuracy = accuracy_of(params, in, train_idx);
            log.test_accuracy = accuracy_of(params, in, test_idx);
        }
        report.epochs.push_back(log);
    }

    if (config.track_epoch_accuracy && !report.epochs.empty()) {
        report.train_accuracy = report.epochs.back().train_accuracy;
        report.test_accuracy = report.epochs.back().test_accuracy;
    } else {
        report.train_accuracy = accuracy_of(params, in, train_idx);
        report.test_accuracy = accuracy_of(params, in, test_idx);
    }
    return result;
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (aa_epochs < 0) throw ConfigError("TrainConfig: aa_epochs must be >= 0 (0 reuses epochs)");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("TrainConfig: learning_rate must be finite and > 0");
    if (!(lambda_aa >= 0.0) || !std::isfinite(lambda_aa)) throw ConfigError("TrainConfig: lambda_aa must be >= 0");
    if (!(anomaly_mix_ratio > 0.0) || !std::isfinite(anomaly_mix_ratio))
        throw ConfigError("TrainConfig: anomaly_mix_ratio must be > 0");
}

double cross_entropy(std::span<const double> probs, std::size_t target_class) {
    check_probs(probs);
    if (target_class >= probs.size())
        throw DimensionError("cross_entropy: target " + std::to_string(target_class) + " out of range for K=" +
                             std::to_string(probs.size()));
    return -std::log(probs[target_class]);
}

double uniform_cross_entropy(std::span<const double> probs) {
    check_probs(probs);
    double s = 0.0;
    for (double p : probs) s += std::log(p);
    return -s / static_cast<double>(probs.size());
}

std::vector<double> one_hot(std::size_t k, std::size_t index) {
    std::vector<double> t(k, 0.0);
    t.at(index) = 1.0;
    return t;
}

std::vector<double> uniform_target(std::size_t k) { return std::vector<double>(k, 1.0 / static_cast<double>(k)); }

RunResult prior_run(const Dataset& normal, const nn::Architecture& arch, const TrainConfig& config,
                    const nn::Params* init) {
    config.validate();
    check_normal(normal, arch);
    if (init && !(init->architecture() == arch)) throw ConfigError("prior_run: init parameters have another architecture");
    const nn::Params start = init ? *init : nn::init_params(arch, config.seed);
    return run("prior", normal, nullptr, arch, config, config.epochs, start);
}

RunResult aa_run(const Dataset& normal, const Dataset& anomalies, const nn::Architecture& arch,
                 const TrainConfig& config, const nn::Params& init) {
    config.validate();
    check_normal(normal, arch);
    if (!(init.architecture() == arch)) throw ConfigError("aa_run: init parameters have another architecture");
    for (const auto& c : anomalies.classes)
        if (std::find(config.anomaly_classes.begin(), config.anomaly_classes.end(), c) == config.anomaly_classes.end())
            throw ConfigError("aa_run: anomaly dataset contains class '" + c + "' not listed in anomaly_classes");

    const bool empty = anomalies.images.empty() || config.anomaly_classes.empty();
    if (empty && config.lambda_aa > 0.0) throw ConfigError("aa_run: anomaly dataset is empty while lambda_aa > 0");
    if (!empty && (anomalies.height != normal.height || anomalies.width != normal.width))
        throw DimensionError("aa_run: anomaly images do not match the normal image shape");

    Inputs anomaly_inputs(anomalies);
    AnomalySource source;
    source.inputs = &anomaly_inputs;
    if (!empty) {
        for (const auto& c : config.anomaly_classes) {
            auto idx = anomalies.split_of_class("train", c);
            if (idx.empty()) throw ConfigError("aa_run: no training images for anomaly class '" + c + "'");
            source.per_class.push_back(std::move(idx));
        }
    }
    return run("aa", normal, &source, arch, config, config.aa_run_epochs(), init);
}

double accuracy(const nn::Params& params, const Dataset& normal, const std::string& split) {
    const Inputs in(normal);
    return accuracy_of(params, in, normal.split(split));
}

SweepResult ablation_sweep(const Dataset& normal, const Dataset& pool, const std::vector<std::string>& order,
                           const std::optional<std::string>& held_out, const nn::Architecture& arch,
                           const TrainConfig& config, const nn::Params& init) {
    if (pool.classes.size() < 2) throw ConfigError("ablation_sweep: anomaly pool needs at least 2 classes");
    for (const auto& c : order) pool.class_index(c);
    if (held_out) pool.class_index(*held_out);

    SweepResult out;
    out.held_out = held_out;
    for (const auto& c : order)
        if (!held_out || c != *held_out) out.order.push_back(c);
    if (out.order.empty()) throw ConfigError("ablation_sweep: nothing left to train on after holding out");

    std::vector<std::string> evaluated = out.order;
    if (held_out) evaluated.push_back(*held_out);
    const Dataset eval_set = pool.subset(evaluated);

    const auto measure = [&](const nn::Params& params, std::map<std::string, double>& centering) {
        const auto records = analysis::score_split(params, eval_set, "test");
        double sum = 0.0;
        for (const auto& c : evaluated) {
            centering[c] = analysis::centering(records, c);
            sum += centering[c];
        }
        return sum / static_cast<double>(evaluated.size());
    };
    out.baseline_mean_centering = measure(init, out.baseline_centering);

    for (std::size_t n = 1; n <= out.order.size(); ++n) {
        SweepRun r;
        r.aware.assign(out.order.begin(), out.order.begin() + static_cast<std::ptrdiff_t>(n));
        TrainConfig cfg = config;
        cfg.anomaly_classes = r.aware;
        auto result = aa_run(normal, pool.subset(r.aware), arch, cfg, init);
        r.report = std::move(result.report);
        r.mean_centering = measure(result.params, r.centering);
        if (held_out) r.held_out_centering = r.centering.at(*held_out);
        out.runs.push_back(std::move(r));
    }
    return out;
}

std::string loss_curve_csv(const RunReport& report) {
    std::string out = "epoch,l1,l2,total,train_acc,test_acc\n";
    for (const auto& e : report.epochs) {
        out += std::to_string(e.epoch) + "," + format_double(e.l1) + "," + format_double(e.l2) + "," +
               format_double(e.total) + "," + format_double(e.train_accuracy) + "," +
               format_double(e.test_accuracy) + "\n";
    }
    return out;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"lambda_aa", c.lambda_aa},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"aa_epochs", c.aa_epochs},
         {"seed", c.seed},
         {"anomaly_classes", c.anomaly_classes},
         {"anomaly_mix_ratio", c.anomaly_mix_ratio},
         {"optimizer", c.optimizer == Optimizer::adam ? "adam" : "sgd"},
         {"track_epoch_accuracy", c.track_epoch_accuracy}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.lambda_aa = j.value("lambda_aa", c.lambda_aa);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.aa_epochs = j.value("aa_epochs", c.aa_epochs);
    c.seed = j.value("seed", c.seed);
    c.anomaly_classes = j.value("anomaly_classes", c.anomaly_classes);
    c.anomaly_mix_ratio = j.value("anomaly_mix_ratio", c.anomaly_mix_ratio);
    const std::string opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam")
        c.optimizer = Optimizer::adam;
    else if (opt == "sgd")
        c.optimizer = Optimizer::sgd;
    else
        throw ConfigError("TrainConfig: unknown optimizer '" + opt + "'");
    c.track_epoch_accuracy = j.value("track_epoch_accuracy", c.track_epoch_accuracy);
}

void to_json(nlohmann::json& j, const RunReport& r) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : r.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"l1", e.l1},
                          {"l2", e.l2},
                          {"total", e.total},
                          {"train_acc", e.train_accuracy},
                          {"test_acc", e.test_accuracy}});
    j = {{"phase", r.phase},
         {"normal_classes", r.normal_classes},
         {"epochs", epochs},
         {"train_accuracy", r.train_accuracy},
         {"test_accuracy", r.test_accuracy},
         {"checkpoint", r.checkpoint},
         {"optimizer_steps", r.optimizer_steps},
         {"config", r.config}};
}

void to_json(nlohmann::json& j, const SweepResult& s) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : s.runs) {
        runs.push_back({{"n_anomaly_classes", r.aware.size()},
                        {"aware", r.aware},
                        {"centering", r.centering},
                        {"mean_centering", r.mean_centering},
                        {"held_out_centering",
                         r.held_out_centering ? nlohmann::json(*r.held_out_centering) : nlohmann::json(nullptr)},
                        {"test_accuracy", r.report.test_accuracy}});
    }
    j = {{"order", s.order},
         {"held_out", s.held_out ? nlohmann::json(*s.held_out) : nlohmann::json(nullptr)},
         {"baseline_centering", s.baseline_centering},
         {"baseline_mean_centering", s.baseline_mean_centering},
         {"runs", runs}};
}

}  // namespace aa::train
