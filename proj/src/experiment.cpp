#include "aa/experiment.hpp"

#include "aa/checkpoint.hpp"
#include "aa/dataset_io.hpp"
#include "aa/digest.hpp"
#include "aa/errors.hpp"
#include "aa/file_util.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <set>

namespace aa::cli {

using nlohmann::json;

namespace {

std::vector<eventgen::ClassSpec> parse_classes(const json& j, const char* field) {
    if (!j.is_array()) throw ConfigError(std::string("config: '") + field + "' must be an array");
    std::vector<eventgen::ClassSpec> out;
    for (const auto& e : j) {
        if (e.is_string())
            out.push_back(eventgen::default_spec(e.get<std::string>()));
        else
            out.push_back(e.get<eventgen::ClassSpec>());
    }
    return out;
}

json classes_json(const std::vector<eventgen::ClassSpec>& specs) {
    json a = json::array();
    for (const auto& s : specs) a.push_back(s);
    return a;
}

std::vector<std::string> names_of(const std::vector<eventgen::ClassSpec>& specs) {
    std::vector<std::string> out;
    for (const auto& s : specs) out.push_back(s.name);
    return out;
}

}  // namespace

nn::Architecture ExperimentConfig::resolved_architecture() const {
    if (architecture) return *architecture;
    return nn::Architecture::desk_default(static_cast<int>(normal.size()), generator.height, generator.width);
}

std::vector<std::string> ExperimentConfig::normal_names() const { return names_of(normal); }
std::vector<std::string> ExperimentConfig::anomaly_names() const { return names_of(anomalies); }

void ExperimentConfig::validate() const {
    generator.validate();
    if (normal.size() < 2) throw ConfigError("config: at least two normal classes are required");
    std::set<std::string> seen;
    for (const auto& s : normal) {
        s.validate();
        if (!seen.insert(s.name).second) throw ConfigError("config: duplicate class '" + s.name + "'");
    }
    for (const auto& s : anomalies) {
        s.validate();
        if (!seen.insert(s.name).second) throw ConfigError("config: duplicate class '" + s.name + "'");
    }
    if (per_class_count < 1 || anomaly_per_class_count < 1) throw ConfigError("config: per-class counts must be >= 1");
    if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("config: split_fraction must lie in (0, 1)");
    const auto arch = resolved_architecture();
    arch.validate();
    if (arch.num_classes != static_cast<int>(normal.size()))
        throw ConfigError("config: architecture has " + std::to_string(arch.num_classes) + " outputs for " +
                          std::to_string(normal.size()) + " normal classes");
    if (arch.input_height != generator.height || arch.input_width != generator.width)
        throw ConfigError("config: architecture input shape differs from the generator grid");
    train.validate();

    const auto an = anomaly_names();
    const auto nn_ = normal_names();
    const auto is_anomaly = [&](const std::string& c) { return std::find(an.begin(), an.end(), c) != an.end(); };
    const auto is_normal = [&](const std::string& c) { return std::find(nn_.begin(), nn_.end(), c) != nn_.end(); };
    for (const auto& c : train.anomaly_classes)
        if (!is_anomaly(c)) throw ConfigError("config: train.anomaly_classes lists unknown anomaly '" + c + "'");
    for (const auto& c : ablation.order)
        if (!is_anomaly(c)) throw ConfigError("config: ablation.order lists unknown anomaly '" + c + "'");
    if (ablation.held_out && !is_anomaly(*ablation.held_out))
        throw ConfigError("config: ablation.held_out is not an anomaly class");

    const auto& a = analysis;
    if (a.deltas.empty()) throw ConfigError("config: analysis.deltas is empty");
    for (double d : a.deltas)
        if (!(d > 0.0 && d <= 1.0)) throw ConfigError("config: analysis.deltas entries must lie in (0, 1]");
    if (a.step && !(*a.step > 0.0)) throw ConfigError("config: analysis.step must be > 0");
    if (a.model != "prior" && a.model != "aa") throw ConfigError("config: analysis.model must be 'prior' or 'aa'");
    if (a.split != "train" && a.split != "test") throw ConfigError("config: analysis.split must be 'train' or 'test'");
    if (!is_normal(a.axis_class)) throw ConfigError("config: analysis.axis_class must be a normal class");
    if (!is_anomaly(a.anomaly)) throw ConfigError("config: analysis.anomaly must be an anomaly class");
    if (a.backgrounds.empty()) throw ConfigError("config: analysis.backgrounds is empty");
    analysis::validate_cross_sections(a.cross_sections);
    for (const auto& b : a.backgrounds) {
        if (!is_normal(b)) throw ConfigError("config: background '" + b + "' is not a normal class");
        if (!a.cross_sections.count(b)) throw ConfigError("config: no cross section for background '" + b + "'");
    }
    if (a.luminosities.empty()) throw ConfigError("config: analysis.luminosities is empty");
    for (double l : a.luminosities)
        if (!(l > 0.0)) throw ConfigError("config: luminosities must be > 0");
    if (a.histogram_bins < 2) throw ConfigError("config: analysis.histogram_bins must be >= 2");
}

ExperimentConfig parse_config(const json& j) {
    ExperimentConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        c.out = j.value("out", c.out.string());
        if (j.contains("generator")) c.generator = j.at("generator").get<eventgen::GeneratorConfig>();
        c.normal = parse_classes(j.value("normal_classes", json::array({"QCD", "Top"})), "normal_classes");
        c.anomalies = parse_classes(j.value("anomaly_classes", json::array({"W", "R2", "R3", "R4", "EFT"})),
                                    "anomaly_classes");
        c.per_class_count = j.value("per_class_count", c.per_class_count);
        c.anomaly_per_class_count = j.value("anomaly_per_class_count", c.anomaly_per_class_count);
        c.split_fraction = j.value("split_fraction", c.split_fraction);
        if (j.contains("architecture") && !j.at("architecture").is_null())
            c.architecture = j.at("architecture").get<nn::Architecture>();
        c.train.anomaly_classes = c.anomaly_names();
        if (j.contains("train")) {
            json t = j.at("train");
            if (!t.contains("anomaly_classes")) t["anomaly_classes"] = c.train.anomaly_classes;
            c.train = t.get<train::TrainConfig>();
        }
        if (j.contains("ablation")) {
            const auto& a = j.at("ablation");
            c.ablation.order = a.value("order", c.ablation.order);
            if (a.contains("held_out") && !a.at("held_out").is_null())
                c.ablation.held_out = a.at("held_out").get<std::string>();
        }
        if (j.contains("analysis")) {
            const auto& a = j.at("analysis");
            auto& s = c.analysis;
            s.deltas = a.value("deltas", s.deltas);
            if (a.contains("step") && !a.at("step").is_null()) s.step = a.at("step").get<double>();
            s.model = a.value("model", s.model);
            s.split = a.value("split", s.split);
            s.axis_class = a.value("axis_class", s.axis_class);
            s.anomaly = a.value("anomaly", s.anomaly);
            s.backgrounds = a.value("backgrounds", s.backgrounds);
            s.cross_sections = a.value("cross_sections", s.cross_sections);
            s.luminosities = a.value("luminosities", s.luminosities);
            s.histogram_bins = a.value("histogram_bins", s.histogram_bins);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_config(j);
}

json config_echo(const ExperimentConfig& c) {
    json ablation = {{"order", c.ablation.order},
                     {"held_out", c.ablation.held_out ? json(*c.ablation.held_out) : json(nullptr)}};
    const auto& a = c.analysis;
    json analysis = {{"deltas", a.deltas},
                     {"step", a.step ? json(*a.step) : json(nullptr)},
                     {"model", a.model},
                     {"split", a.split},
                     {"axis_class", a.axis_class},
                     {"anomaly", a.anomaly},
                     {"backgrounds", a.backgrounds},
                     {"cross_sections", a.cross_sections},
                     {"luminosities", a.luminosities},
                     {"histogram_bins", a.histogram_bins}};
    return {{"seed", c.seed},
            {"generator", c.generator},
            {"normal_classes", classes_json(c.normal)},
            {"anomaly_classes", classes_json(c.anomalies)},
            {"per_class_count", c.per_class_count},
            {"anomaly_per_class_count", c.anomaly_per_class_count},
            {"split_fraction", c.split_fraction},
            {"architecture", c.resolved_architecture()},
            {"train", c.train},
            {"ablation", ablation},
            {"analysis", analysis}};
}

std::string config_digest(const ExperimentConfig& c) { return sha256_hex(config_echo(c).dump()); }

ExperimentLock::ExperimentLock(const fs::path& root) {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create experiment directory " + root.string() + ": " + ec.message());
    const auto path = root / ".lock";
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw IoError("experiment directory " + root.string() + " is locked by another process");
    }
}

ExperimentLock::~ExperimentLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

std::string relative(const Layout& layout, const fs::path& p) {
    return p.lexically_relative(layout.root).generic_string();
}

}  // namespace aa::cli
