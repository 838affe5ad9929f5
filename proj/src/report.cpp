#include "aa/checkpoint.hpp"
#include "aa/cli.hpp"
#include "aa/dataset_io.hpp"
#include "aa/digest.hpp"
#include "aa/errors.hpp"
#include "aa/file_util.hpp"

#include <cstdio>
#include <map>

namespace aa::cli {

using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

json integrity_entry(const std::string& recorded, const std::string& actual) {
    return {{"recorded", recorded}, {"actual", actual}, {"status", recorded == actual ? "ok" : "mismatch"}};
}

}  // namespace

std::string cmd_report(const ExperimentConfig& config) {
    config.validate();
    const Layout layout{config.out};
    ExperimentLock lock(layout.root);

    const std::vector<std::string> phases{"prior", "aa"};
    std::vector<fs::path> required{layout.config()};
    std::vector<std::string> datasets{"normal"};
    if (!config.anomalies.empty()) datasets.push_back("anomaly");
    for (const auto& d : datasets) {
        required.push_back(eventgen::container_path(layout.dataset_stem(d)));
        required.push_back(eventgen::sidecar_path(layout.dataset_stem(d)));
    }
    for (const auto& p : phases) {
        required.push_back(layout.checkpoint(p));
        required.push_back(fs::path(layout.checkpoint(p)).replace_extension(".bin"));
        required.push_back(layout.reports() / (p + "_run.json"));
        required.push_back(layout.reports() / ("eval_" + p + ".json"));
        for (const auto& d : datasets) {
            required.push_back(layout.scores() / (p + "_" + d + ".csv"));
            required.push_back(layout.scores() / (p + "_" + d + ".json"));
        }
    }
    required.push_back(layout.reports() / "scan.json");
    required.push_back(layout.reports() / "sigma_min.csv");

    std::vector<std::string> missing;
    for (const auto& p : required)
        if (!fs::exists(p)) missing.push_back(relative(layout, p));
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += "\n  " + m;
        throw DataError("report: missing artifacts:" + list);
    }

    json report;
    report["format"] = "aa-report";
    report["version"] = 1;
    const json echo = read_json(layout.config());
    report["config"] = echo;
    report["config_sha256"] = sha256_file(layout.config());

    // Integrity: recorded digests against the bytes on disk.
    json integrity = json::object();
    bool all_ok = true;
    const auto note = [&](const std::string& key, const std::string& recorded, const std::string& actual) {
        integrity[key] = integrity_entry(recorded, actual);
        all_ok = all_ok && recorded == actual;
    };
    for (const auto& d : datasets) {
        const auto stem = layout.dataset_stem(d);
        const auto side = read_json(eventgen::sidecar_path(stem));
        note(relative(layout, eventgen::container_path(stem)), side.value("container_sha256", ""),
             sha256_file(eventgen::container_path(stem)));
    }
    json runs = json::object();
    for (const auto& p : phases) {
        const auto header = read_json(layout.checkpoint(p));
        const auto run = read_json(layout.reports() / (p + "_run.json"));
        const auto bin = fs::path(layout.checkpoint(p)).replace_extension(".bin");
        const std::string actual = sha256_file(bin);
        note(relative(layout, bin), header.value("blob_sha256", ""), actual);
        note(relative(layout, layout.reports() / (p + "_run.json")) + "#checkpoint_sha256",
             run.value("checkpoint_sha256", ""), actual);
        runs[p] = {{"train_accuracy", run.at("train_accuracy")},
                   {"test_accuracy", run.at("test_accuracy")},
                   {"optimizer_steps", run.at("optimizer_steps")},
                   {"epochs", run.at("epochs")},
                   {"checkpoint_sha256", actual}};
        for (const auto& d : datasets) {
            const auto csv = layout.scores() / (p + "_" + d + ".csv");
            const auto meta = read_json(layout.scores() / (p + "_" + d + ".json"));
            note(relative(layout, csv), meta.value("csv_sha256", ""), sha256_file(csv));
        }
    }
    report["runs"] = runs;
    report["integrity"] = {{"all_ok", all_ok}, {"checks", integrity}};

    json evals = json::object();
    for (const auto& p : phases) {
        const auto e = read_json(layout.reports() / ("eval_" + p + ".json"));
        json auc = json::object();
        for (const auto& [k, v] : e.at("roc").items()) auc[k] = v.at("auc");
        evals[p] = {{"train_accuracy", e.at("train_accuracy")},
                    {"test_accuracy", e.at("test_accuracy")},
                    {"auc", auc},
                    {"centering", e.at("centering")}};
    }
    report["evaluation"] = evals;

    const auto scan = read_json(layout.reports() / "scan.json");
    json scans = json::array();
    for (const auto& s : scan.at("scans")) {
        json best = nullptr;
        if (!s.at("argmax").is_null()) best = s.at("points").at(s.at("argmax").get<std::size_t>()).at("center");
        scans.push_back({{"delta", s.at("delta")}, {"r_max", s.at("R_max")}, {"best_center", best}});
    }
    report["scan"] = {{"anomaly", scan.at("anomaly")},
                      {"axis_class", scan.at("axis_class")},
                      {"by_delta", scans},
                      {"r_max", scan.at("r_max")},
                      {"best_delta", scan.at("best_delta")},
                      {"sigma_min", scan.at("sigma_min")}};

    const auto sweep_path = layout.ablation() / "sweep.json";
    if (fs::exists(sweep_path)) {
        const auto sweep = read_json(sweep_path);
        json table = json::array();
        table.push_back({{"n_anomaly_classes", 0},
                         {"mean_centering", sweep.at("baseline_mean_centering")},
                         {"held_out_centering",
                          sweep.at("held_out").is_null()
                              ? json(nullptr)
                              : sweep.at("baseline_centering").at(sweep.at("held_out").get<std::string>())}});
        for (const auto& r : sweep.at("runs"))
            table.push_back({{"n_anomaly_classes", r.at("n_anomaly_classes")},
                             {"mean_centering", r.at("mean_centering")},
                             {"held_out_centering", r.at("held_out_centering")}});
        report["saturation"] = {{"order", sweep.at("order")}, {"held_out", sweep.at("held_out")}, {"table", table}};
    }

    json artifacts = json::object();
    std::map<std::string, fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(layout.root)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = relative(layout, entry.path());
        if (rel == ".lock" || rel == "reports/report.json" || rel == "reports/summary.txt") continue;
        if (rel.ends_with(".tmp")) continue;
        files[rel] = entry.path();
    }
    for (const auto& [rel, path] : files) artifacts[rel] = sha256_file(path);
    report["artifacts"] = artifacts;

    const std::string text = report.dump(2) + "\n";
    write_file(layout.reports() / "report.json", text);
    const std::string digest = sha256_hex(text);

    std::string s = "experiment report\n";
    s += "config sha256: " + report["config_sha256"].get<std::string>() + "\n";
    s += "integrity: " + std::string(all_ok ? "ok" : "MISMATCH") + "\n";
    for (const auto& [k, v] : integrity.items())
        if (v.at("status") != "ok") s += "  mismatch: " + k + "\n";
    for (const auto& p : phases) {
        const auto& e = evals[p];
        s += p + ": train acc " + fixed(e["train_accuracy"].get<double>()) + ", test acc " +
             fixed(e["test_accuracy"].get<double>());
        for (const auto& [k, v] : e["auc"].items()) s += ", AUC " + k + " " + fixed(v.get<double>());
        s += "\n  centering:";
        for (const auto& [k, v] : e["centering"].items()) s += " " + k + "=" + fixed(v.get<double>());
        s += "\n";
    }
    s += "window scan (" + scan.at("anomaly").get<std::string>() + " on P(" +
         scan.at("axis_class").get<std::string>() + ")):\n";
    for (const auto& d : scans)
        s += "  delta " + fixed(d["delta"].get<double>(), 3) + ": R_max " + sci(d["r_max"].get<double>()) +
             " fb^-1/2\n";
    for (const auto& pt : scan.at("sigma_min"))
        s += "  sigma_min(L=" + sci(pt.at("luminosity").get<double>()) + " fb^-1) = " +
             sci(pt.at("sigma_min").get<double>()) + " fb\n";
    if (report.contains("saturation")) {
        s += "saturation (n_anomaly_classes, mean centering, held-out centering):\n";
        for (const auto& row : report["saturation"]["table"]) {
            s += "  " + std::to_string(row["n_anomaly_classes"].get<int>()) + "  " +
                 fixed(row["mean_centering"].get<double>());
            s += "  " + (row["held_out_centering"].is_null() ? std::string("-")
                                                               : fixed(row["held_out_centering"].get<double>()));
            s += "\n";
        }
    }
    s += "report sha256: " + digest + "\n";
    write_file(layout.reports() / "summary.txt", s);
    return digest;
}

}  // namespace aa::cli
