#include "aa/checkpoint.hpp"
#include "aa/cli.hpp"
#include "aa/dataset_io.hpp"
#include "aa/digest.hpp"
#include "aa/errors.hpp"
#include "aa/file_util.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <regex>
#include <sstream>

using namespace aa;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("aa_cli_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

json small_config(const fs::path& out) {
    return {{"seed", 7},
            {"out", out.string()},
            {"generator", {{"height", 16}, {"width", 16}}},
            {"normal_classes", {"QCD", "Top"}},
            {"anomaly_classes", {"W", "R2", "EFT"}},
            {"per_class_count", 100},
            {"anomaly_per_class_count", 40},
            {"split_fraction", 0.8},
            {"architecture",
             {{"input_height", 16},
              {"input_width", 16},
              {"conv_layers", {{{"out_channels", 4}, {"kernel_size", 3}, {"stride", 1}, {"pool", 2}}}},
              {"dense_layers", {16, 2}},
              {"num_classes", 2}}},
            {"train",
             {{"lambda_aa", 0.5},
              {"epochs", 2},
              {"batch_size", 20},
              {"learning_rate", 0.003},
              {"anomaly_classes", {"W", "R2"}},
              {"optimizer", "adam"}}},
            {"ablation", {{"order", {"W", "R2", "EFT"}}, {"held_out", nullptr}}},
            {"analysis", {{"deltas", {0.08, 0.1, 0.12}}}}};
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json") {
    write_file(dir / name, j.dump(2));
    return dir / name;
}

int aa_run(std::vector<std::string> args) { return cli::run(args); }

json load(const fs::path& p) { return json::parse(read_file(p)); }

// Full gen -> train -> eval -> scan pipeline, once per test process.
struct Pipeline {
    fs::path dir, exp, cfg;
};

const Pipeline& pipeline() {
    static const Pipeline p = [] {
        Pipeline q;
        q.dir = scratch("pipeline");
        q.exp = q.dir / "exp";
        q.cfg = write_config(q.dir, small_config(q.exp));
        const std::string c = q.cfg.string();
        if (aa_run({"gen", "--config", c}) != 0 || aa_run({"train", "--config", c, "--phase", "prior"}) != 0 ||
            aa_run({"train", "--config", c, "--phase", "aa"}) != 0 || aa_run({"eval", "--config", c}) != 0 ||
            aa_run({"scan", "--config", c}) != 0)
            throw std::runtime_error("pipeline setup failed");
        return q;
    }();
    return p;
}

// A private copy of the shared experiment, for tests that modify it.
std::pair<fs::path, std::string> copy_pipeline(const std::string& name) {
    const auto& p = pipeline();
    const auto dir = scratch(name);
    fs::copy(p.exp, dir / "exp", fs::copy_options::recursive);
    auto j = load(p.cfg);
    j["out"] = (dir / "exp").string();
    return {dir, write_config(dir, j).string()};
}

// Minimal JSON-schema check: type, enum, pattern, required, properties,
// additionalProperties, items and local $ref.
bool type_matches(const json& v, const std::string& t) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "boolean") return v.is_boolean();
    if (t == "null") return v.is_null();
    if (t == "integer") return v.is_number_integer();
    if (t == "number") return v.is_number();
    return false;
}

void validate(const json& v, const json& schema, const json& root, const std::string& where,
              std::vector<std::string>& errors) {
    if (schema.contains("$ref")) {
        const std::string ref = schema["$ref"];
        const std::string prefix = "#/$defs/";
        validate(v, root.at("$defs").at(ref.substr(prefix.size())), root, where, errors);
        return;
    }
    if (schema.contains("type")) {
        bool ok = false;
        if (schema["type"].is_array()) {
            for (const auto& t : schema["type"]) ok = ok || type_matches(v, t);
        } else {
            ok = type_matches(v, schema["type"]);
        }
        if (!ok) {
            errors.push_back(where + ": wrong type");
            return;
        }
    }
    if (schema.contains("enum")) {
        bool found = false;
        for (const auto& e : schema["enum"]) found = found || e == v;
        if (!found) errors.push_back(where + ": not in enum");
    }
    if (schema.contains("pattern") && v.is_string() &&
        !std::regex_search(v.get<std::string>(), std::regex(schema["pattern"].get<std::string>())))
        errors.push_back(where + ": pattern");
    if (v.is_object()) {
        if (schema.contains("required"))
            for (const auto& r : schema["required"])
                if (!v.contains(r.get<std::string>())) errors.push_back(where + ": missing " + r.get<std::string>());
        for (const auto& [k, sub] : v.items()) {
            if (schema.contains("properties") && schema["properties"].contains(k))
                validate(sub, schema["properties"][k], root, where + "/" + k, errors);
            else if (schema.contains("additionalProperties") && schema["additionalProperties"].is_object())
                validate(sub, schema["additionalProperties"], root, where + "/" + k, errors);
        }
    }
    if (v.is_array() && schema.contains("items"))
        for (std::size_t i = 0; i < v.size(); ++i)
            validate(v[i], schema["items"], root, where + "/" + std::to_string(i), errors);
}

std::vector<std::string> validate(const json& v, const json& schema) {
    std::vector<std::string> errors;
    validate(v, schema, schema, "", errors);
    return errors;
}

}  // namespace

TEST(ScoresCsv, RoundTrip) {
    std::vector<analysis::ScoreRecord> rec{{{0.25, 0.75}, "QCD"}, {{0.1, 0.9}, "EFT"}};
    const std::string text = cli::write_scores_csv(rec);
    EXPECT_EQ(text.substr(0, text.find('\n')), "event_id,true_class,p_0,p_1");
    const auto back = cli::read_scores_csv(text);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].true_class, "EFT");
    EXPECT_EQ(back[0].probs, rec[0].probs);
    EXPECT_EQ(cli::write_scores_csv(back), text);
}

TEST(ScoresCsv, MalformedLinesReportLineNumbers) {
    const std::string header = "event_id,true_class,p_0,p_1\n";
    const auto line_of = [](const std::string& text) -> std::size_t {
        try {
            cli::read_scores_csv(text);
        } catch (const ParseError& e) {
            return e.line();
        }
        return 0;
    };
    EXPECT_EQ(line_of("id,class,p_0\n"), 1u);
    EXPECT_EQ(line_of(header + "0,QCD,0.5,0.5\n1,QCD,0.5\n"), 3u);
    EXPECT_EQ(line_of(header + "0,QCD,0.5,0.5\n1,Top,abc,0.5\n"), 3u);
    EXPECT_EQ(line_of(header + "0,QCD,1.5,-0.5\n"), 2u);
    EXPECT_EQ(line_of(header + "0,QCD,0.5,0.5\n5,QCD,0.5,0.5\n"), 3u);
    EXPECT_EQ(line_of(header + "0,,0.5,0.5\n"), 2u);
}

TEST(Cli, UsageAndConfigErrorsExitTwo) {
    const auto dir = scratch("usage");
    EXPECT_EQ(aa_run({}), 2);
    EXPECT_EQ(aa_run({"gen"}), 2);
    EXPECT_EQ(aa_run({"frobnicate", "--config", "x"}), 2);
    EXPECT_EQ(aa_run({"gen", "--config", (dir / "absent.json").string()}), 2);

    auto j = small_config(dir / "exp");
    j["per_class_count"] = 0;
    EXPECT_EQ(aa_run({"gen", "--config", write_config(dir, j).string()}), 2);
    j = small_config(dir / "exp");
    j["train"]["optimizer"] = "rmsprop";
    EXPECT_EQ(aa_run({"gen", "--config", write_config(dir, j).string()}), 2);
    write_file(dir / "broken.json", "{\"seed\": ");
    EXPECT_EQ(aa_run({"gen", "--config", (dir / "broken.json").string()}), 2);
    fs::remove_all(dir);
}

TEST(Cli, GenWritesReproducibleDatasets) {
    const auto& p = pipeline();
    const cli::Layout layout{p.exp};
    for (const char* f : {"config.json", "datasets/normal.aajd", "datasets/normal.json", "datasets/anomaly.aajd",
                          "datasets/avg_QCD.pgm", "datasets/avg_Top.pgm", "datasets/avg_EFT.pgm"})
        EXPECT_TRUE(fs::exists(p.exp / f)) << f;
    const auto side = eventgen::load_sidecar(layout.dataset_stem("normal"));
    EXPECT_EQ(side.at("per_class_count"), 100);
    EXPECT_EQ(side.at("counts").at("Top"), 100);

    // Regenerating elsewhere from the echoed config gives identical bytes.
    const auto dir = scratch("regen");
    auto echo = load(layout.config());
    echo["out"] = (dir / "exp").string();
    ASSERT_EQ(aa_run({"gen", "--config", write_config(dir, echo).string()}), 0);
    EXPECT_EQ(sha256_file(eventgen::container_path(layout.dataset_stem("normal"))),
              sha256_file(dir / "exp" / "datasets" / "normal.aajd"));
    EXPECT_EQ(sha256_file(eventgen::container_path(layout.dataset_stem("anomaly"))),
              sha256_file(dir / "exp" / "datasets" / "anomaly.aajd"));
    fs::remove_all(dir);
}

TEST(Cli, TrainReportsAndLossColumns) {
    const auto& p = pipeline();
    const auto prior = load(p.exp / "reports" / "prior_run.json");
    const auto aa_report = load(p.exp / "reports" / "aa_run.json");
    EXPECT_EQ(prior.at("epochs").size(), 2u);
    for (const auto& e : prior.at("epochs")) EXPECT_EQ(e.at("l2").get<double>(), 0.0);
    for (const auto& e : aa_report.at("epochs")) {
        EXPECT_GT(e.at("l2").get<double>(), 0.0);
        EXPECT_NEAR(e.at("total").get<double>(), e.at("l1").get<double>() + 0.5 * e.at("l2").get<double>(), 1e-9);
    }
    EXPECT_EQ(aa_report.at("checkpoint_sha256"), sha256_file(p.exp / "checkpoints" / "aa.bin"));
    const std::string csv = read_file(p.exp / "reports" / "aa_loss.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,l1,l2,total,train_acc,test_acc");
}

TEST(Cli, AaWithoutInitNeedsColdStart) {
    const auto dir = scratch("cold");
    const auto cfg = write_config(dir, small_config(dir / "exp")).string();
    ASSERT_EQ(aa_run({"gen", "--config", cfg}), 0);
    EXPECT_EQ(aa_run({"train", "--config", cfg, "--phase", "aa"}), 2);
    EXPECT_EQ(aa_run({"train", "--config", cfg, "--phase", "aa", "--cold-start"}), 0);
    EXPECT_EQ(aa_run({"train", "--config", cfg, "--phase", "aa", "--init", (dir / "nope.json").string()}), 2);
    fs::remove_all(dir);
}

TEST(Cli, ZeroLambdaAaMatchesPriorContinuation) {
    const auto [dir, c] = copy_pipeline("zero");
    const auto ck = dir / "exp" / "checkpoints";
    ASSERT_EQ(aa_run({"train", "--config", c, "--phase", "prior", "--init", (ck / "prior.json").string(),
                      "--checkpoint", (ck / "cont.json").string()}),
              0);
    ASSERT_EQ(aa_run({"train", "--config", c, "--phase", "aa", "--lambda-aa", "0", "--checkpoint",
                      (ck / "aa0.json").string()}),
              0);
    EXPECT_EQ(sha256_file(ck / "cont.bin"), sha256_file(ck / "aa0.bin"));
    EXPECT_NE(sha256_file(ck / "aa.bin"), sha256_file(ck / "aa0.bin"));
    fs::remove_all(dir);
}

TEST(Cli, EvalScoresEveryEventAndReproducesAccuracy) {
    const auto& p = pipeline();
    for (const char* model : {"prior", "aa"}) {
        const auto meta = load(p.exp / "scores" / (std::string(model) + "_normal.json"));
        EXPECT_EQ(meta.at("row_count"), 200);
        const auto rows = cli::read_scores_csv(read_file(p.exp / "scores" / (std::string(model) + "_normal.csv")));
        EXPECT_EQ(rows.size(), 200u);
        const auto anomaly_rows =
            cli::read_scores_csv(read_file(p.exp / "scores" / (std::string(model) + "_anomaly.csv")));
        EXPECT_EQ(anomaly_rows.size(), 120u);

        const auto run = load(p.exp / "reports" / (std::string(model) + "_run.json"));
        const auto ev = load(p.exp / "reports" / ("eval_" + std::string(model) + ".json"));
        EXPECT_NEAR(ev.at("train_accuracy").get<double>(), run.at("train_accuracy").get<double>(), 1e-6);
        EXPECT_NEAR(ev.at("test_accuracy").get<double>(), run.at("test_accuracy").get<double>(), 1e-6);
        EXPECT_TRUE(ev.at("roc").contains("Top_vs_QCD"));
        EXPECT_TRUE(ev.at("centering").contains("EFT"));
    }
    const auto cmp = load(p.exp / "reports" / "roc_compare.json");
    const auto& r = cmp.at("roc").at("Top_vs_QCD");
    EXPECT_DOUBLE_EQ(r.at("difference").get<double>(), r.at("auc_prior").get<double>() - r.at("auc_aa").get<double>());
}

TEST(Cli, EvalRejectsClassCountMismatch) {
    const auto& p = pipeline();
    const auto dir = scratch("mismatch");
    nn::Architecture arch;
    arch.input_height = 16;
    arch.input_width = 16;
    arch.dense_layers = {3};
    arch.num_classes = 3;
    nn::CheckpointMeta meta;
    meta.phase = "prior";
    nn::save_checkpoint(dir / "three.json", nn::init_params(arch, 1), meta);
    EXPECT_EQ(aa_run({"eval", "--config", p.cfg.string(), "--checkpoint", (dir / "three.json").string()}), 2);
    EXPECT_EQ(aa_run({"train", "--config", p.cfg.string(), "--phase", "aa", "--init", (dir / "three.json").string(),
                      "--checkpoint", (dir / "out.json").string()}),
              2);
    fs::remove_all(dir);
}

TEST(Cli, ScanEmitsThreeCurvesAndConsistentSummary) {
    const auto& p = pipeline();
    const auto scan = load(p.exp / "reports" / "scan.json");
    ASSERT_EQ(scan.at("scans").size(), 3u);
    double best = 0.0;
    for (const char* tag : {"0.08", "0.1", "0.12"}) {
        const std::string csv = read_file(p.exp / "reports" / ("scan_delta_" + std::string(tag) + ".csv"));
        std::istringstream in(csv);
        std::string line;
        std::getline(in, line);
        EXPECT_EQ(line, "center,p_min,p_max,eps_QCD,eps_Top,eps_EFT,R,zero_background");
        while (std::getline(in, line)) {
            const auto r_start = line.find_last_of(',', line.size() - 3);
            const double r = std::stod(line.substr(r_start + 1));
            if (line.back() == '0') best = std::max(best, r);
        }
    }
    EXPECT_EQ(scan.at("r_max").get<double>(), best);
    double per_delta = 0.0;
    for (const auto& s : scan.at("scans")) per_delta = std::max(per_delta, s.at("R_max").get<double>());
    EXPECT_EQ(per_delta, best);

    bool hl_lhc = false;
    for (const auto& pt : scan.at("sigma_min")) {
        const double lumi = pt.at("luminosity");
        if (lumi == 3000.0) hl_lhc = true;
        EXPECT_NEAR(pt.at("sigma_min").get<double>() * best * std::sqrt(lumi), 5.0, 1e-12);
    }
    EXPECT_TRUE(hl_lhc);
    EXPECT_EQ(scan.at("sigma_min").size(), 10u);
}

TEST(Cli, ScanRejectsTamperedScores) {
    const auto [dir, cfg] = copy_pipeline("badscores");
    const auto csv = dir / "exp" / "scores" / "aa_normal.csv";
    std::string text = read_file(csv);
    text += "200,QCD,0.5\n";
    write_file(csv, text);
    EXPECT_EQ(aa_run({"scan", "--config", cfg}), 3);
    fs::remove_all(dir);
}

TEST(Cli, ReportValidatesAgainstSchemaAndFlagsTampering) {
    const auto [dir, cfg] = copy_pipeline("report");

    ASSERT_EQ(aa_run({"report", "--config", cfg}), 0);
    const auto report = load(dir / "exp" / "reports" / "report.json");
    const auto schema = load(fs::path(AA_SOURCE_DIR) / "schema" / "report.schema.json");
    const auto errors = validate(report, schema);
    EXPECT_TRUE(errors.empty()) << (errors.empty() ? "" : errors.front());
    EXPECT_TRUE(report.at("integrity").at("all_ok").get<bool>());
    EXPECT_FALSE(report.contains("saturation"));
    EXPECT_TRUE(fs::exists(dir / "exp" / "reports" / "summary.txt"));

    // The validator itself must reject a broken document.
    auto broken = report;
    broken.erase("scan");
    broken["version"] = 2;
    EXPECT_EQ(validate(broken, schema).size(), 2u);

    std::string blob = read_file(dir / "exp" / "checkpoints" / "aa.bin");
    blob[11] ^= 0x01;
    write_file(dir / "exp" / "checkpoints" / "aa.bin", blob);
    ASSERT_EQ(aa_run({"report", "--config", cfg}), 0);
    const auto tampered = load(dir / "exp" / "reports" / "report.json");
    EXPECT_FALSE(tampered.at("integrity").at("all_ok").get<bool>());
    EXPECT_EQ(tampered.at("integrity").at("checks").at("checkpoints/aa.bin").at("status"), "mismatch");
    EXPECT_NE(read_file(dir / "exp" / "reports" / "summary.txt").find("mismatch: checkpoints/aa.bin"),
              std::string::npos);

    fs::remove(dir / "exp" / "reports" / "scan.json");
    fs::remove(dir / "exp" / "scores" / "prior_anomaly.csv");
    testing::internal::CaptureStderr();
    EXPECT_EQ(aa_run({"report", "--config", cfg}), 3);
    const std::string err = testing::internal::GetCapturedStderr();
    EXPECT_NE(err.find("reports/scan.json"), std::string::npos);
    EXPECT_NE(err.find("scores/prior_anomaly.csv"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Cli, SweepAddsSaturationTable) {
    const auto [dir, cfg] = copy_pipeline("sweep");
    auto j = load(cfg);
    j["train"]["epochs"] = 1;
    write_config(dir, j);
    ASSERT_EQ(aa_run({"train", "--config", cfg, "--phase", "sweep"}), 0);
    const auto sweep = load(dir / "exp" / "ablation" / "sweep.json");
    EXPECT_EQ(sweep.at("runs").size(), 3u);
    const std::string csv = read_file(dir / "exp" / "ablation" / "saturation.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "n_anomaly_classes,added_class,mean_centering,gain,held_out_centering");

    ASSERT_EQ(aa_run({"report", "--config", cfg}), 0);
    const auto report = load(dir / "exp" / "reports" / "report.json");
    const auto& table = report.at("saturation").at("table");
    ASSERT_EQ(table.size(), 4u);
    for (std::size_t i = 0; i < table.size(); ++i) EXPECT_EQ(table[i].at("n_anomaly_classes"), i);
    const auto schema = load(fs::path(AA_SOURCE_DIR) / "schema" / "report.schema.json");
    EXPECT_TRUE(validate(report, schema).empty());
    fs::remove_all(dir);
}

TEST(Cli, ReportDigestIsReproducible) {
    const auto& p = pipeline();
    const auto dir = scratch("repro");
    auto j = load(p.cfg);
    j["out"] = (dir / "exp").string();
    const auto cfg = write_config(dir, j).string();
    for (const auto& cmd : std::vector<std::vector<std::string>>{{"gen"},
                                                                  {"train", "--phase", "prior"},
                                                                  {"train", "--phase", "aa"},
                                                                  {"eval"},
                                                                  {"scan"}}) {
        auto args = cmd;
        args.insert(args.end(), {"--config", cfg});
        ASSERT_EQ(aa_run(args), 0);
    }
    const auto copy = dir / "orig";
    fs::copy(p.exp, copy, fs::copy_options::recursive);
    auto j2 = load(p.cfg);
    j2["out"] = copy.string();
    const auto cfg2 = write_config(dir, j2, "orig.json").string();
    ASSERT_EQ(aa_run({"report", "--config", cfg}), 0);
    ASSERT_EQ(aa_run({"report", "--config", cfg2}), 0);
    EXPECT_EQ(read_file(dir / "exp" / "reports" / "report.json"), read_file(copy / "reports" / "report.json"));
    fs::remove_all(dir);
}

TEST(Cli, ConcurrentWriterIsLockedOut) {
    const auto dir = scratch("lock");
    fs::create_directories(dir / "exp");
    const auto cfg = write_config(dir, small_config(dir / "exp")).string();
    {
        cli::ExperimentLock held(dir / "exp");
        EXPECT_THROW(cli::ExperimentLock(dir / "exp"), IoError);
        EXPECT_EQ(aa_run({"gen", "--config", cfg}), 3);
    }
    EXPECT_EQ(aa_run({"gen", "--config", cfg}), 0);
    EXPECT_NO_THROW(cli::ExperimentLock(dir / "exp"));
    fs::remove_all(dir);
}
