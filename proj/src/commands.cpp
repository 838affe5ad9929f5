#include "aa/checkpoint.hpp"
#include "aa/cli.hpp"
#include "aa/dataset_io.hpp"
#include "aa/digest.hpp"
#include "aa/errors.hpp"
#include "aa/file_util.hpp"
#include "aa/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

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

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

json provenance(const Layout& layout, const ExperimentConfig& config, const std::vector<fs::path>& inputs) {
    json in = json::object();
    for (const auto& p : inputs) in[relative(layout, p)] = sha256_file(p);
    return {{"config_sha256", config_digest(config)}, {"inputs", in}};
}

std::vector<fs::path> dataset_files(const fs::path& stem) {
    return {eventgen::container_path(stem), eventgen::sidecar_path(stem)};
}

bool dataset_exists(const fs::path& stem) {
    return fs::exists(eventgen::container_path(stem)) && fs::exists(eventgen::sidecar_path(stem));
}

train::TrainConfig train_config(const ExperimentConfig& config) {
    train::TrainConfig tc = config.train;
    tc.seed = derive_seed(config.seed, "train");
    return tc;
}

const char* optimizer_name(train::Optimizer o) { return o == train::Optimizer::adam ? "adam" : "sgd"; }

std::string delta_tag(double delta) { return format_double(delta); }

void check_model_fits(const nn::Params& params, const ExperimentConfig& config, const fs::path& path) {
    const auto& arch = params.architecture();
    if (arch.num_classes != static_cast<int>(config.normal.size()))
        throw ConfigError("checkpoint " + path.string() + " has " + std::to_string(arch.num_classes) +
                          " outputs but the experiment has " + std::to_string(config.normal.size()) +
                          " normal classes");
    if (arch.input_height != config.generator.height || arch.input_width != config.generator.width)
        throw ConfigError("checkpoint " + path.string() + " expects another image shape");
}

nn::Params initial_params(const Layout& layout, const ExperimentConfig& config, const TrainOptions& options,
                          const train::TrainConfig& tc, fs::path& init_path) {
    init_path = options.init ? *options.init : layout.checkpoint("prior");
    if (fs::exists(init_path)) {
        auto ck = nn::load_checkpoint(init_path);
        check_model_fits(ck.params, config, init_path);
        return std::move(ck.params);
    }
    if (!options.cold_start)
        throw ConfigError("phase '" + options.phase + "' needs an initial checkpoint (" + init_path.string() +
                          " is missing); pass --init or --cold-start");
    init_path.clear();
    return nn::init_params(config.resolved_architecture(), tc.seed);
}

struct ScoreFile {
    std::vector<analysis::ScoreRecord> records;
    json meta;
};

ScoreFile load_scores(const Layout& layout, const std::string& model, const std::string& dataset) {
    const auto csv = layout.scores() / (model + "_" + dataset + ".csv");
    const auto meta_path = layout.scores() / (model + "_" + dataset + ".json");
    if (!fs::exists(csv) || !fs::exists(meta_path))
        throw DataError("missing score file " + csv.string() + " (run eval first)");
    ScoreFile f;
    const std::string text = read_file(csv);
    f.meta = read_json(meta_path);
    if (f.meta.value("csv_sha256", "") != sha256_hex(text))
        throw DataError("score file " + csv.string() + " does not match its metadata digest");
    f.records = read_scores_csv(text);
    return f;
}

std::vector<analysis::ScoreRecord> select(const ScoreFile& f, const std::string& split) {
    std::vector<analysis::ScoreRecord> out;
    const auto& ids = f.meta.at("splits").at(split);
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const auto i = id.get<std::size_t>();
        if (i >= f.records.size()) throw DataError("score metadata lists event " + std::to_string(i) + " past the end");
        out.push_back(f.records[i]);
    }
    return out;
}

std::size_t axis_of(const ExperimentConfig& config, const std::string& cls) {
    const auto names = config.normal_names();
    return static_cast<std::size_t>(std::find(names.begin(), names.end(), cls) - names.begin());
}

}  // namespace

// ---------------------------------------------------------------- scores CSV

std::string write_scores_csv(const std::vector<analysis::ScoreRecord>& records) {
    const std::size_t k = records.empty() ? 0 : records.front().probs.size();
    std::string out = "event_id,true_class";
    for (std::size_t i = 0; i < k; ++i) out += ",p_" + std::to_string(i);
    out += '\n';
    for (std::size_t r = 0; r < records.size(); ++r) {
        out += std::to_string(r) + "," + records[r].true_class;
        for (double p : records[r].probs) out += "," + format_double(p);
        out += '\n';
    }
    return out;
}

std::vector<analysis::ScoreRecord> read_scores_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::size_t k = 0;
    std::vector<analysis::ScoreRecord> out;
    const auto split = [](const std::string& s) {
        std::vector<std::string> f;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= s.size(); ++i)
            if (i == s.size() || s[i] == ',') {
                f.push_back(s.substr(start, i - start));
                start = i + 1;
            }
        return f;
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto f = split(line);
        if (line_no == 1) {
            if (f.size() < 3 || f[0] != "event_id" || f[1] != "true_class")
                throw ParseError("score file: bad header", line_no);
            for (std::size_t i = 2; i < f.size(); ++i)
                if (f[i] != "p_" + std::to_string(i - 2)) throw ParseError("score file: bad header column", line_no);
            k = f.size() - 2;
            continue;
        }
        if (line.empty()) throw ParseError("score file: empty line", line_no);
        if (f.size() != k + 2)
            throw ParseError("score file: expected " + std::to_string(k + 2) + " fields, got " +
                                 std::to_string(f.size()),
                             line_no);
        std::size_t id = 0;
        auto [ip, iec] = std::from_chars(f[0].data(), f[0].data() + f[0].size(), id);
        if (iec != std::errc() || ip != f[0].data() + f[0].size() || id != out.size())
            throw ParseError("score file: bad event_id '" + f[0] + "'", line_no);
        if (f[1].empty()) throw ParseError("score file: empty class", line_no);
        analysis::ScoreRecord rec{std::vector<double>(k), f[1]};
        for (std::size_t i = 0; i < k; ++i) {
            const auto& s = f[i + 2];
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), rec.probs[i]);
            if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(rec.probs[i]) || rec.probs[i] < 0.0 ||
                rec.probs[i] > 1.0)
                throw ParseError("score file: bad probability '" + s + "'", line_no);
        }
        out.push_back(std::move(rec));
    }
    if (line_no == 0) throw ParseError("score file: empty", 1);
    return out;
}

// ---------------------------------------------------------------- gen

void cmd_gen(const ExperimentConfig& config) {
    config.validate();
    const Layout layout{config.out};
    ExperimentLock lock(layout.root);
    write_json(layout.config(), config_echo(config));

    const auto save = [&](const std::vector<eventgen::ClassSpec>& specs, int count, const std::string& which) {
        const auto ds = eventgen::generate_dataset(specs, count, config.split_fraction,
                                                   derive_seed(config.seed, "dataset-" + which), config.generator);
        eventgen::save_dataset(ds, {specs, config.generator, count, config.split_fraction},
                               layout.dataset_stem(which));
        for (const auto& c : ds.classes)
            eventgen::write_pgm(eventgen::average_image(ds, c), ds.height, ds.width,
                                layout.datasets() / ("avg_" + c + ".pgm"));
    };
    save(config.normal, config.per_class_count, "normal");
    if (!config.anomalies.empty()) save(config.anomalies, config.anomaly_per_class_count, "anomaly");
}

// ---------------------------------------------------------------- train

void cmd_train(const ExperimentConfig& config, const TrainOptions& options) {
    config.validate();
    const Layout layout{config.out};
    ExperimentLock lock(layout.root);
    const auto normal_stem = layout.dataset_stem("normal");
    const auto anomaly_stem = layout.dataset_stem("anomaly");
    if (!dataset_exists(normal_stem)) throw DataError("missing dataset " + normal_stem.string() + " (run gen first)");
    const auto normal = eventgen::load_dataset(normal_stem);
    if (normal.classes != config.normal_names())
        throw ConfigError("normal dataset classes differ from the configured normal classes");
    const auto arch = config.resolved_architecture();
    const auto tc = train_config(config);
    std::vector<fs::path> inputs = dataset_files(normal_stem);

    if (options.phase == "prior" || options.phase == "aa") {
        const bool prior = options.phase == "prior";
        std::optional<nn::Params> init;
        fs::path init_path;
        if (prior && options.init) {
            auto ck = nn::load_checkpoint(*options.init);
            check_model_fits(ck.params, config, *options.init);
            init = std::move(ck.params);
            init_path = *options.init;
        } else if (!prior) {
            init = initial_params(layout, config, options, tc, init_path);
        }
        if (!init_path.empty()) {
            inputs.push_back(init_path);
            inputs.push_back(fs::path(init_path).replace_extension(".bin"));
        }

        train::RunResult result;
        if (prior) {
            result = train::prior_run(normal, arch, tc, init ? &*init : nullptr);
        } else {
            if (tc.lambda_aa > 0.0 && tc.anomaly_classes.empty())
                throw ConfigError("phase 'aa' with lambda_aa > 0 needs train.anomaly_classes");
            eventgen::Dataset anomalies;
            anomalies.height = normal.height;
            anomalies.width = normal.width;
            if (!tc.anomaly_classes.empty()) {
                if (!dataset_exists(anomaly_stem))
                    throw DataError("missing dataset " + anomaly_stem.string() + " (run gen first)");
                anomalies = eventgen::load_dataset(anomaly_stem).subset(tc.anomaly_classes);
                for (const auto& p : dataset_files(anomaly_stem)) inputs.push_back(p);
            }
            result = train::aa_run(normal, anomalies, arch, tc, *init);
        }

        const fs::path ck_path = options.checkpoint_out ? *options.checkpoint_out : layout.checkpoint(options.phase);
        const std::string stem = ck_path.stem().string();
        nn::CheckpointMeta meta;
        meta.seed = tc.seed;
        meta.epoch = prior ? tc.epochs : tc.aa_run_epochs();
        meta.phase = options.phase;
        meta.optimizer = optimizer_name(tc.optimizer);
        meta.optimizer_steps = result.report.optimizer_steps;
        meta.extra = {{"config_sha256", config_digest(config)},
                      {"init", init_path.empty() ? json(nullptr) : json(relative(layout, init_path))}};
        const std::string digest = nn::save_checkpoint(ck_path, result.params, meta);
        result.report.checkpoint = relative(layout, ck_path);

        json report = result.report;
        report["checkpoint_sha256"] = digest;
        report["provenance"] = provenance(layout, config, inputs);
        write_json(layout.reports() / (stem + "_run.json"), report);
        write_file(layout.reports() / (stem + "_loss.csv"), train::loss_curve_csv(result.report));
        return;
    }

    if (options.phase == "sweep") {
        if (!dataset_exists(anomaly_stem)) throw DataError("missing dataset " + anomaly_stem.string());
        const auto pool = eventgen::load_dataset(anomaly_stem);
        for (const auto& p : dataset_files(anomaly_stem)) inputs.push_back(p);
        fs::path init_path;
        const auto init = initial_params(layout, config, options, tc, init_path);
        if (!init_path.empty()) {
            inputs.push_back(init_path);
            inputs.push_back(fs::path(init_path).replace_extension(".bin"));
        }
        const auto sweep =
            train::ablation_sweep(normal, pool, config.ablation.order, config.ablation.held_out, arch, tc, init);
        json j = sweep;
        j["provenance"] = provenance(layout, config, inputs);
        write_json(layout.ablation() / "sweep.json", j);

        std::string csv = "n_anomaly_classes,added_class,mean_centering,gain,held_out_centering\n";
        double prev = sweep.baseline_mean_centering;
        csv += "0,," + format_double(prev) + ",0,";
        if (sweep.held_out) csv += format_double(sweep.baseline_centering.at(*sweep.held_out));
        csv += '\n';
        for (const auto& r : sweep.runs) {
            csv += std::to_string(r.aware.size()) + "," + r.aware.back() + "," + format_double(r.mean_centering) +
                   "," + format_double(r.mean_centering - prev) + ",";
            if (r.held_out_centering) csv += format_double(*r.held_out_centering);
            csv += '\n';
            prev = r.mean_centering;
        }
        write_file(layout.ablation() / "saturation.csv", csv);
        return;
    }
    throw ConfigError("unknown phase '" + options.phase + "' (expected prior, aa or sweep)");
}

// ---------------------------------------------------------------- eval

void cmd_eval(const ExperimentConfig& config, const EvalOptions& options) {
    config.validate();
    const Layout layout{config.out};
    ExperimentLock lock(layout.root);

    std::vector<fs::path> checkpoints;
    if (options.checkpoint) {
        checkpoints.push_back(*options.checkpoint);
    } else {
        for (const char* phase : {"prior", "aa"})
            if (fs::exists(layout.checkpoint(phase))) checkpoints.push_back(layout.checkpoint(phase));
    }
    if (checkpoints.empty()) throw DataError("no checkpoints to evaluate in " + layout.checkpoints().string());

    std::vector<std::pair<std::string, fs::path>> datasets;
    for (const char* which : {"normal", "anomaly"})
        if (dataset_exists(layout.dataset_stem(which))) datasets.emplace_back(which, layout.dataset_stem(which));
    if (datasets.empty() || datasets.front().first != "normal")
        throw DataError("missing dataset " + layout.dataset_stem("normal").string() + " (run gen first)");

    const auto normal_names = config.normal_names();
    const int bins = config.analysis.histogram_bins;

    for (const auto& ck_path : checkpoints) {
        const auto ck = nn::load_checkpoint(ck_path);
        check_model_fits(ck.params, config, ck_path);
        const std::string model = ck_path.stem().string();
        const std::vector<fs::path> ck_files{ck_path, fs::path(ck_path).replace_extension(".bin")};

        json eval = {{"model", model},
                     {"checkpoint", relative(layout, ck_path)},
                     {"checkpoint_sha256", ck.blob_sha256},
                     {"normal_classes", normal_names}};
        json centering = json::object();
        json pdfs = json::object();
        std::vector<fs::path> inputs = ck_files;

        for (const auto& [which, stem] : datasets) {
            const auto ds = eventgen::load_dataset(stem);
            for (const auto& p : dataset_files(stem)) inputs.push_back(p);
            const auto records = analysis::score_dataset(ck.params, ds);
            const std::string csv = write_scores_csv(records);
            const auto csv_path = layout.scores() / (model + "_" + which + ".csv");
            write_file(csv_path, csv);

            std::vector<fs::path> score_inputs = ck_files;
            for (const auto& p : dataset_files(stem)) score_inputs.push_back(p);
            write_json(layout.scores() / (model + "_" + which + ".json"),
                       {{"model", model},
                        {"dataset", which},
                        {"classes", ds.classes},
                        {"axes", normal_names},
                        {"row_count", records.size()},
                        {"csv_sha256", sha256_hex(csv)},
                        {"splits", ds.splits},
                        {"provenance", provenance(layout, config, score_inputs)}});

            std::vector<analysis::ScoreRecord> test;
            for (std::size_t i : ds.split("test")) test.push_back(records[i]);
            for (const auto& c : ds.classes) {
                const auto cls = analysis::filter_class(test, c);
                if (cls.empty()) continue;
                centering[c] = analysis::centering(test, c);
                json axes = json::object();
                for (std::size_t a = 0; a < normal_names.size(); ++a)
                    axes[normal_names[a]] = analysis::pdf_histogram(cls, a, bins);
                pdfs[c] = axes;
            }

            if (which == "normal") {
                std::vector<analysis::ScoreRecord> tr;
                for (std::size_t i : ds.split("train")) tr.push_back(records[i]);
                const auto acc = [&](const std::vector<analysis::ScoreRecord>& rs) {
                    std::size_t ok = 0;
                    for (const auto& r : rs) {
                        const auto pred = static_cast<std::size_t>(
                            std::max_element(r.probs.begin(), r.probs.end()) - r.probs.begin());
                        ok += ds.classes[pred] == r.true_class;
                    }
                    return rs.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(rs.size());
                };
                eval["train_accuracy"] = acc(tr);
                eval["test_accuracy"] = acc(test);
                json roc = json::object();
                for (std::size_t a = 1; a < normal_names.size(); ++a)
                    roc[normal_names[a] + "_vs_" + normal_names[0]] =
                        analysis::roc_auc(test, normal_names[a], normal_names[0], a);
                eval["roc"] = roc;
            }
            if (normal_names.size() >= 3) {
                json simplex = json::object();
                for (const auto& c : ds.classes) {
                    const auto cls = analysis::filter_class(test, c);
                    if (!cls.empty()) simplex[c] = analysis::simplex_pdf(cls, 0, 1, bins);
                }
                eval["simplex_" + which] = simplex;
            }
        }
        eval["centering"] = centering;
        eval["pdfs"] = pdfs;
        eval["provenance"] = provenance(layout, config, inputs);
        write_json(layout.reports() / ("eval_" + model + ".json"), eval);
    }

    // AUC change between the prior and AA models, when both are evaluated.
    const auto prior_eval = layout.reports() / "eval_prior.json";
    const auto aa_eval = layout.reports() / "eval_aa.json";
    if (fs::exists(prior_eval) && fs::exists(aa_eval)) {
        const auto p = read_json(prior_eval);
        const auto a = read_json(aa_eval);
        json cmp = json::object();
        for (const auto& [key, value] : p.at("roc").items()) {
            const double ap = value.at("auc").get<double>();
            const double aa = a.at("roc").at(key).at("auc").get<double>();
            cmp[key] = {{"auc_prior", ap}, {"auc_aa", aa}, {"difference", ap - aa}};
        }
        write_json(layout.reports() / "roc_compare.json",
                   {{"roc", cmp}, {"provenance", provenance(layout, config, {prior_eval, aa_eval})}});
    }
}

// ---------------------------------------------------------------- scan

void cmd_scan(const ExperimentConfig& config) {
    config.validate();
    const Layout layout{config.out};
    ExperimentLock lock(layout.root);
    const auto& s = config.analysis;

    std::vector<analysis::ScoreRecord> records;
    std::vector<fs::path> inputs;
    for (const char* which : {"normal", "anomaly"}) {
        const auto f = load_scores(layout, s.model, which);
        auto part = select(f, s.split);
        records.insert(records.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
        inputs.push_back(layout.scores() / (s.model + "_" + which + ".csv"));
        inputs.push_back(layout.scores() / (s.model + "_" + which + ".json"));
    }
    const std::size_t axis = axis_of(config, s.axis_class);
    std::vector<std::string> classes = s.backgrounds;
    classes.push_back(s.anomaly);

    json deltas = json::array();
    double best = 0.0;
    std::optional<double> best_delta;
    std::vector<double> r_max;
    for (double delta : s.deltas) {
        const double step = s.step ? *s.step : delta / 10.0;
        const auto scan = analysis::scan_windows(records, delta, step, s.cross_sections, s.anomaly, s.backgrounds, axis);
        std::string csv = "center,p_min,p_max";
        for (const auto& c : classes) csv += ",eps_" + c;
        csv += ",R,zero_background\n";
        for (const auto& pt : scan.points) {
            csv += format_double(pt.center) + "," + format_double(pt.window.p_min) + "," +
                   format_double(pt.window.p_max);
            for (const auto& c : classes) {
                const auto it = pt.efficiency.find(c);
                csv += "," + format_double(it == pt.efficiency.end() ? 0.0 : it->second.value);
            }
            csv += "," + format_double(pt.r.value) + "," + (pt.r.zero_background ? "1" : "0") + "\n";
        }
        write_file(layout.reports() / ("scan_delta_" + delta_tag(delta) + ".csv"), csv);
        json j = scan;
        deltas.push_back(j);
        r_max.push_back(scan.r_max);
        if (scan.argmax && scan.r_max > best) {
            best = scan.r_max;
            best_delta = delta;
        }
    }
    if (!best_delta) throw NumericError("scan: every window has zero background or zero anomaly efficiency");

    std::string csv = "luminosity,sigma_min";
    for (double d : s.deltas) csv += ",sigma_min_delta_" + delta_tag(d);
    csv += '\n';
    json curve = json::array();
    for (double lumi : s.luminosities) {
        const double sm = analysis::sigma_min(best, lumi);
        csv += format_double(lumi) + "," + format_double(sm);
        for (double r : r_max) csv += "," + (r > 0.0 ? format_double(analysis::sigma_min(r, lumi)) : std::string());
        csv += '\n';
        curve.push_back({{"luminosity", lumi}, {"sigma_min", sm}});
    }
    write_file(layout.reports() / "sigma_min.csv", csv);

    write_json(layout.reports() / "scan.json",
               {{"model", s.model},
                {"split", s.split},
                {"axis_class", s.axis_class},
                {"anomaly", s.anomaly},
                {"backgrounds", s.backgrounds},
                {"cross_sections", s.cross_sections},
                {"scans", deltas},
                {"r_max", best},
                {"best_delta", *best_delta},
                {"sigma_min", curve},
                {"provenance", provenance(layout, config, inputs)}});
}

}  // namespace aa::cli
