#include "aa/cli.hpp"

#include "aa/errors.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace aa::cli {

int run(const std::vector<std::string>& args) {
    CLI::App app{"Anomaly-awareness experiments on toy jet images"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<double> lambda;
    std::vector<double> deltas;
    TrainOptions train_opts;
    std::optional<std::string> init, checkpoint;

    const auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--seed", seed, "override the global seed");
        sub->add_option("--out", out, "override the experiment directory");
        sub->add_option("--lambda-aa", lambda, "override train.lambda_aa");
        sub->add_option("--delta", deltas, "override analysis.deltas (repeatable)");
    };
    auto* gen = app.add_subcommand("gen", "generate datasets and average images");
    auto* train = app.add_subcommand("train", "run the prior, AA or ablation-sweep training phase");
    auto* eval = app.add_subcommand("eval", "score datasets and emit PDF/ROC data");
    auto* scan = app.add_subcommand("scan", "window scan, R_max and sigma_min");
    auto* report = app.add_subcommand("report", "consolidated report with provenance digests");
    for (auto* s : {gen, train, eval, scan, report}) common(s);
    train->add_option("--phase", train_opts.phase, "prior | aa | sweep")
        ->check(CLI::IsMember({"prior", "aa", "sweep"}));
    train->add_option("--init", init, "initial checkpoint (default checkpoints/prior.json)");
    train->add_flag("--cold-start", train_opts.cold_start, "allow aa/sweep without an initial checkpoint");
    train->add_option("--checkpoint", checkpoint, "output checkpoint path");
    eval->add_option("--checkpoint", checkpoint, "evaluate only this checkpoint");

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        ExperimentConfig config = load_config(config_path);
        if (seed) config.seed = *seed;
        if (out) config.out = *out;
        if (lambda) config.train.lambda_aa = *lambda;
        if (!deltas.empty()) config.analysis.deltas = deltas;
        config.validate();

        if (gen->parsed()) {
            cmd_gen(config);
        } else if (train->parsed()) {
            if (init) train_opts.init = fs::path(*init);
            if (checkpoint) train_opts.checkpoint_out = fs::path(*checkpoint);
            cmd_train(config, train_opts);
        } else if (eval->parsed()) {
            EvalOptions opts;
            if (checkpoint) opts.checkpoint = fs::path(*checkpoint);
            cmd_eval(config, opts);
        } else if (scan->parsed()) {
            cmd_scan(config);
        } else if (report->parsed()) {
            std::cout << cmd_report(config) << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "aa: error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "aa: error: malformed JSON artifact: " << e.what() << "\n";
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "aa: error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "aa: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace aa::cli
