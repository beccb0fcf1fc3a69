// Command-line harness: train lifted networks from a JSON config, run the
// proposition/bound check suites, and dump per-sweep inference traces.

#include "lifted/lifted.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace lifted;

namespace {

DatasetSplit load_data(const ExperimentConfig& cfg) {
    if (!fs::exists(cfg.data_dir))
        throw std::runtime_error("data_dir does not exist: " + cfg.data_dir +
                                 " (set data_dir in the config or the LIFTED_DATA_DIR env var)");
    return load_mnist_split(cfg.data_dir, cfg.n_train, cfg.n_val, cfg.split_seed, cfg.target_scale);
}

int cmd_train(const std::string& config_path) {
    ExperimentConfig cfg = load_config(config_path);
    DatasetSplit data = load_data(cfg);
    fs::create_directories(cfg.output_dir);

    {
        std::ofstream echo(cfg.output_dir + "/config_echo.json");
        Json j = config_to_json(cfg);
        j["provenance"] = data.provenance;
        echo << j.dump(2) << "\n";
    }

    Json report_json;
    double sum_test = 0.0;
    for (std::uint64_t seed : cfg.seeds) {
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        std::cout << "=== seed " << seed << " ===\n";
        auto [params, report] = train(cfg.arch, cfg.objective, tc, data, &std::cout);
        const std::string tag = "seed" + std::to_string(seed);
        {
            std::ofstream metrics(cfg.output_dir + "/metrics_" + tag + ".csv");
            write_metrics_csv(metrics, report);
        }
        save_checkpoint(cfg.output_dir + "/checkpoint_" + tag + ".bin", cfg.arch, params);
        Json r;
        r["best_epoch"] = report.best_epoch;
        r["best_val_accuracy"] = report.best_val_accuracy;
        r["best_test_accuracy"] = report.best_test_accuracy;
        r["pretrain_epochs"] = report.pretrain_epochs;
        r["adam_reset_at_handoff"] = report.adam_reset_at_handoff;
        r["stopped_early"] = report.stopped_early;
        report_json["seeds"][tag] = r;
        sum_test += report.best_test_accuracy;
        std::cout << tag << ": best_epoch=" << report.best_epoch
                  << " val=" << report.best_val_accuracy
                  << " test=" << report.best_test_accuracy << "\n";
    }
    report_json["mean_test_accuracy"] = sum_test / static_cast<double>(cfg.seeds.size());
    std::ofstream out(cfg.output_dir + "/report.json");
    out << report_json.dump(2) << "\n";
    std::cout << "mean test accuracy: " << report_json["mean_test_accuracy"] << "\n";
    return 0;
}

int cmd_propcheck(const std::string& suite, int trials, std::uint64_t seed,
                  const std::string& csv_path) {
    std::vector<CheckResult> results = check_propositions(suite, trials, seed);
    std::cout << format_check_report(results);
    if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        write_check_csv(csv, results);
    }
    for (const auto& r : results)
        if (!r.passed()) return 1;
    return 0;
}

int cmd_infer_trace(const std::string& config_path, int sample,
                    const std::string& checkpoint_path) {
    ExperimentConfig cfg = load_config(config_path);
    DatasetSplit data = load_data(cfg);
    if (sample < 0 || sample >= data.train_x.rows())
        throw std::runtime_error("sample index " + std::to_string(sample) +
                                 " out of range [0, " + std::to_string(data.train_x.rows()) + ")");
    Architecture arch = cfg.arch;
    NetworkParams params;
    if (!checkpoint_path.empty()) {
        auto loaded = load_checkpoint(checkpoint_path);
        arch = loaded.first;
        params = std::move(loaded.second);
    } else {
        params = init_params(arch, cfg.seeds.front());
    }
    PotentialSpec spec = PotentialSpec::for_architecture(arch);
    if (cfg.objective.gamma.size() > 0) spec = spec.with_gamma(cfg.objective.gamma);

    Matrix x = data.train_x.middleRows(sample, 1);
    Matrix y = data.train_targets.middleRows(sample, 1);
    LossTerm loss;
    switch (cfg.objective.variant) {
        case ObjectiveVariant::Backprop: loss = LossTerm::none(); break;
        case ObjectiveVariant::Rovr:
        case ObjectiveVariant::TargetedRovr:
            loss = LossTerm::plus_target(cfg.objective.beta, y);
            break;
        default: loss = LossTerm::minus_target(cfg.objective.beta, y); break;
    }

    InferenceConfig icfg = cfg.objective.inference;
    icfg.record_trajectory = true;
    InferenceTrace trace;
    std::cout << "sweep,objective,residual\n";
    try {
        infer(arch, params, spec, icfg, x, loss, &trace);
    } catch (const DivergedError&) {
        // fall through: partial trace plus a marker row
    }
    for (size_t i = 0; i < trace.objective.size(); ++i)
        std::cout << i << "," << trace.objective[i] << "," << trace.residual[i] << "\n";
    if (trace.diverged) std::cout << trace.diverged_sweep << ",diverged,diverged\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Training and diagnostics harness for lifted feed-forward networks"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, csv_path;
    std::string suite = "all";
    int trials = 500, sample = 0;
    std::uint64_t seed = 0;

    CLI::App* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
    train_cmd->add_option("--config", config_path, "path to the experiment config")->required();

    CLI::App* prop_cmd = app.add_subcommand("propcheck", "run numerical property suites");
    prop_cmd->add_option("--suite", suite, "prop1..prop5, eq14, eq18, or all");
    prop_cmd->add_option("--trials", trials, "random instances per suite");
    prop_cmd->add_option("--seed", seed, "base seed");
    prop_cmd->add_option("--csv", csv_path, "also write the report as CSV");

    CLI::App* trace_cmd = app.add_subcommand("infer-trace", "per-sweep objective/residual CSV");
    trace_cmd->add_option("--config", config_path, "path to the experiment config")->required();
    trace_cmd->add_option("--sample", sample, "train-split sample index");
    trace_cmd->add_option("--checkpoint", checkpoint_path, "optional trained checkpoint");

    CLI11_PARSE(app, argc, argv);
    try {
        if (train_cmd->parsed()) return cmd_train(config_path);
        if (prop_cmd->parsed()) return cmd_propcheck(suite, trials, seed, csv_path);
        if (trace_cmd->parsed()) return cmd_infer_trace(config_path, sample, checkpoint_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
