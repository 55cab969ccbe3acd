// weaver: experiment runner.
//
//   weaver run                --config exp.json [--output DIR] [--seed-override S] [--jobs N]
//   weaver cross-eval         --config exp.json ...
//   weaver ablation           --config exp.json ...
//   weaver project-embeddings --config exp.json ...
//   weaver aso                --config scores.json [--output result.json]
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or usage.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "weaver/error.hpp"
#include "weaver/experiment.hpp"
#include "weaver/log.hpp"

namespace {

struct Args {
    std::string config;
    std::string output;
    std::optional<std::uint64_t> seed_override;
    std::size_t jobs = 1;
    bool verbose = false;
};

void add_common(CLI::App* cmd, Args& args) {
    cmd->add_option("--config", args.config, "JSON configuration file")->required();
    cmd->add_option("--output", args.output, "Output directory (overrides output_dir)");
    cmd->add_option("--seed-override", args.seed_override, "Run a single seed instead of the configured list");
    cmd->add_option("--jobs", args.jobs, "Maximum number of concurrent runs")->check(CLI::PositiveNumber);
    cmd->add_flag("-v,--verbose", args.verbose, "Log progress to stderr");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual learning for sequence tagging with size-weighted weight averaging"};
    app.require_subcommand(1);
    Args args;
    auto* run = app.add_subcommand("run", "Run all strategies over the configured orders and seeds");
    auto* cross = app.add_subcommand("cross-eval", "Train one model per corpus and evaluate on every test set");
    auto* abl = app.add_subcommand("ablation", "WEAVER with and without a frozen layer prefix");
    auto* proj = app.add_subcommand("project-embeddings", "Export PCA projections of token embeddings");
    auto* aso = app.add_subcommand("aso", "Almost stochastic order test on two score lists");
    for (auto* cmd : {run, cross, abl, proj, aso}) {
        add_common(cmd, args);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (args.verbose) {
        weaver::set_log_level(weaver::LogLevel::info);
    }

    try {
        if (aso->parsed()) {
            return weaver::run_aso_file(args.config, args.output);
        }
        weaver::ExperimentConfig config = weaver::load_experiment_config(args.config);
        if (!args.output.empty()) {
            config.output_dir = args.output;
        }
        const weaver::RunOptions options{args.jobs, args.seed_override};
        int code = 0;
        if (run->parsed()) {
            code = weaver::run_experiment(config, options);
        } else if (cross->parsed()) {
            code = weaver::run_cross_eval(config, options);
        } else if (abl->parsed()) {
            code = weaver::run_ablation(config, options);
        } else if (proj->parsed()) {
            code = weaver::run_project_embeddings(config, options);
        }
        if (code != 0) {
            std::cerr << fmt::format("FAILED: see {}/FAILED\n", config.output_dir);
        }
        return code;
    } catch (const weaver::ConfigError& e) {
        std::cerr << "error: invalid configuration: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "FAILED: " << e.what() << "\n";
        return 1;
    }
}
