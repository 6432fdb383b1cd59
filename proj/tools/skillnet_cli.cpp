// Command-line front end: preprocess, synth, train, evaluate, benchmark.
// Flag values override config-file values, which override the built-in
// built-in defaults.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "skillnet/commands.hpp"
#include "skillnet/config.hpp"

namespace {

constexpr int kExitInput = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

struct FlagValues {
    std::string config_path;
    std::string task, scheme, labeling, preset;
    std::uint64_t seed = 0;
    std::size_t window = 0;
    int jobs = 0;
    std::string out, data;
};

// Only flags the user actually passed become overrides.
skillnet::ConfigMap collect_flags(const CLI::App& app, const FlagValues& v) {
    skillnet::ConfigMap flags;
    auto passed = [&](const std::string& name) { return app.count(name) > 0; };
    if (passed("--task")) flags["run.task"] = v.task;
    if (passed("--scheme")) flags["run.scheme"] = v.scheme;
    if (passed("--labeling")) flags["run.labeling"] = v.labeling;
    if (passed("--preset")) flags["run.preset"] = v.preset;
    if (passed("--seed")) flags["run.seed"] = std::to_string(v.seed);
    if (passed("--window")) flags["data.window"] = std::to_string(v.window);
    if (passed("--jobs")) flags["run.jobs"] = std::to_string(v.jobs);
    if (passed("--out")) flags["run.out"] = v.out;
    if (passed("--data")) flags["run.dataset_root"] = v.data;
    return flags;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Surgeon skill classification from robot kinematics"};
    app.require_subcommand(1);
    app.fallthrough();

    FlagValues v;
    app.add_option("--config", v.config_path, "Config file (key = value with [section] headers)");
    app.add_option("--seed", v.seed, "Base RNG seed");
    app.add_option("--task", v.task, "Task: su, np, kt, or all")
        ->check(CLI::IsMember({"su", "np", "kt", "all"}));
    app.add_option("--scheme", v.scheme, "Validation scheme")
        ->check(CLI::IsMember({"loso", "holdout"}));
    app.add_option("--window", v.window, "Sliding-window width")
        ->check(CLI::IsMember({"30", "60", "90"}));
    app.add_option("--labeling", v.labeling, "Labeling policy")
        ->check(CLI::IsMember({"self", "grs"}));
    app.add_option("--preset", v.preset, "Optimizer preset")
        ->check(CLI::IsMember({"paper", "desk"}));
    app.add_option("--jobs", v.jobs, "Max concurrent folds (default 1, bit-reproducible)");
    app.add_option("--out", v.out, "Output directory");
    app.add_option("--data", v.data, "Dataset root (manifest.csv or JIGSAWS layout)");

    auto* preprocess = app.add_subcommand("preprocess", "Parse, normalize, crop, cache");
    auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
    auto* train = app.add_subcommand("train", "Train under the configured scheme");
    auto* evaluate = app.add_subcommand("evaluate", "Train and report fold/aggregate metrics");
    auto* benchmark = app.add_subcommand("benchmark", "Sweep window sizes, table per task");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return kExitInput;
    }

    try {
        skillnet::ConfigMap file;
        if (!v.config_path.empty()) file = skillnet::parse_config_file(v.config_path);
        const skillnet::RunConfig cfg = skillnet::resolve_config(file, collect_flags(app, v));

        if (synth->parsed()) return skillnet::cmd_synth(cfg);
        if (preprocess->parsed()) {
            skillnet::cmd_preprocess(cfg);
            return 0;
        }
        if (train->parsed()) return skillnet::cmd_train(cfg);
        if (evaluate->parsed()) return skillnet::cmd_evaluate(cfg);
        if (benchmark->parsed()) return skillnet::cmd_benchmark(cfg);
        return kExitInput;
    } catch (const skillnet::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const skillnet::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const skillnet::Error& e) { // config, input, parse
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
}
