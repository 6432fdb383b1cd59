#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "skillnet/commands.hpp"
#include "skillnet/config.hpp"

using namespace skillnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SKILLNET_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

// Byte-compares every file in two directory trees.
void expect_identical_trees(const fs::path& a, const fs::path& b) {
    std::map<std::string, std::string> files_a, files_b;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file())
            files_a[fs::relative(e.path(), a).string()] = slurp(e.path());
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file())
            files_b[fs::relative(e.path(), b).string()] = slurp(e.path());
    REQUIRE(files_a.size() == files_b.size());
    for (const auto& [rel, content] : files_a) {
        REQUIRE(files_b.count(rel));
        INFO("file " << rel);
        CHECK(content == files_b.at(rel));
    }
}

} // namespace

// ---------------------------------------------------------------------------
// config layer
// ---------------------------------------------------------------------------

TEST_CASE("config: defaults match the reference training setup") {
    const RunConfig c = resolve_config({}, {});
    CHECK(c.window == 60);
    CHECK(c.step == 30);
    CHECK(c.learning_rate == 1e-4);
    CHECK(c.batch_size == 600);
    CHECK(c.epochs == 300);
    CHECK(c.maxpool_dropout == 0.2);
    CHECK(c.fc_dropout == 0.5);
    CHECK(c.scheme == Scheme::Loso);
    CHECK(c.preset == Preset::Paper);
}

TEST_CASE("config: emit -> parse round-trips exactly") {
    RunConfig c;
    c.task = TaskSelection{Task::KnotTying};
    c.scheme = Scheme::HoldOut;
    c.labeling = LabelMode::GrsThreshold;
    c.preset = Preset::Desk;
    c.seed = 987;
    c.jobs = 3;
    c.dataset_root = "data/synth";
    c.out_dir = "results";
    c.window = 90;
    c.step = 45;
    c.hidden1 = 512;
    c.hidden2 = 64;
    c.maxpool_dropout = 0.25;
    c.fc_dropout = 0.4;
    c.learning_rate = 3.5e-4;
    c.batch_size = 128;
    c.epochs = 77;
    c.validation_fraction = 0.15;
    c.validation_split = ValidationSplit::PerTrial;
    c.trial_vote = true;
    c.synth_subjects = 6;
    c.synth_trials = 5;
    c.synth_min_frames = 100;
    c.synth_max_frames = 200;

    const RunConfig parsed = parse_config(emit_config(c));
    CHECK(parsed == c);

    // And the default config round-trips too.
    const RunConfig d;
    CHECK(parse_config(emit_config(d)) == d);
}

TEST_CASE("config: flag overrides file overrides default (three layers)") {
    // Default window 60; file says 30; flag says 90.
    ConfigMap file{{"data.window", "30"}, {"run.seed", "7"}};
    ConfigMap flags{{"data.window", "90"}};

    const RunConfig none = resolve_config({}, {});
    CHECK(none.window == 60);

    const RunConfig file_only = resolve_config(file, {});
    CHECK(file_only.window == 30);
    CHECK(file_only.seed == 7);

    const RunConfig both = resolve_config(file, flags);
    CHECK(both.window == 90); // flag wins
    CHECK(both.seed == 7);    // file survives where no flag given
}

TEST_CASE("config: desk preset lowers the optimizer budget unless overridden") {
    const RunConfig desk = resolve_config({{"run.preset", "desk"}}, {});
    CHECK(desk.batch_size == OptimizerConfig::desk().batch_size);
    CHECK(desk.epochs == OptimizerConfig::desk().epochs);

    const RunConfig pinned =
        resolve_config({{"run.preset", "desk"}, {"train.epochs", "123"}}, {});
    CHECK(pinned.epochs == 123); // explicit value beats the preset
}

TEST_CASE("config: unknown keys and malformed lines are configuration errors") {
    CHECK_THROWS_AS(resolve_config({{"run.banana", "1"}}, {}), ConfigError);
    std::istringstream bad("task 60\n");
    CHECK_THROWS_AS(parse_config_text(bad, "<t>"), ConfigError);
    std::istringstream bad2("[run\n");
    CHECK_THROWS_AS(parse_config_text(bad2, "<t>"), ConfigError);
}

// ---------------------------------------------------------------------------
// CLI subprocess checks
// ---------------------------------------------------------------------------

TEST_CASE("cli: synth twice with the same seed is byte-identical") {
    const fs::path a = temp_dir("skillnet_cli_synth_a");
    const fs::path b = temp_dir("skillnet_cli_synth_b");
    std::ofstream cfg_file(a / "small.cfg");
    cfg_file << "[synth]\nsubjects = 2\ntrials = 5\nmin_frames = 60\nmax_frames = 90\n";
    cfg_file.close();
    const std::string cfg_arg = " --config " + (a / "small.cfg").string();
    REQUIRE(run_cli("synth --seed 99 --out " + a.string() + cfg_arg) == 0);
    REQUIRE(run_cli("synth --seed 99 --out " + b.string() + cfg_arg) == 0);
    fs::remove(a / "small.cfg");
    expect_identical_trees(a, b);

    // Manifest present with all three tasks.
    const std::string manifest = slurp(a / "manifest.csv");
    CHECK(manifest.find("su,") != std::string::npos);
    CHECK(manifest.find("np,") != std::string::npos);
    CHECK(manifest.find("kt,") != std::string::npos);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("cli: default synth spec writes 8 subjects x 5 trials x 3 tasks") {
    const RunConfig defaults;
    CHECK(defaults.synth_subjects == 8);
    CHECK(defaults.synth_trials == 5);

    const fs::path out = temp_dir("skillnet_cli_synth_default");
    REQUIRE(run_cli("synth --seed 1 --out " + out.string()) == 0);
    const std::string manifest = slurp(out / "manifest.csv");
    std::size_t rows = 0;
    std::istringstream is(manifest);
    std::string line;
    while (std::getline(is, line))
        if (!line.empty() && line[0] != '#' && line.find(',') != std::string::npos &&
            line != std::string(kManifestHeader))
            ++rows;
    CHECK(rows == 8 * 5 * 3);
    fs::remove_all(out);
}

TEST_CASE("cli: exit codes for input errors") {
    CHECK(run_cli("preprocess --data /nonexistent/path --out /tmp/skillnet_nowhere") == 2);
    CHECK(run_cli("fly-to-the-moon") == 2);
    CHECK(run_cli("evaluate --window 45") == 2); // window restricted to {30,60,90}
}

TEST_CASE("cli: preprocess counts follow the crop-count formula") {
    const fs::path data = temp_dir("skillnet_cli_data");
    const fs::path out = temp_dir("skillnet_cli_out");

    // Small corpus for speed.
    std::ofstream cfg_file(data / "synth.cfg");
    cfg_file << "[synth]\nsubjects = 2\ntrials = 5\nmin_frames = 90\nmax_frames = 150\n";
    cfg_file.close();
    REQUIRE(run_cli("synth --seed 4 --out " + data.string() + " --config " +
                    (data / "synth.cfg").string()) == 0);

    RunConfig cfg;
    cfg.dataset_root = data.string();
    cfg.out_dir = out.string();
    cfg.synth_subjects = 2;
    const PreprocessSummary summary = cmd_preprocess(cfg);

    // Oracle: sum the formula over each trial's two instances.
    ParseOptions popts;
    for (const auto& [task, count] : summary.crop_counts) {
        const Corpus corpus = load_corpus(data, task, popts);
        std::size_t expected = 0;
        for (const TrialRecording& t : corpus)
            expected += 2 * expected_crop_count(t.frames, cfg.window_config());
        CHECK(count == expected);

        // Cache exists and reloads bit-exact.
        const fs::path cache = out / ("crops_" + task_code(task) + "_w60_l30_self.bin");
        REQUIRE(fs::exists(cache));
        auto [crops, prov] = load_crop_cache(cache);
        CHECK(crops.size() == count);
        CHECK(prov.window.window_width == 60);
    }
    fs::remove_all(data);
    fs::remove_all(out);
}

TEST_CASE("cli: evaluate on a tiny synthetic corpus is deterministic") {
    const fs::path data = temp_dir("skillnet_cli_eval_data");
    const fs::path out_a = temp_dir("skillnet_cli_eval_a");
    const fs::path out_b = temp_dir("skillnet_cli_eval_b");

    std::ofstream cfg_file(data / "run.cfg");
    cfg_file << "[run]\npreset = desk\n";
    cfg_file << "[synth]\nsubjects = 3\ntrials = 5\nmin_frames = 70\nmax_frames = 100\n";
    cfg_file << "[data]\nwindow = 30\n";
    cfg_file << "[train]\nepochs = 2\nbatch_size = 32\n";
    cfg_file.close();

    REQUIRE(run_cli("synth --seed 6 --out " + data.string() + " --config " +
                    (data / "run.cfg").string()) == 0);

    const std::string common = " --config " + (data / "run.cfg").string() + " --data " +
                               data.string() + " --task su --scheme holdout --seed 5";
    REQUIRE(run_cli("evaluate --out " + out_a.string() + common) == 0);
    REQUIRE(run_cli("evaluate --out " + out_b.string() + common) == 0);

    // Timing artifacts carry wall-clock values; everything else must match
    // byte for byte.
    for (const auto& e : fs::directory_iterator(out_a)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("timing_", 0) == 0) continue;
        INFO("artifact " << name);
        REQUIRE(fs::exists(out_b / name));
        CHECK(slurp(e.path()) == slurp(out_b / name));
    }

    // The report documents the run and carries the aggregate accuracy.
    const fs::path report = out_a / "report_su_holdout_w30_self_seed5.txt";
    REQUIRE(fs::exists(report));
    const std::string doc = slurp(report);
    CHECK(doc.find("schema = skillnet-report/1") != std::string::npos);
    CHECK(doc.find("aggregate.accuracy = ") != std::string::npos);
    CHECK(doc.find("fold1.accuracy = ") != std::string::npos);

    // Checkpoints reload.
    const fs::path ckpt = out_a / "checkpoint_su_holdout_w30_self_seed5_fold1.ckpt";
    REQUIRE(fs::exists(ckpt));
    const ModelParams params = load_checkpoint(ckpt);
    CHECK(params.spec.window_width == 30);

    fs::remove_all(data);
    fs::remove_all(out_a);
    fs::remove_all(out_b);
}

TEST_CASE("cli: training divergence exits with code 3") {
    const fs::path data = temp_dir("skillnet_cli_div_data");
    std::ofstream cfg_file(data / "div.cfg");
    cfg_file << "[run]\npreset = desk\n";
    cfg_file << "[synth]\nsubjects = 2\ntrials = 5\nmin_frames = 70\nmax_frames = 90\n";
    cfg_file << "[data]\nwindow = 30\n";
    // An absurd learning rate blows the parameters up within a few steps.
    cfg_file << "[train]\nepochs = 40\nbatch_size = 16\nlearning_rate = 1e150\n";
    cfg_file.close();

    REQUIRE(run_cli("synth --seed 8 --out " + data.string() + " --config " +
                    (data / "div.cfg").string()) == 0);
    CHECK(run_cli("evaluate --task su --scheme holdout --out " + (data / "out").string() +
                  " --data " + data.string() + " --config " + (data / "div.cfg").string()) == 3);
    fs::remove_all(data);
}

TEST_CASE("cli: benchmark emits the window-sweep table") {
    const fs::path data = temp_dir("skillnet_cli_bench_data");
    const fs::path out = temp_dir("skillnet_cli_bench_out");
    std::ofstream cfg_file(data / "bench.cfg");
    cfg_file << "[run]\npreset = desk\n";
    cfg_file << "[synth]\nsubjects = 2\ntrials = 5\nmin_frames = 100\nmax_frames = 140\n";
    cfg_file << "[train]\nepochs = 2\nbatch_size = 32\n";
    cfg_file.close();

    REQUIRE(run_cli("synth --seed 9 --out " + data.string() + " --config " +
                    (data / "bench.cfg").string()) == 0);
    REQUIRE(run_cli("benchmark --task kt --scheme holdout --seed 3 --out " + out.string() +
                    " --data " + data.string() + " --config " +
                    (data / "bench.cfg").string()) == 0);

    const fs::path table = out / "benchmark_kt_holdout_self_seed3.csv";
    REQUIRE(fs::exists(table));
    std::ifstream is(table);
    std::string line;
    REQUIRE(std::getline(is, line));
    CHECK(line == "window,f1_novice,f1_intermediate,f1_expert,accuracy,running_time_ms");
    std::size_t rows = 0;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 3); // W = 30, 60, 90
    fs::remove_all(data);
    fs::remove_all(out);
}

TEST_CASE("cli: synth rejects a single-subject corpus") {
    const fs::path out = temp_dir("skillnet_cli_synth_one");
    std::ofstream cfg_file(out / "one.cfg");
    cfg_file << "[synth]\nsubjects = 1\n";
    cfg_file.close();
    CHECK(run_cli("synth --out " + out.string() + " --config " + (out / "one.cfg").string()) ==
          2);
    fs::remove_all(out);
}
