#pragma once

// Implementations behind the CLI subcommands: preprocess, synth, train,
// evaluate, benchmark. Everything lands under the configured output
// directory. Report and checkpoint artifacts are deterministic under fixed
// config and seeds; wall-clock numbers go to separate timing artifacts.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "skillnet/checkpoint.hpp"
#include "skillnet/config.hpp"
#include "skillnet/datapipe.hpp"
#include "skillnet/errors.hpp"
#include "skillnet/eval.hpp"
#include "skillnet/optim.hpp"

namespace skillnet {

namespace detail {

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// Encodes task, scheme, window, labeling policy, and seed into file names.
inline std::string artifact_tag(const RunConfig& cfg, Task task) {
    return task_code(task) + "_" + scheme_name(cfg.scheme) + "_w" + std::to_string(cfg.window) +
           "_" + label_mode_name(cfg.labeling) + "_seed" + std::to_string(cfg.seed);
}

inline const std::array<std::string, 3> kClassKeys{"novice", "intermediate", "expert"};

inline void emit_report(const fs::path& path, const RunConfig& cfg, Task task,
                        const ExperimentResult& result) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write report: " + path.string());
    os << "schema = skillnet-report/1\n";
    os << "task = " << task_code(task) << "\n";
    os << "scheme = " << scheme_name(cfg.scheme) << "\n";
    os << "window = " << cfg.window << "\n";
    os << "step = " << cfg.step << "\n";
    os << "labeling = " << label_mode_name(cfg.labeling) << "\n";
    os << "preset = " << preset_name(cfg.preset) << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "folds = " << result.folds.size() << "\n";
    os << "evaluated_crops = " << result.aggregate.evaluated << "\n";
    os << "aggregate.accuracy = " << fmt(result.aggregate.accuracy) << "\n";
    if (result.aggregate.trial_vote_enabled) {
        // Extension beyond the per-window basis; labeled as such.
        os << "extension.trial_vote.accuracy = " << fmt(result.aggregate.trial_vote_accuracy)
           << "\n";
        os << "extension.trial_vote.trials = " << result.aggregate.trial_vote_total << "\n";
    }
    for (std::size_t k = 0; k < 3; ++k) {
        const ClassMetrics& m = result.aggregate.per_class[k];
        os << "aggregate.precision." << kClassKeys[k] << " = " << fmt(m.precision) << "\n";
        os << "aggregate.recall." << kClassKeys[k] << " = " << fmt(m.recall) << "\n";
        os << "aggregate.f1." << kClassKeys[k] << " = " << fmt(m.f1) << "\n";
        os << "aggregate.support." << kClassKeys[k] << " = " << (m.has_support ? "true" : "false")
           << "\n";
    }
    for (const FoldResult& fr : result.folds) {
        const std::string p = "fold" + std::to_string(fr.fold_index) + ".";
        os << p << "failed = " << (fr.failed ? "true" : "false") << "\n";
        if (fr.failed) {
            os << p << "failure = " << fr.failure << "\n";
            continue;
        }
        os << p << "evaluated = " << fr.report.evaluated << "\n";
        os << p << "accuracy = " << fmt(fr.report.accuracy) << "\n";
        for (std::size_t k = 0; k < 3; ++k) {
            const ClassMetrics& m = fr.report.per_class[k];
            os << p << "precision." << kClassKeys[k] << " = " << fmt(m.precision) << "\n";
            os << p << "recall." << kClassKeys[k] << " = " << fmt(m.recall) << "\n";
            os << p << "f1." << kClassKeys[k] << " = " << fmt(m.f1) << "\n";
        }
        if (fr.report.trial_vote_enabled) {
            os << p << "extension.trial_vote.accuracy = " << fmt(fr.report.trial_vote_accuracy)
               << "\n";
            os << p << "extension.trial_vote.trials = " << fr.report.trial_vote_total << "\n";
        }
        os << p << "best_epoch = " << fr.train_state.best_epoch << "\n";
        os << p << "best_val_accuracy = " << fmt(fr.train_state.best_val_accuracy) << "\n";
    }
    os << "warnings = " << result.warnings.size() << "\n";
    for (std::size_t i = 0; i < result.warnings.size(); ++i)
        os << "warning" << i + 1 << " = " << result.warnings[i] << "\n";
    if (!os) throw IoError("report write failed: " + path.string());
}

inline void emit_confusion(const fs::path& path, const ConfusionMatrix& cm) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write confusion matrix: " + path.string());
    os << "# counts; rows = ground truth, columns = prediction\n";
    os << "truth\\pred,novice,intermediate,expert\n";
    for (std::size_t r = 0; r < 3; ++r) {
        os << kClassKeys[r];
        for (std::size_t c = 0; c < 3; ++c) os << ',' << cm.counts[r][c];
        os << '\n';
    }
    os << "\n# row-normalized\n";
    os << "truth\\pred,novice,intermediate,expert\n";
    const auto norm = cm.normalized();
    for (std::size_t r = 0; r < 3; ++r) {
        os << kClassKeys[r];
        for (std::size_t c = 0; c < 3; ++c) os << ',' << fmt(norm[r][c]);
        os << '\n';
    }
    if (!os) throw IoError("confusion write failed: " + path.string());
}

// Wall-clock values; the only artifact that is not byte-stable across runs.
inline void emit_timing(const fs::path& path, const ExperimentResult& result) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write timing table: " + path.string());
    os << "fold,running_time_ms\n";
    for (const FoldResult& fr : result.folds)
        if (!fr.failed && !fr.report.empty_test)
            os << fr.fold_index << ',' << fmt(fr.report.running_time_ms) << '\n';
    os << "mean," << fmt(result.timing.mean_ms) << '\n';
    os << "variance," << fmt(result.timing.variance_ms2) << '\n';
}

inline void print_table(const std::vector<std::vector<std::string>>& rows) {
    if (rows.empty()) return;
    std::vector<std::size_t> widths;
    for (const auto& row : rows) {
        if (widths.size() < row.size()) widths.resize(row.size(), 0);
        for (std::size_t i = 0; i < row.size(); ++i)
            widths[i] = std::max(widths[i], row[i].size());
    }
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            std::cout << row[i];
            if (i + 1 < row.size())
                std::cout << std::string(widths[i] - row[i].size() + 2, ' ');
        }
        std::cout << '\n';
    }
}

inline FoldPlan make_plan(const RunConfig& cfg, const Corpus& corpus) {
    return cfg.scheme == Scheme::Loso ? make_loso_plan(corpus)
                                      : make_holdout_plan(corpus, cfg.seed);
}

inline ExperimentResult run_configured_experiment(const RunConfig& cfg, const Corpus& corpus) {
    ExperimentOptions options;
    options.window = cfg.window_config();
    options.training = cfg.train_options();
    options.jobs = cfg.jobs;
    options.trial_majority_vote = cfg.trial_vote;
    const FoldPlan plan = make_plan(cfg, corpus);
    return run_experiment(corpus, plan, cfg.architecture(), cfg.optimizer(), cfg.policy(),
                          options);
}

// Emits the full artifact set for one finished experiment.
inline void emit_experiment_artifacts(const RunConfig& cfg, Task task,
                                      const ExperimentResult& result) {
    const fs::path out(cfg.out_dir);
    ensure_dir(out);
    const std::string tag = artifact_tag(cfg, task);
    emit_report(out / ("report_" + tag + ".txt"), cfg, task, result);
    emit_confusion(out / ("confusion_" + tag + "_aggregate.csv"), result.aggregate.confusion);
    for (const FoldResult& fr : result.folds) {
        if (fr.failed) continue;
        const std::string fold = "_fold" + std::to_string(fr.fold_index);
        emit_confusion(out / ("confusion_" + tag + fold + ".csv"), fr.report.confusion);
        write_learning_curve(out / ("curves_" + tag + fold + ".csv"), fr.train_state.history);
        save_checkpoint(out / ("checkpoint_" + tag + fold + ".ckpt"),
                        fr.train_state.best_params);
    }
    emit_timing(out / ("timing_" + tag + ".csv"), result);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

// Writes the synthetic dataset (all three tasks) plus manifest under the
// output directory; byte-identical under the same seed.
inline int cmd_synth(const RunConfig& cfg) {
    if (cfg.synth_subjects < 2)
        throw InputError("synth: at least 2 subjects required (LOSO needs held-out subjects "
                         "with every trial index)");
    Corpus all;
    for (Task task : std::vector<Task>{Task::Suturing, Task::NeedlePassing, Task::KnotTying}) {
        SyntheticSpec spec;
        spec.subjects = cfg.synth_subjects;
        spec.trials_per_subject = cfg.synth_trials;
        spec.min_frames = cfg.synth_min_frames;
        spec.max_frames = cfg.synth_max_frames;
        spec.task = task;
        spec.seed = cfg.seed;
        Corpus corpus = generate_synthetic_corpus(spec);
        all.insert(all.end(), std::make_move_iterator(corpus.begin()),
                   std::make_move_iterator(corpus.end()));
    }
    detail::ensure_dir(cfg.out_dir);
    const fs::path manifest = write_corpus(cfg.out_dir, all);
    std::cout << "wrote " << all.size() << " trials (" << cfg.synth_subjects << " subjects x "
              << cfg.synth_trials << " trials x 3 tasks) under " << cfg.out_dir << "\n";
    std::cout << "manifest: " << manifest.string() << "\n";
    return 0;
}

struct PreprocessSummary {
    std::map<Task, std::size_t> crop_counts;
};

// Parses, normalizes, splits, and crops every selected task, writes a crop
// cache per task, and prints per-task crop counts.
inline PreprocessSummary cmd_preprocess(const RunConfig& cfg) {
    if (cfg.dataset_root.empty())
        throw InputError("preprocess: no dataset root configured (set run.dataset_root or --data)");
    detail::ensure_dir(cfg.out_dir);
    ParseOptions popts;
    popts.validate_rotations = cfg.validate_rotations;

    PreprocessSummary summary;
    std::vector<std::vector<std::string>> table{{"task", "trials", "crops", "cache"}};
    for (Task task : cfg.task.resolve()) {
        Corpus corpus;
        try {
            corpus = load_corpus(cfg.dataset_root, task, popts);
        } catch (const InputError&) {
            if (cfg.task.task) throw; // explicit task must exist
            continue;                 // skip tasks absent from the manifest
        }
        const std::vector<WindowCrop> crops = build_crops(corpus, cfg.policy(),
                                                          cfg.window_config());
        const std::string cache_name = "crops_" + task_code(task) + "_w" +
                                       std::to_string(cfg.window) + "_l" +
                                       std::to_string(cfg.step) + "_" +
                                       label_mode_name(cfg.labeling) + ".bin";
        const fs::path cache_path = fs::path(cfg.out_dir) / cache_name;
        save_crop_cache(cache_path, crops,
                        CropCacheProvenance{task, cfg.window_config(), cfg.labeling});
        summary.crop_counts[task] = crops.size();
        table.push_back({task_name(task), std::to_string(corpus.size()),
                         std::to_string(crops.size()), cache_path.string()});
    }
    if (summary.crop_counts.empty())
        throw InputError("preprocess: no tasks found under " + cfg.dataset_root);
    detail::print_table(table);
    return summary;
}

struct ExperimentSummary {
    std::map<Task, ExperimentResult> results;
    bool any_failed = false;
};

namespace detail {

// Shared backbone of train/evaluate: run the configured scheme per task and
// emit the artifact set.
inline ExperimentSummary run_and_emit(const RunConfig& cfg) {
    if (cfg.dataset_root.empty())
        throw InputError("no dataset root configured (set run.dataset_root or --data)");
    ParseOptions popts;
    popts.validate_rotations = cfg.validate_rotations;

    ExperimentSummary summary;
    for (Task task : cfg.task.resolve()) {
        Corpus corpus;
        try {
            corpus = load_corpus(cfg.dataset_root, task, popts);
        } catch (const InputError&) {
            if (cfg.task.task) throw;
            continue;
        }
        ExperimentResult result = run_configured_experiment(cfg, corpus);
        emit_experiment_artifacts(cfg, task, result);
        for (const FoldResult& fr : result.folds) summary.any_failed |= fr.failed;
        summary.results.emplace(task, std::move(result));
    }
    if (summary.results.empty())
        throw InputError("no tasks found under " + cfg.dataset_root);
    return summary;
}

inline void print_experiment_summary(const ExperimentSummary& summary, const RunConfig& cfg) {
    std::vector<std::vector<std::string>> table{{"task", "scheme", "W", "f1_novice", "f1_interm",
                                                 "f1_expert", "accuracy", "time_ms"}};
    for (const auto& [task, result] : summary.results) {
        table.push_back({task_name(task), scheme_name(cfg.scheme), std::to_string(cfg.window),
                         fmt4(result.aggregate.per_class[0].f1),
                         fmt4(result.aggregate.per_class[1].f1),
                         fmt4(result.aggregate.per_class[2].f1),
                         fmt4(result.aggregate.accuracy),
                         fmt4(result.aggregate.running_time_ms)});
    }
    print_table(table);
    for (const auto& [task, result] : summary.results)
        for (const std::string& w : result.warnings)
            std::cout << "warning [" << task_name(task) << "] " << w << "\n";
}

} // namespace detail

// Trains under the configured scheme; checkpoints, learning curves, fold and
// aggregate reports all land under the output directory.
inline int cmd_train(const RunConfig& cfg) {
    const ExperimentSummary summary = detail::run_and_emit(cfg);
    for (const auto& [task, result] : summary.results) {
        for (const FoldResult& fr : result.folds) {
            if (fr.failed) continue;
            std::cout << task_name(task) << " fold " << fr.fold_index << ": best epoch "
                      << fr.train_state.best_epoch << ", validation accuracy "
                      << detail::fmt4(fr.train_state.best_val_accuracy) << "\n";
        }
    }
    detail::print_experiment_summary(summary, cfg);
    return summary.any_failed ? 3 : 0;
}

inline int cmd_evaluate(const RunConfig& cfg) {
    const ExperimentSummary summary = detail::run_and_emit(cfg);
    detail::print_experiment_summary(summary, cfg);
    for (const auto& [task, result] : summary.results)
        std::cout << "aggregate accuracy [" << task_name(task)
                  << "] = " << detail::fmt4(result.aggregate.accuracy) << "\n";
    return summary.any_failed ? 3 : 0;
}

// Sweeps the window sizes and emits a per-task timing/accuracy table.
inline int cmd_benchmark(const RunConfig& cfg) {
    bool any_failed = false;
    std::vector<std::vector<std::string>> table{{"task", "scheme", "W", "f1_novice", "f1_interm",
                                                 "f1_expert", "accuracy", "time_ms"}};
    detail::ensure_dir(cfg.out_dir);

    for (Task task : cfg.task.resolve()) {
        RunConfig probe = cfg;
        probe.task = TaskSelection{task};
        std::ofstream bench(fs::path(cfg.out_dir) /
                            ("benchmark_" + task_code(task) + "_" + scheme_name(cfg.scheme) +
                             "_" + label_mode_name(cfg.labeling) + "_seed" +
                             std::to_string(cfg.seed) + ".csv"));
        if (!bench) throw IoError("cannot write benchmark table");
        bench << "window,f1_novice,f1_intermediate,f1_expert,accuracy,running_time_ms\n";

        for (std::size_t w : {std::size_t{30}, std::size_t{60}, std::size_t{90}}) {
            RunConfig wc = probe;
            wc.window = w;
            ExperimentSummary summary;
            try {
                summary = detail::run_and_emit(wc);
            } catch (const InputError&) {
                if (cfg.task.task) throw;
                continue;
            }
            const ExperimentResult& r = summary.results.at(task);
            any_failed |= summary.any_failed;
            table.push_back({task_name(task), scheme_name(cfg.scheme), std::to_string(w),
                             detail::fmt4(r.aggregate.per_class[0].f1),
                             detail::fmt4(r.aggregate.per_class[1].f1),
                             detail::fmt4(r.aggregate.per_class[2].f1),
                             detail::fmt4(r.aggregate.accuracy),
                             detail::fmt4(r.aggregate.running_time_ms)});
            bench << w << ',' << detail::fmt(r.aggregate.per_class[0].f1) << ','
                  << detail::fmt(r.aggregate.per_class[1].f1) << ','
                  << detail::fmt(r.aggregate.per_class[2].f1) << ','
                  << detail::fmt(r.aggregate.accuracy) << ','
                  << detail::fmt(r.aggregate.running_time_ms) << '\n';
        }
    }
    detail::print_table(table);
    return any_failed ? 3 : 0;
}

} // namespace skillnet
