#pragma once

// Experiment orchestration: leave-one-supertrial-out and hold-out fold
// planning, per-class precision/recall/f1, confusion matrices, wall-clock
// classification timing, and fold-parallel execution with deterministic
// aggregation.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "skillnet/datapipe.hpp"
#include "skillnet/errors.hpp"
#include "skillnet/network.hpp"
#include "skillnet/optim.hpp"

namespace skillnet {

enum class Scheme { Loso, HoldOut };

inline std::string scheme_name(Scheme s) { return s == Scheme::Loso ? "loso" : "holdout"; }

inline Scheme parse_scheme(std::string_view s) {
    if (s == "loso") return Scheme::Loso;
    if (s == "holdout") return Scheme::HoldOut;
    throw InputError("unknown scheme: " + std::string(s));
}

inline constexpr std::size_t kTrialsPerSubject = 5;

// Trial-level train/test partitions. Splitting at trial level keeps both
// manipulator instances and every crop of a trial on one side of the fold.
struct FoldPlan {
    struct Fold {
        std::vector<std::size_t> train_trials; // indices into the corpus
        std::vector<std::size_t> test_trials;
    };
    Scheme scheme = Scheme::Loso;
    std::vector<Fold> folds;
    std::uint64_t seed = 0; // HoldOut only
};

namespace detail {

// Subject -> (trial index -> corpus position); validates the 1..5 layout.
inline std::map<std::string, std::map<int, std::size_t>> index_trials(const Corpus& corpus) {
    std::map<std::string, std::map<int, std::size_t>> by_subject;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const TrialRecording& t = corpus[i];
        auto [it, inserted] = by_subject[t.subject_id].emplace(t.trial_index, i);
        if (!inserted)
            throw InputError("duplicate trial " + std::to_string(t.trial_index) + " for subject " +
                             t.subject_id);
    }
    std::string gaps;
    for (const auto& [subject, trials] : by_subject) {
        for (int r = 1; r <= static_cast<int>(kTrialsPerSubject); ++r) {
            if (!trials.count(r)) {
                if (!gaps.empty()) gaps += "; ";
                gaps += "subject " + subject + " missing trial " + std::to_string(r);
            }
        }
        if (trials.size() != kTrialsPerSubject) {
            for (const auto& [r, idx] : trials)
                if (r < 1 || r > static_cast<int>(kTrialsPerSubject)) {
                    if (!gaps.empty()) gaps += "; ";
                    gaps += "subject " + subject + " has out-of-range trial " + std::to_string(r);
                }
        }
    }
    if (!gaps.empty()) throw InputError("corpus is not 5 trials per subject: " + gaps);
    if (by_subject.empty()) throw InputError("corpus has no trials");
    return by_subject;
}

} // namespace detail

// Five folds; fold i tests on the supertrial formed by the i-th trial of
// every subject.
inline FoldPlan make_loso_plan(const Corpus& corpus) {
    const auto by_subject = detail::index_trials(corpus);
    FoldPlan plan;
    plan.scheme = Scheme::Loso;
    plan.folds.resize(kTrialsPerSubject);
    for (std::size_t f = 0; f < kTrialsPerSubject; ++f) {
        const int held = static_cast<int>(f) + 1;
        for (const auto& [subject, trials] : by_subject) {
            for (const auto& [r, idx] : trials)
                (r == held ? plan.folds[f].test_trials : plan.folds[f].train_trials).push_back(idx);
        }
    }
    return plan;
}

// One fold holding out a uniformly random trial per subject.
inline FoldPlan make_holdout_plan(const Corpus& corpus, std::uint64_t seed) {
    const auto by_subject = detail::index_trials(corpus);
    FoldPlan plan;
    plan.scheme = Scheme::HoldOut;
    plan.seed = seed;
    plan.folds.resize(1);
    Rng rng(derive_seed(seed, 0x484f4c44ull)); // "HOLD"
    for (const auto& [subject, trials] : by_subject) {
        const int held = static_cast<int>(rng.below(kTrialsPerSubject)) + 1;
        for (const auto& [r, idx] : trials)
            (r == held ? plan.folds[0].test_trials : plan.folds[0].train_trials).push_back(idx);
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, 3>, 3> counts{};

    std::uint64_t total() const {
        std::uint64_t n = 0;
        for (const auto& row : counts)
            for (std::uint64_t c : row) n += c;
        return n;
    }
    std::uint64_t trace() const { return counts[0][0] + counts[1][1] + counts[2][2]; }
    std::uint64_t row_total(std::size_t r) const {
        return counts[r][0] + counts[r][1] + counts[r][2];
    }

    // Row-normalized probabilities; rows with zero support come back all
    // zero (callers flag them via row_total).
    std::array<std::array<double, 3>, 3> normalized() const {
        std::array<std::array<double, 3>, 3> out{};
        for (std::size_t r = 0; r < 3; ++r) {
            const std::uint64_t rt = row_total(r);
            if (rt == 0) continue;
            for (std::size_t c = 0; c < 3; ++c)
                out[r][c] = static_cast<double>(counts[r][c]) / static_cast<double>(rt);
        }
        return out;
    }

    void add(const ConfusionMatrix& other) {
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 3; ++c) counts[r][c] += other.counts[r][c];
    }
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool has_support = false; // class present in the ground truth
};

struct EvalReport {
    std::array<ClassMetrics, 3> per_class{};
    double accuracy = 0.0;
    ConfusionMatrix confusion;
    double running_time_ms = 0.0;
    std::string scheme;
    std::size_t fold = 0; // 1-based; 0 marks an aggregate
    std::size_t evaluated = 0;
    bool empty_test = false;
    // Optional extension, off by default: accuracy after majority-voting
    // all window predictions of each trial. The per-window numbers above
    // remain the primary basis.
    bool trial_vote_enabled = false;
    double trial_vote_accuracy = 0.0;
    std::size_t trial_vote_total = 0;
};

// Majority vote of window predictions per parent trial; ties break toward
// the lowest class index. Returns (correct trials, total trials).
inline std::pair<std::size_t, std::size_t> majority_vote_by_trial(
    const std::vector<WindowCrop>& crops, const std::vector<int>& predicted) {
    if (crops.size() != predicted.size())
        throw InputError("majority vote: prediction count mismatch");
    struct Tally {
        std::array<std::size_t, 3> votes{};
        SkillClass truth = SkillClass::Novice;
    };
    std::map<std::string, Tally> by_trial;
    for (std::size_t i = 0; i < crops.size(); ++i) {
        const CropSource& s = crops[i].source;
        Tally& t = by_trial[task_code(s.task) + "/" + s.subject_id + "/" +
                            std::to_string(s.trial_index)];
        t.votes[static_cast<std::size_t>(predicted[i])] += 1;
        t.truth = crops[i].label;
    }
    std::size_t correct = 0;
    for (const auto& [key, tally] : by_trial) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < 3; ++k)
            if (tally.votes[k] > tally.votes[best]) best = k;
        if (best == static_cast<std::size_t>(tally.truth)) ++correct;
    }
    return {correct, by_trial.size()};
}

// One-vs-rest precision/recall/f1 per class plus overall accuracy.
// Zero-denominator metrics are reported as 0 with the support flag cleared.
inline EvalReport compute_metrics(const std::vector<int>& truth,
                                  const std::vector<int>& predicted) {
    if (truth.size() != predicted.size())
        throw InputError("compute_metrics: label vectors differ in length");
    if (truth.empty()) throw InputError("compute_metrics: empty label vectors");

    EvalReport report;
    report.evaluated = truth.size();
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] > 2 || predicted[i] < 0 || predicted[i] > 2)
            throw InputError("compute_metrics: label outside {0,1,2}");
        report.confusion.counts[static_cast<std::size_t>(truth[i])]
                               [static_cast<std::size_t>(predicted[i])] += 1;
    }
    for (std::size_t k = 0; k < 3; ++k) {
        const double tp = static_cast<double>(report.confusion.counts[k][k]);
        double fp = 0.0, fn = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            if (j == k) continue;
            fp += static_cast<double>(report.confusion.counts[j][k]);
            fn += static_cast<double>(report.confusion.counts[k][j]);
        }
        ClassMetrics& m = report.per_class[k];
        m.has_support = report.confusion.row_total(k) > 0;
        m.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
        m.recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
        m.f1 = m.precision + m.recall > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
    }
    report.accuracy =
        static_cast<double>(report.confusion.trace()) / static_cast<double>(truth.size());
    return report;
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

struct TimingStats {
    double mean_ms = 0.0;
    double variance_ms2 = 0.0;
    std::size_t samples = 0;
};

// Wall-clock duration of classifying every crop, excluding parsing and
// cropping. Repetitions give a variance alongside the mean.
inline TimingStats measure_running_time(const ModelParams& params,
                                        const std::vector<WindowCrop>& crops,
                                        std::size_t repetitions = 1) {
    TimingStats stats;
    if (repetitions == 0) return stats;
    std::vector<std::size_t> all(crops.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

    TrainingBatch batch;
    if (!crops.empty()) batch = to_batch(crops, all);

    std::vector<double> times;
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
        const auto start = std::chrono::steady_clock::now();
        if (!crops.empty()) {
            const std::vector<int> classes = predict(params, batch.inputs);
            volatile int sink = classes.empty() ? 0 : classes[0];
            (void)sink;
        }
        const auto end = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(end - start).count());
    }
    stats.samples = times.size();
    for (double t : times) stats.mean_ms += t;
    stats.mean_ms /= static_cast<double>(times.size());
    for (double t : times) stats.variance_ms2 += (t - stats.mean_ms) * (t - stats.mean_ms);
    stats.variance_ms2 /= static_cast<double>(times.size());
    return stats;
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

struct ExperimentOptions {
    WindowConfig window;
    TrainOptions training;
    int jobs = 1;
    std::size_t timing_repetitions = 1;
    bool trial_majority_vote = false; // clearly-labeled extension, off by default
};

struct FoldResult {
    std::size_t fold_index = 0; // 1-based
    EvalReport report;
    TrainState train_state;
    bool failed = false;
    std::string failure;
    std::vector<std::string> warnings;
};

struct ExperimentResult {
    Scheme scheme = Scheme::Loso;
    std::vector<FoldResult> folds;
    EvalReport aggregate;       // fold-mean metrics, pooled confusion counts
    TimingStats timing;         // across folds
    std::vector<std::string> warnings;
};

namespace detail {

inline Corpus gather_trials(const Corpus& corpus, const std::vector<std::size_t>& indices) {
    Corpus out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(corpus[i]);
    return out;
}

inline FoldResult run_single_fold(const Corpus& corpus, const FoldPlan::Fold& fold,
                                  std::size_t fold_index, Scheme scheme,
                                  const ArchitectureSpec& arch, const OptimizerConfig& base_config,
                                  const LabelingPolicy& policy, const ExperimentOptions& options) {
    FoldResult result;
    result.fold_index = fold_index;
    try {
        const Corpus train_trials = gather_trials(corpus, fold.train_trials);
        const Corpus test_trials = gather_trials(corpus, fold.test_trials);
        const std::vector<WindowCrop> train_crops =
            build_crops(train_trials, policy, options.window);
        const std::vector<WindowCrop> test_crops = build_crops(test_trials, policy, options.window);

        std::array<std::size_t, 3> class_support{};
        for (const WindowCrop& c : train_crops) ++class_support[static_cast<std::size_t>(c.label)];
        for (std::size_t k = 0; k < 3; ++k)
            if (class_support[k] == 0)
                result.warnings.push_back("fold " + std::to_string(fold_index) + ": class " +
                                          class_name(static_cast<SkillClass>(k)) +
                                          " absent from training trials");

        // Per-fold seeds derive from the base seed so folds are reproducible
        // yet distinct.
        OptimizerConfig config = base_config;
        config.seed = base_config.seed + fold_index;

        result.train_state = train(train_crops, arch, config, options.training);
        const ModelParams& model = result.train_state.best_params;

        if (test_crops.empty()) {
            result.report.empty_test = true;
            result.report.scheme = scheme_name(scheme);
            result.report.fold = fold_index;
            result.warnings.push_back("fold " + std::to_string(fold_index) + ": empty test set");
            return result;
        }

        std::vector<std::size_t> all(test_crops.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        const TrainingBatch test_batch = to_batch(test_crops, all);

        const auto start = std::chrono::steady_clock::now();
        const std::vector<int> predicted = predict(model, test_batch.inputs);
        const auto end = std::chrono::steady_clock::now();

        result.report = compute_metrics(test_batch.labels, predicted);
        result.report.running_time_ms =
            std::chrono::duration<double, std::milli>(end - start).count();
        result.report.scheme = scheme_name(scheme);
        result.report.fold = fold_index;
        if (options.trial_majority_vote) {
            const auto [correct, total] = majority_vote_by_trial(test_crops, predicted);
            result.report.trial_vote_enabled = true;
            result.report.trial_vote_accuracy =
                total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
            result.report.trial_vote_total = total;
        }
    } catch (const DivergenceError& e) {
        result.failed = true;
        result.failure = e.what();
    }
    return result;
}

} // namespace detail

// Runs every fold of the plan (training included), classifies each fold's
// test crops, and aggregates: unweighted mean of fold metrics, summed
// confusion counts, mean/variance of fold classification times.
inline ExperimentResult run_experiment(const Corpus& corpus, const FoldPlan& plan,
                                       const ArchitectureSpec& arch,
                                       const OptimizerConfig& config,
                                       const LabelingPolicy& policy,
                                       const ExperimentOptions& options = {}) {
    arch.validate();
    config.validate();
    policy.validate();
    if (plan.folds.empty()) throw InputError("run_experiment: plan has no folds");

    ExperimentResult result;
    result.scheme = plan.scheme;
    result.folds.resize(plan.folds.size());

    const int jobs = std::max(1, options.jobs);
    if (jobs == 1) {
        for (std::size_t f = 0; f < plan.folds.size(); ++f)
            result.folds[f] = detail::run_single_fold(corpus, plan.folds[f], f + 1, plan.scheme,
                                                      arch, config, policy, options);
    } else {
        std::vector<std::thread> workers;
        std::atomic<std::size_t> next{0};
        const std::size_t fold_count = plan.folds.size();
        for (int w = 0; w < jobs && w < static_cast<int>(fold_count); ++w) {
            workers.emplace_back([&]() {
                for (;;) {
                    const std::size_t f = next.fetch_add(1);
                    if (f >= fold_count) return;
                    result.folds[f] = detail::run_single_fold(corpus, plan.folds[f], f + 1,
                                                              plan.scheme, arch, config, policy,
                                                              options);
                }
            });
        }
        for (auto& t : workers) t.join();
    }

    // Deterministic reduction in fold order.
    std::size_t ok = 0;
    std::vector<double> fold_times;
    for (const FoldResult& fr : result.folds) {
        for (const std::string& w : fr.warnings) result.warnings.push_back(w);
        if (fr.failed) {
            result.warnings.push_back("fold " + std::to_string(fr.fold_index) +
                                      " failed: " + fr.failure);
            continue;
        }
        if (fr.report.empty_test) continue;
        ++ok;
        result.aggregate.accuracy += fr.report.accuracy;
        for (std::size_t k = 0; k < 3; ++k) {
            result.aggregate.per_class[k].precision += fr.report.per_class[k].precision;
            result.aggregate.per_class[k].recall += fr.report.per_class[k].recall;
            result.aggregate.per_class[k].f1 += fr.report.per_class[k].f1;
            result.aggregate.per_class[k].has_support |= fr.report.per_class[k].has_support;
        }
        result.aggregate.confusion.add(fr.report.confusion);
        result.aggregate.evaluated += fr.report.evaluated;
        if (fr.report.trial_vote_enabled) {
            result.aggregate.trial_vote_enabled = true;
            result.aggregate.trial_vote_accuracy += fr.report.trial_vote_accuracy;
            result.aggregate.trial_vote_total += fr.report.trial_vote_total;
        }
        fold_times.push_back(fr.report.running_time_ms);
    }
    if (ok > 0) {
        const double n = static_cast<double>(ok);
        result.aggregate.accuracy /= n;
        for (std::size_t k = 0; k < 3; ++k) {
            result.aggregate.per_class[k].precision /= n;
            result.aggregate.per_class[k].recall /= n;
            result.aggregate.per_class[k].f1 /= n;
        }
        if (result.aggregate.trial_vote_enabled) result.aggregate.trial_vote_accuracy /= n;
    }
    result.aggregate.scheme = scheme_name(plan.scheme);
    result.aggregate.fold = 0;

    if (!fold_times.empty()) {
        result.timing.samples = fold_times.size();
        for (double t : fold_times) result.timing.mean_ms += t;
        result.timing.mean_ms /= static_cast<double>(fold_times.size());
        for (double t : fold_times)
            result.timing.variance_ms2 +=
                (t - result.timing.mean_ms) * (t - result.timing.mean_ms);
        result.timing.variance_ms2 /= static_cast<double>(fold_times.size());
        result.aggregate.running_time_ms = result.timing.mean_ms;
    }
    return result;
}

} // namespace skillnet
