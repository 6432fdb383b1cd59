#pragma once

// Adam optimization and the mini-batch training loop with seeded shuffling,
// stratified validation splitting, best-model selection on validation
// accuracy, and per-epoch learning-curve history.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "skillnet/datapipe.hpp"
#include "skillnet/errors.hpp"
#include "skillnet/network.hpp"
#include "skillnet/rng.hpp"

namespace skillnet {

struct OptimizerConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon_hat = 1e-8; // Adam denominator fuzz, distinct from the learning rate
    std::size_t batch_size = 600;
    std::size_t epochs = 300;
    std::uint64_t seed = 42;

    void validate() const {
        if (learning_rate <= 0.0) throw ConfigError("optimizer: learning rate must be positive");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw ConfigError("optimizer: decay rates must lie in [0, 1)");
        if (batch_size < 1) throw ConfigError("optimizer: batch size must be at least 1");
        if (epochs < 1) throw ConfigError("optimizer: epoch count must be at least 1");
    }

    // Faithful reproduction settings.
    static OptimizerConfig paper() { return OptimizerConfig{}; }

    // Reduced settings for desk-scale runs and CI. The learning rate rises
    // to compensate for the far smaller step budget (hundreds of updates
    // instead of thousands).
    static OptimizerConfig desk() {
        OptimizerConfig c;
        c.learning_rate = 1e-3;
        c.batch_size = 64;
        c.epochs = 60;
        return c;
    }
};

// One Adam update across every parameter block:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   p <- p - lr * m-hat / (sqrt(v-hat) + eps)
inline void adam_step(ModelParams& params, const ModelGrads& grads,
                      const OptimizerConfig& config) {
    config.validate();
    auto pv = params.param_views();
    auto gv = grads.views();
    if (pv.size() != gv.size()) throw InternalError("adam: gradient block count mismatch");

    params.step += 1;
    const double t = static_cast<double>(params.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);

    std::size_t offset = 0;
    for (std::size_t blk = 0; blk < pv.size(); ++blk) {
        if (pv[blk].size() != gv[blk].size())
            throw InternalError("adam: gradient shape mismatch in block " + std::to_string(blk));
        double* m = params.adam_m.data() + offset;
        double* v = params.adam_v.data() + offset;
        double* p = pv[blk].data();
        const double* g = gv[blk].data();
        const std::size_t n = pv[blk].size();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon_hat);
        }
        offset += n;
    }
    if (offset != params.adam_m.size()) throw InternalError("adam: moment size mismatch");
}

// ---------------------------------------------------------------------------
// Dataset plumbing
// ---------------------------------------------------------------------------

inline TrainingBatch to_batch(const std::vector<WindowCrop>& crops,
                              const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw InputError("empty batch");
    const std::size_t w = crops[indices[0]].window_width;
    TrainingBatch batch;
    batch.inputs = Tensor3(indices.size(), w, kPairChannels);
    batch.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const WindowCrop& c = crops[indices[i]];
        if (c.window_width != w) throw InputError("crops disagree on window width");
        std::copy(c.values.begin(), c.values.end(),
                  batch.inputs.values.begin() + static_cast<std::ptrdiff_t>(i * w * kPairChannels));
        batch.labels[i] = static_cast<int>(c.label);
    }
    return batch;
}

enum class ValidationSplit { PerCrop, PerTrial };

inline std::string validation_split_name(ValidationSplit s) {
    return s == ValidationSplit::PerCrop ? "per-crop" : "per-trial";
}

inline ValidationSplit parse_validation_split(std::string_view s) {
    if (s == "per-crop") return ValidationSplit::PerCrop;
    if (s == "per-trial") return ValidationSplit::PerTrial;
    throw InputError("unknown validation split mode: " + std::string(s));
}

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

// Stratified validation split. Per-crop mode holds out exactly
// round(fraction * n) crops, apportioned across classes by largest
// remainder; per-trial mode holds out whole trials (stricter against
// leakage between overlapping crops) until the fraction is covered.
inline SplitIndices split_for_validation(const std::vector<WindowCrop>& crops, double fraction,
                                         ValidationSplit mode, std::uint64_t seed) {
    if (fraction < 0.0 || fraction >= 1.0)
        throw InputError("validation fraction must lie in [0, 1)");
    SplitIndices out;
    if (fraction == 0.0 || crops.empty()) {
        out.train.resize(crops.size());
        std::iota(out.train.begin(), out.train.end(), 0);
        return out;
    }
    Rng rng(derive_seed(seed, 0x53504c49ull)); // "SPLI"

    if (mode == ValidationSplit::PerCrop) {
        std::array<std::vector<std::size_t>, 3> by_class;
        for (std::size_t i = 0; i < crops.size(); ++i)
            by_class[static_cast<std::size_t>(crops[i].label)].push_back(i);
        for (auto& g : by_class) rng.shuffle(g);

        const std::size_t want_total = static_cast<std::size_t>(
            std::llround(fraction * static_cast<double>(crops.size())));
        std::array<std::size_t, 3> take{};
        std::array<double, 3> remainder{};
        std::size_t assigned = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            const double exact = fraction * static_cast<double>(by_class[k].size());
            take[k] = std::min(by_class[k].size(), static_cast<std::size_t>(exact));
            remainder[k] = exact - static_cast<double>(take[k]);
            assigned += take[k];
        }
        while (assigned < want_total) {
            std::size_t best = 3;
            for (std::size_t k = 0; k < 3; ++k)
                if (take[k] < by_class[k].size() &&
                    (best == 3 || remainder[k] > remainder[best]))
                    best = k;
            if (best == 3) break;
            ++take[best];
            remainder[best] = -1.0;
            ++assigned;
        }
        for (std::size_t k = 0; k < 3; ++k) {
            for (std::size_t i = 0; i < by_class[k].size(); ++i)
                (i < take[k] ? out.validation : out.train).push_back(by_class[k][i]);
        }
    } else {
        // Group crops by parent trial instance identity; stratify trials by
        // class, hold out trials round-robin until the crop fraction is met.
        std::map<std::string, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < crops.size(); ++i) {
            const CropSource& s = crops[i].source;
            groups[task_code(s.task) + "/" + s.subject_id + "/" + std::to_string(s.trial_index)]
                .push_back(i);
        }
        std::array<std::vector<const std::vector<std::size_t>*>, 3> by_class;
        for (const auto& [key, idx] : groups)
            by_class[static_cast<std::size_t>(crops[idx[0]].label)].push_back(&idx);
        for (auto& g : by_class) rng.shuffle(g);

        const std::size_t want_total = static_cast<std::size_t>(
            std::llround(fraction * static_cast<double>(crops.size())));
        std::array<std::size_t, 3> cursor{};
        std::size_t held = 0;
        std::vector<const std::vector<std::size_t>*> held_groups;
        bool progress = true;
        while (held < want_total && progress) {
            progress = false;
            for (std::size_t k = 0; k < 3 && held < want_total; ++k) {
                if (cursor[k] >= by_class[k].size()) continue;
                // Never hold out the last remaining trial of a class.
                if (cursor[k] + 1 >= by_class[k].size()) continue;
                const auto* grp = by_class[k][cursor[k]++];
                held_groups.push_back(grp);
                held += grp->size();
                progress = true;
            }
        }
        std::vector<bool> is_val(crops.size(), false);
        for (const auto* grp : held_groups)
            for (std::size_t i : *grp) is_val[i] = true;
        for (std::size_t i = 0; i < crops.size(); ++i)
            (is_val[i] ? out.validation : out.train).push_back(i);
    }

    std::sort(out.train.begin(), out.train.end());
    std::sort(out.validation.begin(), out.validation.end());
    return out;
}

// Seeded epoch shuffle chopped into batches; the final partial batch is
// kept, not dropped.
inline std::vector<std::vector<std::size_t>> make_epoch_batches(
    const std::vector<std::size_t>& indices, std::size_t batch_size, Rng& rng) {
    std::vector<std::size_t> order = indices;
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, order.size());
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochStats {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainState {
    ModelParams params;        // final parameters
    ModelParams best_params;   // snapshot of the best-validation epoch
    double best_val_accuracy = 0.0;
    std::size_t best_epoch = 0;
    std::vector<EpochStats> history;
    bool has_validation = false;
};

struct TrainOptions {
    double validation_fraction = 0.1;
    ValidationSplit validation_split = ValidationSplit::PerCrop;
};

struct DatasetEval {
    double mean_loss = 0.0;
    double accuracy = 0.0;
};

// Inference-mode loss/accuracy over a subset of crops, in bounded batches.
inline DatasetEval evaluate_dataset(const ModelParams& params,
                                    const std::vector<WindowCrop>& crops,
                                    const std::vector<std::size_t>& indices,
                                    std::size_t eval_batch = 256) {
    DatasetEval out;
    if (indices.empty()) return out;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < indices.size(); begin += eval_batch) {
        const std::size_t end = std::min(begin + eval_batch, indices.size());
        const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(begin),
                                             indices.begin() + static_cast<std::ptrdiff_t>(end));
        TrainingBatch batch = to_batch(crops, chunk);
        const Matrix probs = forward(params, batch, Mode::Inference, 0);
        loss_sum += cross_entropy_loss(probs, batch.labels).sum;
        for (std::size_t r = 0; r < probs.rows; ++r) {
            const double* p = probs.row(r);
            int best = 0;
            for (std::size_t c = 1; c < probs.cols; ++c)
                if (p[c] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
            if (best == batch.labels[r]) ++correct;
        }
    }
    out.mean_loss = loss_sum / static_cast<double>(indices.size());
    out.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
    return out;
}

// Full training run. Each epoch reshuffles the training crops under the
// seeded RNG, applies forward/backward/adam per batch, then scores the
// held-aside validation split and keeps the best snapshot (first epoch wins
// ties).
inline TrainState train(const std::vector<WindowCrop>& crops, const ArchitectureSpec& arch,
                        const OptimizerConfig& config, const TrainOptions& options = {}) {
    config.validate();
    arch.validate();
    if (crops.empty()) throw InputError("train: no crops supplied");
    for (const WindowCrop& c : crops)
        if (c.window_width != arch.window_width)
            throw InputError("train: crop window width " + std::to_string(c.window_width) +
                             " does not match architecture window " +
                             std::to_string(arch.window_width));

    const SplitIndices split = split_for_validation(crops, options.validation_fraction,
                                                    options.validation_split, config.seed);
    if (split.train.empty()) throw InputError("train: no training crops left after validation split");

    TrainState state;
    state.params = init_params(arch, derive_seed(config.seed, 0x4d4f44454cull)); // "MODEL"
    state.params.train_seed = config.seed;
    state.has_validation = !split.validation.empty();
    Rng shuffle_rng(derive_seed(config.seed, 0x53485546ull)); // "SHUF"

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto batches = make_epoch_batches(split.train, config.batch_size, shuffle_rng);
        double loss_sum = 0.0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            TrainingBatch batch = to_batch(crops, batches[bi]);
            ForwardCache cache;
            const std::uint64_t drop_seed = derive_seed(config.seed, epoch, bi);
            const Matrix probs = forward(state.params, batch, Mode::Training, drop_seed, &cache);
            const LossValue loss = cross_entropy_loss(probs, batch.labels);
            if (!std::isfinite(loss.sum))
                throw DivergenceError("non-finite training loss at epoch " +
                                      std::to_string(epoch) + ", batch " + std::to_string(bi + 1));
            loss_sum += loss.sum;
            const ModelGrads grads = backward(state.params, cache, batch.labels);
            adam_step(state.params, grads, config);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(split.train.size());
        if (state.has_validation) {
            const DatasetEval ev = evaluate_dataset(state.params, crops, split.validation);
            stats.val_loss = ev.mean_loss;
            stats.val_accuracy = ev.accuracy;
        }
        state.history.push_back(stats);

        if (state.has_validation &&
            (state.best_epoch == 0 || stats.val_accuracy > state.best_val_accuracy)) {
            state.best_val_accuracy = stats.val_accuracy;
            state.best_epoch = epoch;
            state.best_params = state.params;
        }
    }
    if (!state.has_validation) {
        // Nothing to select on; the final parameters stand in for the best.
        state.best_params = state.params;
        state.best_epoch = config.epochs;
    }
    return state;
}

// One delimited text row per epoch: epoch, train loss, validation loss,
// validation accuracy.
inline void write_learning_curve(const std::filesystem::path& path,
                                 const std::vector<EpochStats>& history) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write learning curve: " + path.string());
    os << "epoch,train_loss,val_loss,val_accuracy\n";
    char buf[128];
    for (const EpochStats& e : history) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss,
                      e.val_loss, e.val_accuracy);
        os << buf;
    }
    if (!os) throw IoError("learning curve write failed: " + path.string());
}

} // namespace skillnet
