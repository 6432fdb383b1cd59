#pragma once

// The fixed 10-layer classifier: three conv-pool stages, flatten, two
// fully-connected layers, and a softmax output stage, with max-pool dropout
// (0.2) and fully-connected dropout (0.5) during training. Owns parameter
// initialization, the cross-entropy loss, and full reverse-mode backward.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "skillnet/errors.hpp"
#include "skillnet/rng.hpp"
#include "skillnet/tensor.hpp"

namespace skillnet {

enum class Mode { Training, Inference };

struct ArchitectureSpec {
    std::size_t window_width = 60;
    std::size_t in_channels = 38;
    std::array<std::size_t, 3> conv_channels{38, 76, 152};
    std::array<std::size_t, 2> hidden_widths{256, 128};
    std::size_t class_count = 3;
    double maxpool_dropout_rate = 0.2;
    double fc_dropout_rate = 0.5;

    // The topology is immutable: exactly conv-pool x3, flatten, two hidden
    // fully-connected layers, softmax output over three classes. Anything
    // else is rejected here.
    void validate() const {
        if (in_channels != 38)
            throw ConfigError("architecture: input must have 38 channels, got " +
                              std::to_string(in_channels));
        if (conv_channels != std::array<std::size_t, 3>{38, 76, 152})
            throw ConfigError("architecture: conv channel widths are fixed at 38/76/152");
        if (class_count != 3) throw ConfigError("architecture: class count is fixed at 3");
        if (hidden_widths[0] == 0 || hidden_widths[1] == 0)
            throw ConfigError("architecture: hidden widths must be positive");
        if (!(maxpool_dropout_rate >= 0.0 && maxpool_dropout_rate < 1.0) ||
            !(fc_dropout_rate >= 0.0 && fc_dropout_rate < 1.0))
            throw ConfigError("architecture: dropout rates must lie in [0, 1)");
        std::size_t len = window_width;
        for (int stage = 0; stage < 3; ++stage) {
            if (len < 2)
                throw ConfigError("architecture: window width " + std::to_string(window_width) +
                                  " collapses to zero length at conv stage " +
                                  std::to_string(stage + 1));
            len = (len - 1) / 2;
            if (len == 0)
                throw ConfigError("architecture: window width " + std::to_string(window_width) +
                                  " collapses to zero length at pool stage " +
                                  std::to_string(stage + 1));
        }
    }

    // Post-pool sequence length per stage: L -> L-1 (valid conv) -> floor/2.
    std::array<std::size_t, 3> stage_lengths() const {
        std::array<std::size_t, 3> lens{};
        std::size_t len = window_width;
        for (int stage = 0; stage < 3; ++stage) {
            len = (len - 1) / 2;
            lens[stage] = len;
        }
        return lens;
    }

    std::size_t flatten_width() const { return stage_lengths()[2] * conv_channels[2]; }

    bool operator==(const ArchitectureSpec&) const = default;
};

// Inputs plus 0-based class indices (external labels 1/2/3 map to 0/1/2).
struct TrainingBatch {
    Tensor3 inputs;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

inline int class_from_one_based(int label) {
    if (label < 1 || label > 3)
        throw InputError("class label must be in {1,2,3}, got " + std::to_string(label));
    return label - 1;
}

// Inverted dropout: kept activations are scaled by 1/keep at training time,
// so inference is exactly the identity.
struct DropoutMask {
    std::vector<std::uint8_t> keep;
    double keep_prob = 1.0;
    bool active = false;

    static DropoutMask inference() { return DropoutMask{}; }

    static DropoutMask sample(std::size_t n, double drop_rate, Rng& rng) {
        DropoutMask m;
        if (drop_rate <= 0.0) return m;
        m.active = true;
        m.keep_prob = 1.0 - drop_rate;
        m.keep.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            m.keep[i] = rng.uniform() < m.keep_prob ? 1 : 0;
        return m;
    }

    void apply(std::span<double> v) const {
        if (!active) return;
        if (v.size() != keep.size()) throw InternalError("dropout: mask size mismatch");
        const double scale = 1.0 / keep_prob;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = keep[i] ? v[i] * scale : 0.0;
    }

    // Dropout is a fixed diagonal map once sampled, so backward == forward.
    void apply_backward(std::span<double> g) const { apply(g); }
};

// All learnable parameters plus the Adam moment estimates that travel with
// them (so a checkpoint can resume training exactly).
struct ModelParams {
    ArchitectureSpec spec;
    std::array<ConvLayerParams, 3> conv;
    std::array<DenseLayerParams, 3> dense; // fc1, fc2, and the softmax-stage affine
    std::vector<double> adam_m;
    std::vector<double> adam_v;
    std::uint64_t step = 0;
    std::uint64_t init_seed = 0;
    std::uint64_t train_seed = 0;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& c : conv) n += c.kernels.size() + c.biases.size();
        for (const auto& d : dense) n += d.weights.size() + d.biases.size();
        return n;
    }

    // Canonical block order shared by gradients, Adam, and checkpoints.
    std::vector<std::span<double>> param_views() {
        std::vector<std::span<double>> v;
        for (auto& c : conv) {
            v.emplace_back(c.kernels);
            v.emplace_back(c.biases);
        }
        for (auto& d : dense) {
            v.emplace_back(d.weights);
            v.emplace_back(d.biases);
        }
        return v;
    }
    std::vector<std::span<const double>> param_views() const {
        std::vector<std::span<const double>> v;
        for (const auto& c : conv) {
            v.emplace_back(c.kernels);
            v.emplace_back(c.biases);
        }
        for (const auto& d : dense) {
            v.emplace_back(d.weights);
            v.emplace_back(d.biases);
        }
        return v;
    }
};

struct ModelGrads {
    std::array<ConvLayerGrads, 3> conv;
    std::array<DenseLayerGrads, 3> dense;

    std::vector<std::span<const double>> views() const {
        std::vector<std::span<const double>> v;
        for (const auto& c : conv) {
            v.emplace_back(c.kernels);
            v.emplace_back(c.biases);
        }
        for (const auto& d : dense) {
            v.emplace_back(d.weights);
            v.emplace_back(d.biases);
        }
        return v;
    }
};

// Biases start at zero; weights are Gaussian with variance 1/fan-in
// (kernel_width * in_channels for conv layers, in_features for dense ones).
inline ModelParams init_params(const ArchitectureSpec& spec, std::uint64_t seed) {
    spec.validate();
    ModelParams p;
    p.spec = spec;
    p.init_seed = seed;
    Rng rng(derive_seed(seed, 0x494e4954ull)); // "INIT"

    const std::array<std::size_t, 4> conv_io{spec.in_channels, spec.conv_channels[0],
                                             spec.conv_channels[1], spec.conv_channels[2]};
    for (std::size_t i = 0; i < 3; ++i) {
        p.conv[i] = ConvLayerParams("conv" + std::to_string(i + 1), conv_io[i], conv_io[i + 1]);
        const double stddev = std::sqrt(1.0 / static_cast<double>(
                                            ConvLayerParams::kKernelWidth * conv_io[i]));
        for (double& w : p.conv[i].kernels) w = rng.gaussian(0.0, stddev);
    }

    const std::array<std::size_t, 4> dense_io{spec.flatten_width(), spec.hidden_widths[0],
                                              spec.hidden_widths[1], spec.class_count};
    const std::array<std::string, 3> names{"fc1", "fc2", "out"};
    for (std::size_t i = 0; i < 3; ++i) {
        p.dense[i] = DenseLayerParams(names[i], dense_io[i], dense_io[i + 1]);
        const double stddev = std::sqrt(1.0 / static_cast<double>(dense_io[i]));
        for (double& w : p.dense[i].weights) w = rng.gaussian(0.0, stddev);
    }

    p.adam_m.assign(p.parameter_count(), 0.0);
    p.adam_v.assign(p.parameter_count(), 0.0);
    return p;
}

// Everything backward needs, captured during a training-mode forward pass.
struct ForwardCache {
    bool training = false;
    Tensor3 input;
    std::array<Tensor3, 3> conv_out;  // pre-activation, for the ReLU mask
    std::array<Tensor3, 3> relu_out;  // pooling input
    std::array<PoolSpec, 3> pool;
    std::array<Tensor3, 3> stage_out; // post-dropout stage output
    std::array<DropoutMask, 3> pool_drop;
    std::array<Matrix, 2> fc_pre;
    std::array<Matrix, 2> fc_act;     // post ReLU and dropout
    std::array<DropoutMask, 2> fc_drop;
    Matrix logits;
    Matrix probs;
};

// Runs the full stack. In training mode dropout masks are drawn from `seed`
// (reproducible), and intermediates are recorded into `cache` when given.
inline Matrix forward(const ModelParams& params, const TrainingBatch& batch, Mode mode,
                      std::uint64_t seed, ForwardCache* cache = nullptr) {
    const ArchitectureSpec& spec = params.spec;
    if (batch.inputs.length != spec.window_width)
        throw ConfigError("forward: input length " + std::to_string(batch.inputs.length) +
                          " does not match window width " + std::to_string(spec.window_width));
    if (batch.inputs.channels != spec.in_channels)
        throw ConfigError("forward: input has " + std::to_string(batch.inputs.channels) +
                          " channels, expected " + std::to_string(spec.in_channels));

    const bool training = mode == Mode::Training;
    Rng drop_rng(derive_seed(seed, 0x44524f50ull)); // "DROP"
    if (cache) {
        cache->training = training;
        cache->input = batch.inputs;
    }

    Tensor3 x = batch.inputs;
    for (std::size_t stage = 0; stage < 3; ++stage) {
        Tensor3 pre = conv1d_forward(x, params.conv[stage]);
        Tensor3 act = relu(pre);
        PoolSpec pool;
        Tensor3 pooled = maxpool_forward(act, pool);
        DropoutMask mask = training
                               ? DropoutMask::sample(pooled.size(), spec.maxpool_dropout_rate,
                                                     drop_rng)
                               : DropoutMask::inference();
        mask.apply(pooled.values);
        if (cache) {
            cache->conv_out[stage] = std::move(pre);
            cache->relu_out[stage] = std::move(act);
            cache->pool[stage] = std::move(pool);
            cache->pool_drop[stage] = std::move(mask);
            cache->stage_out[stage] = pooled;
        }
        x = std::move(pooled);
    }

    // Flatten keeps the storage order (time-major, channel-last per step).
    Matrix h(x.batch, x.length * x.channels);
    h.values = std::move(x.values);

    for (std::size_t i = 0; i < 2; ++i) {
        Matrix pre = dense_forward(h, params.dense[i]);
        Matrix act = relu(pre);
        DropoutMask mask = training ? DropoutMask::sample(act.size(), spec.fc_dropout_rate,
                                                          drop_rng)
                                    : DropoutMask::inference();
        mask.apply(act.values);
        if (cache) {
            cache->fc_pre[i] = std::move(pre);
            cache->fc_drop[i] = std::move(mask);
            cache->fc_act[i] = act;
        }
        h = std::move(act);
    }

    Matrix logits = dense_forward(h, params.dense[2]);
    Matrix probs = softmax_rows(logits);
    if (cache) {
        cache->logits = std::move(logits);
        cache->probs = probs;
    }
    return probs;
}

struct LossValue {
    double sum = 0.0;
    double mean = 0.0;
};

// Multinomial cross-entropy over the true-class probabilities, clamped at
// 1e-12 so the log stays finite.
inline LossValue cross_entropy_loss(const Matrix& probs, const std::vector<int>& labels) {
    if (probs.rows != labels.size())
        throw InternalError("cross_entropy: probability/label count mismatch");
    LossValue loss;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int k = labels[i];
        if (k < 0 || static_cast<std::size_t>(k) >= probs.cols)
            throw InputError("cross_entropy: label index out of range");
        loss.sum -= std::log(std::max(probs.at(i, static_cast<std::size_t>(k)), 1e-12));
    }
    loss.mean = labels.empty() ? 0.0 : loss.sum / static_cast<double>(labels.size());
    return loss;
}

// Gradient of the mean cross-entropy w.r.t. every parameter. Softmax and
// cross-entropy fuse to (p - y)/m at the logits.
inline ModelGrads backward(const ModelParams& params, const ForwardCache& cache,
                           const std::vector<int>& labels) {
    if (!cache.training)
        throw InternalError("backward: cache must come from a training-mode forward call");
    if (cache.probs.rows != labels.size())
        throw InternalError("backward: cache/label batch size mismatch");

    const std::size_t m = labels.size();
    ModelGrads grads;

    Matrix dlogits = cache.probs;
    for (std::size_t i = 0; i < m; ++i) {
        const int k = labels[i];
        if (k < 0 || static_cast<std::size_t>(k) >= dlogits.cols)
            throw InternalError("backward: label index out of range");
        dlogits.at(i, static_cast<std::size_t>(k)) -= 1.0;
    }
    for (double& v : dlogits.values) v /= static_cast<double>(m);

    DenseBackward out_bw = dense_backward(dlogits, cache.fc_act[1], params.dense[2]);
    grads.dense[2] = std::move(out_bw.grads);

    const Tensor3& last_stage = cache.stage_out[2];
    Matrix flat(last_stage.batch, last_stage.length * last_stage.channels);
    flat.values = last_stage.values;

    Matrix g = std::move(out_bw.grad_input);
    for (int i = 1; i >= 0; --i) {
        cache.fc_drop[i].apply_backward(g.values);
        g = relu_backward(g, cache.fc_pre[i]);
        const Matrix& in = i == 0 ? flat : cache.fc_act[0];
        DenseBackward bw = dense_backward(g, in, params.dense[i]);
        grads.dense[i] = std::move(bw.grads);
        g = std::move(bw.grad_input);
    }

    // Un-flatten back into the last stage's output shape.
    Tensor3 gt(last_stage.batch, last_stage.length, last_stage.channels);
    gt.values = std::move(g.values);

    for (int stage = 2; stage >= 0; --stage) {
        cache.pool_drop[stage].apply_backward(gt.values);
        Tensor3 gp = maxpool_backward(gt, cache.pool[stage], cache.relu_out[stage].length);
        gp = relu_backward(gp, cache.conv_out[stage]);
        const Tensor3& in = stage == 0 ? cache.input : cache.stage_out[stage - 1];
        ConvBackward bw = conv1d_backward(gp, in, params.conv[stage]);
        grads.conv[stage] = std::move(bw.grads);
        gt = std::move(bw.grad_input);
    }
    return grads;
}

// Class prediction: argmax of the softmax output, ties toward the lowest
// class index.
inline std::vector<int> predict(const ModelParams& params, const Tensor3& inputs) {
    TrainingBatch batch;
    batch.inputs = inputs;
    batch.labels.assign(inputs.batch, 0);
    const Matrix probs = forward(params, batch, Mode::Inference, 0);
    std::vector<int> classes(probs.rows, 0);
    for (std::size_t r = 0; r < probs.rows; ++r) {
        const double* p = probs.row(r);
        int best = 0;
        for (std::size_t c = 1; c < probs.cols; ++c)
            if (p[c] > p[best]) best = static_cast<int>(c);
        classes[r] = best;
    }
    return classes;
}

} // namespace skillnet
