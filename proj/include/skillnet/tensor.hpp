#pragma once

// Dense numeric containers and the differentiable layer kernels: 1-D valid
// convolution (kernel width 2, stride 1), 2x max-pooling with argmax memo,
// ReLU, affine, and softmax. Forward maps come with exact reverse-mode
// gradients; everything is double precision and deterministic.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "skillnet/errors.hpp"

namespace skillnet {

// Batched multichannel time series, stored batch-major, time next,
// channel last (channel index is contiguous).
struct Tensor3 {
    std::size_t batch = 0;
    std::size_t length = 0;
    std::size_t channels = 0;
    std::vector<double> values;

    Tensor3() = default;
    Tensor3(std::size_t b, std::size_t l, std::size_t c)
        : batch(b), length(l), channels(c), values(b * l * c, 0.0) {}

    double& at(std::size_t b, std::size_t t, std::size_t c) {
        return values[(b * length + t) * channels + c];
    }
    double at(std::size_t b, std::size_t t, std::size_t c) const {
        return values[(b * length + t) * channels + c];
    }
    double* row(std::size_t b, std::size_t t) { return values.data() + (b * length + t) * channels; }
    const double* row(std::size_t b, std::size_t t) const {
        return values.data() + (b * length + t) * channels;
    }
    std::size_t size() const { return values.size(); }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// Row-major matrix for the fully-connected part of the stack.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    double* row(std::size_t r) { return values.data() + r * cols; }
    const double* row(std::size_t r) const { return values.data() + r * cols; }
    std::size_t size() const { return values.size(); }
};

// ---------------------------------------------------------------------------
// 1-D convolution
// ---------------------------------------------------------------------------

struct ConvLayerParams {
    static constexpr std::size_t kKernelWidth = 2;
    static constexpr std::size_t kStride = 1;

    std::string name;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::vector<double> kernels; // [out][k][in], in fastest
    std::vector<double> biases;  // [out]

    ConvLayerParams() = default;
    ConvLayerParams(std::string layer_name, std::size_t in_ch, std::size_t out_ch)
        : name(std::move(layer_name)),
          in_channels(in_ch),
          out_channels(out_ch),
          kernels(out_ch * kKernelWidth * in_ch, 0.0),
          biases(out_ch, 0.0) {}

    double& kernel(std::size_t o, std::size_t k, std::size_t c) {
        return kernels[(o * kKernelWidth + k) * in_channels + c];
    }
    double kernel(std::size_t o, std::size_t k, std::size_t c) const {
        return kernels[(o * kKernelWidth + k) * in_channels + c];
    }
};

struct ConvLayerGrads {
    std::vector<double> kernels;
    std::vector<double> biases;
};

// Valid convolution, no padding: out[b,t,o] = bias[o] + sum_{k,c} in[b,t+k,c] * w[o,k,c].
// Output length is input length - 1 for kernel width 2.
inline Tensor3 conv1d_forward(const Tensor3& input, const ConvLayerParams& p) {
    if (input.channels != p.in_channels)
        throw ConfigError(p.name + ": expected " + std::to_string(p.in_channels) +
                          " input channels, got " + std::to_string(input.channels));
    if (input.length < ConvLayerParams::kKernelWidth)
        throw ConfigError(p.name + ": input length " + std::to_string(input.length) +
                          " shorter than kernel width");

    const std::size_t out_len = input.length - ConvLayerParams::kKernelWidth + 1;
    Tensor3 out(input.batch, out_len, p.out_channels);
    const std::size_t in_ch = p.in_channels;

    for (std::size_t b = 0; b < input.batch; ++b) {
        for (std::size_t t = 0; t < out_len; ++t) {
            const double* x0 = input.row(b, t);
            const double* x1 = input.row(b, t + 1);
            double* y = out.row(b, t);
            for (std::size_t o = 0; o < p.out_channels; ++o) {
                const double* w0 = &p.kernels[o * 2 * in_ch];
                const double* w1 = w0 + in_ch;
                double acc = p.biases[o];
                for (std::size_t c = 0; c < in_ch; ++c) acc += x0[c] * w0[c] + x1[c] * w1[c];
                y[o] = acc;
            }
        }
    }
    return out;
}

struct ConvBackward {
    Tensor3 grad_input;
    ConvLayerGrads grads;
};

// Exact transpose of the forward linear map.
inline ConvBackward conv1d_backward(const Tensor3& grad_out, const Tensor3& input,
                                    const ConvLayerParams& p) {
    if (input.length < ConvLayerParams::kKernelWidth || input.channels != p.in_channels)
        throw ConfigError(p.name + ": input shape does not match layer");
    const std::size_t out_len = input.length - ConvLayerParams::kKernelWidth + 1;
    if (grad_out.batch != input.batch || grad_out.length != out_len ||
        grad_out.channels != p.out_channels)
        throw ConfigError(p.name + ": gradient shape does not match forward output");

    ConvBackward r;
    r.grad_input = Tensor3(input.batch, input.length, input.channels);
    r.grads.kernels.assign(p.kernels.size(), 0.0);
    r.grads.biases.assign(p.biases.size(), 0.0);
    const std::size_t in_ch = p.in_channels;

    for (std::size_t b = 0; b < input.batch; ++b) {
        for (std::size_t t = 0; t < out_len; ++t) {
            const double* g = grad_out.row(b, t);
            const double* x0 = input.row(b, t);
            const double* x1 = input.row(b, t + 1);
            double* gi0 = r.grad_input.row(b, t);
            double* gi1 = r.grad_input.row(b, t + 1);
            for (std::size_t o = 0; o < p.out_channels; ++o) {
                const double go = g[o];
                if (go == 0.0) continue;
                r.grads.biases[o] += go;
                double* gw0 = &r.grads.kernels[o * 2 * in_ch];
                double* gw1 = gw0 + in_ch;
                const double* w0 = &p.kernels[o * 2 * in_ch];
                const double* w1 = w0 + in_ch;
                for (std::size_t c = 0; c < in_ch; ++c) {
                    gw0[c] += go * x0[c];
                    gw1[c] += go * x1[c];
                    gi0[c] += go * w0[c];
                    gi1[c] += go * w1[c];
                }
            }
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Max pooling, size 2 stride 2
// ---------------------------------------------------------------------------

struct PoolSpec {
    static constexpr std::size_t kSize = 2;
    static constexpr std::size_t kStride = 2;

    // Winning input time index per output element, recorded at forward time
    // and consumed by the backward pass. Ties break toward the earlier index.
    std::vector<std::uint32_t> argmax_memo;
};

// Output length floor(L/2); a trailing odd element is dropped.
inline Tensor3 maxpool_forward(const Tensor3& input, PoolSpec& spec) {
    if (input.length < PoolSpec::kSize)
        throw ConfigError("maxpool: input length " + std::to_string(input.length) +
                          " shorter than pool size");
    const std::size_t out_len = input.length / 2;
    Tensor3 out(input.batch, out_len, input.channels);
    spec.argmax_memo.assign(out.size(), 0);

    for (std::size_t b = 0; b < input.batch; ++b) {
        for (std::size_t t = 0; t < out_len; ++t) {
            const double* x0 = input.row(b, 2 * t);
            const double* x1 = input.row(b, 2 * t + 1);
            double* y = out.row(b, t);
            std::uint32_t* memo = &spec.argmax_memo[(b * out_len + t) * input.channels];
            for (std::size_t c = 0; c < input.channels; ++c) {
                if (x1[c] > x0[c]) {
                    y[c] = x1[c];
                    memo[c] = static_cast<std::uint32_t>(2 * t + 1);
                } else {
                    y[c] = x0[c];
                    memo[c] = static_cast<std::uint32_t>(2 * t);
                }
            }
        }
    }
    return out;
}

// Routes each upstream gradient solely to its memoized argmax position.
inline Tensor3 maxpool_backward(const Tensor3& grad_out, const PoolSpec& spec,
                                std::size_t input_length) {
    if (spec.argmax_memo.size() != grad_out.size())
        throw InternalError("maxpool: memo size does not match gradient (stale or missing memo)");

    Tensor3 grad_in(grad_out.batch, input_length, grad_out.channels);
    for (std::size_t b = 0; b < grad_out.batch; ++b) {
        for (std::size_t t = 0; t < grad_out.length; ++t) {
            const double* g = grad_out.row(b, t);
            const std::uint32_t* memo =
                &spec.argmax_memo[(b * grad_out.length + t) * grad_out.channels];
            for (std::size_t c = 0; c < grad_out.channels; ++c) {
                const std::size_t src = memo[c];
                if (src < 2 * t || src > 2 * t + 1 || src >= input_length)
                    throw InternalError("maxpool: memo index outside its pooling patch");
                grad_in.at(b, src, c) += g[c];
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

inline Tensor3 relu(const Tensor3& input) {
    Tensor3 out = input;
    for (double& v : out.values) v = v > 0.0 ? v : 0.0;
    return out;
}

// Subgradient 0 at exactly x = 0.
inline Tensor3 relu_backward(const Tensor3& grad_out, const Tensor3& input) {
    if (grad_out.size() != input.size())
        throw InternalError("relu: gradient shape does not match input");
    Tensor3 grad_in = grad_out;
    for (std::size_t i = 0; i < grad_in.values.size(); ++i)
        if (input.values[i] <= 0.0) grad_in.values[i] = 0.0;
    return grad_in;
}

inline Matrix relu(const Matrix& input) {
    Matrix out = input;
    for (double& v : out.values) v = v > 0.0 ? v : 0.0;
    return out;
}

inline Matrix relu_backward(const Matrix& grad_out, const Matrix& input) {
    if (grad_out.size() != input.size())
        throw InternalError("relu: gradient shape does not match input");
    Matrix grad_in = grad_out;
    for (std::size_t i = 0; i < grad_in.values.size(); ++i)
        if (input.values[i] <= 0.0) grad_in.values[i] = 0.0;
    return grad_in;
}

// ---------------------------------------------------------------------------
// Affine (fully-connected)
// ---------------------------------------------------------------------------

struct DenseLayerParams {
    std::string name;
    std::size_t in_features = 0;
    std::size_t out_features = 0;
    std::vector<double> weights; // [in][out], out fastest
    std::vector<double> biases;  // [out]

    DenseLayerParams() = default;
    DenseLayerParams(std::string layer_name, std::size_t in_f, std::size_t out_f)
        : name(std::move(layer_name)),
          in_features(in_f),
          out_features(out_f),
          weights(in_f * out_f, 0.0),
          biases(out_f, 0.0) {}

    double& weight(std::size_t i, std::size_t j) { return weights[i * out_features + j]; }
    double weight(std::size_t i, std::size_t j) const { return weights[i * out_features + j]; }
};

struct DenseLayerGrads {
    std::vector<double> weights;
    std::vector<double> biases;
};

inline Matrix dense_forward(const Matrix& input, const DenseLayerParams& p) {
    if (input.cols != p.in_features)
        throw ConfigError(p.name + ": expected input width " + std::to_string(p.in_features) +
                          ", got " + std::to_string(input.cols));
    Matrix out(input.rows, p.out_features);
    for (std::size_t r = 0; r < input.rows; ++r) {
        double* y = out.row(r);
        for (std::size_t j = 0; j < p.out_features; ++j) y[j] = p.biases[j];
        const double* x = input.row(r);
        for (std::size_t k = 0; k < p.in_features; ++k) {
            const double xk = x[k];
            if (xk == 0.0) continue;
            const double* w = &p.weights[k * p.out_features];
            for (std::size_t j = 0; j < p.out_features; ++j) y[j] += xk * w[j];
        }
    }
    return out;
}

struct DenseBackward {
    Matrix grad_input;
    DenseLayerGrads grads;
};

inline DenseBackward dense_backward(const Matrix& grad_out, const Matrix& input,
                                    const DenseLayerParams& p) {
    if (grad_out.rows != input.rows || grad_out.cols != p.out_features ||
        input.cols != p.in_features)
        throw ConfigError(p.name + ": gradient shape does not match forward output");

    DenseBackward r;
    r.grad_input = Matrix(input.rows, p.in_features);
    r.grads.weights.assign(p.weights.size(), 0.0);
    r.grads.biases.assign(p.biases.size(), 0.0);

    for (std::size_t row = 0; row < input.rows; ++row) {
        const double* g = grad_out.row(row);
        const double* x = input.row(row);
        double* gi = r.grad_input.row(row);
        for (std::size_t j = 0; j < p.out_features; ++j) r.grads.biases[j] += g[j];
        for (std::size_t k = 0; k < p.in_features; ++k) {
            const double* w = &p.weights[k * p.out_features];
            double* gw = &r.grads.weights[k * p.out_features];
            const double xk = x[k];
            double acc = 0.0;
            for (std::size_t j = 0; j < p.out_features; ++j) {
                gw[j] += xk * g[j];
                acc += w[j] * g[j];
            }
            gi[k] = acc;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

// Max-subtraction keeps exp() in range for any finite logits.
inline void softmax_row(const double* logits, double* out, std::size_t n) {
    double m = logits[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, logits[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= sum;
}

inline std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    softmax_row(logits.data(), out.data(), logits.size());
    return out;
}

inline Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows, logits.cols);
    for (std::size_t r = 0; r < logits.rows; ++r)
        softmax_row(logits.row(r), out.row(r), logits.cols);
    return out;
}

} // namespace skillnet
