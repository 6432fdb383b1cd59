#pragma once

// Versioned binary model checkpoints: architecture, every parameter array,
// the Adam moment estimates, step counter, and the RNG seeds. Write followed
// by reload is bit-exact.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "skillnet/errors.hpp"
#include "skillnet/network.hpp"

namespace skillnet {

static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559,
              "checkpoints assume IEEE-754 binary64");

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw ParseError("checkpoint: truncated integer field");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

inline void write_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64(os, bits);
}

inline double read_f64(std::istream& is) {
    const std::uint64_t bits = read_u64(is);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

inline void write_f64_array(std::ostream& os, const std::vector<double>& v) {
    write_u64(os, v.size());
    for (double d : v) write_f64(os, d);
}

inline std::vector<double> read_f64_array(std::istream& is, std::size_t expected) {
    const std::uint64_t n = read_u64(is);
    if (n != expected)
        throw ParseError("checkpoint: array length " + std::to_string(n) + ", expected " +
                         std::to_string(expected));
    std::vector<double> v(n);
    for (double& d : v) d = read_f64(is);
    return v;
}

} // namespace detail

inline constexpr char kCheckpointMagic[8] = {'S', 'K', 'N', 'C', 'K', 'P', 'T', '1'};

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
    using namespace detail;

    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const ArchitectureSpec& s = params.spec;
    write_u64(os, s.window_width);
    write_u64(os, s.in_channels);
    for (std::size_t c : s.conv_channels) write_u64(os, c);
    for (std::size_t h : s.hidden_widths) write_u64(os, h);
    write_u64(os, s.class_count);
    write_f64(os, s.maxpool_dropout_rate);
    write_f64(os, s.fc_dropout_rate);

    for (const auto& c : params.conv) {
        write_f64_array(os, c.kernels);
        write_f64_array(os, c.biases);
    }
    for (const auto& d : params.dense) {
        write_f64_array(os, d.weights);
        write_f64_array(os, d.biases);
    }
    write_f64_array(os, params.adam_m);
    write_f64_array(os, params.adam_v);
    write_u64(os, params.step);
    write_u64(os, params.init_seed);
    write_u64(os, params.train_seed);
    if (!os) throw IoError("checkpoint write failed: " + path.string());
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    using namespace detail;

    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw ParseError("not a model checkpoint: " + path.string());

    ArchitectureSpec spec;
    spec.window_width = read_u64(is);
    spec.in_channels = read_u64(is);
    for (std::size_t& c : spec.conv_channels) c = read_u64(is);
    for (std::size_t& h : spec.hidden_widths) h = read_u64(is);
    spec.class_count = read_u64(is);
    spec.maxpool_dropout_rate = read_f64(is);
    spec.fc_dropout_rate = read_f64(is);
    spec.validate();

    // Rebuild shapes from the spec, then fill with the stored arrays.
    ModelParams params = init_params(spec, 0);
    for (auto& c : params.conv) {
        c.kernels = read_f64_array(is, c.kernels.size());
        c.biases = read_f64_array(is, c.biases.size());
    }
    for (auto& d : params.dense) {
        d.weights = read_f64_array(is, d.weights.size());
        d.biases = read_f64_array(is, d.biases.size());
    }
    params.adam_m = read_f64_array(is, params.parameter_count());
    params.adam_v = read_f64_array(is, params.parameter_count());
    params.step = read_u64(is);
    params.init_seed = read_u64(is);
    params.train_seed = read_u64(is);
    if (!is) throw ParseError("checkpoint: truncated file: " + path.string());
    return params;
}

} // namespace skillnet
