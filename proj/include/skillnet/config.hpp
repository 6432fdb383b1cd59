#pragma once

// Run configuration: flat `key = value` text with section headers, resolved
// in layers (built-in defaults, then the preset, then the config file, then
// command-line flags).

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "skillnet/datapipe.hpp"
#include "skillnet/errors.hpp"
#include "skillnet/eval.hpp"
#include "skillnet/optim.hpp"

namespace skillnet {

enum class Preset { Paper, Desk };

inline std::string preset_name(Preset p) { return p == Preset::Paper ? "paper" : "desk"; }

inline Preset parse_preset(std::string_view s) {
    if (s == "paper") return Preset::Paper;
    if (s == "desk") return Preset::Desk;
    throw ConfigError("unknown preset: " + std::string(s));
}

// Task selection: a single task or all three.
struct TaskSelection {
    std::optional<Task> task; // nullopt = all tasks

    std::vector<Task> resolve() const {
        if (task) return {*task};
        return {Task::Suturing, Task::NeedlePassing, Task::KnotTying};
    }
    std::string name() const { return task ? task_code(*task) : "all"; }

    bool operator==(const TaskSelection&) const = default;
};

inline TaskSelection parse_task_selection(std::string_view s) {
    if (s == "all") return TaskSelection{};
    return TaskSelection{parse_task(s)};
}

struct RunConfig {
    // [run]
    TaskSelection task;                    // default: all tasks
    Scheme scheme = Scheme::Loso;
    LabelMode labeling = LabelMode::SelfProclaimed;
    Preset preset = Preset::Paper;
    std::uint64_t seed = 42;
    int jobs = 1;
    std::string dataset_root;
    std::string out_dir = "out";
    // [data]
    std::size_t window = 60;
    std::size_t step = 30;
    bool validate_rotations = false;
    // [network]
    std::size_t hidden1 = 256;
    std::size_t hidden2 = 128;
    double maxpool_dropout = 0.2;
    double fc_dropout = 0.5;
    // [train]
    double learning_rate = 1e-4;
    std::size_t batch_size = 600;
    std::size_t epochs = 300;
    double validation_fraction = 0.1;
    ValidationSplit validation_split = ValidationSplit::PerCrop;
    // [eval]
    bool trial_vote = false; // per-trial majority-vote extension
    // [synth]
    std::size_t synth_subjects = 8;
    std::size_t synth_trials = 5;
    std::size_t synth_min_frames = 240;
    std::size_t synth_max_frames = 360;

    bool operator==(const RunConfig&) const = default;

    ArchitectureSpec architecture() const {
        ArchitectureSpec arch;
        arch.window_width = window;
        arch.hidden_widths = {hidden1, hidden2};
        arch.maxpool_dropout_rate = maxpool_dropout;
        arch.fc_dropout_rate = fc_dropout;
        return arch;
    }

    OptimizerConfig optimizer() const {
        OptimizerConfig opt;
        opt.learning_rate = learning_rate;
        opt.batch_size = batch_size;
        opt.epochs = epochs;
        opt.seed = seed;
        return opt;
    }

    LabelingPolicy policy() const {
        LabelingPolicy p;
        p.mode = labeling;
        return p;
    }

    WindowConfig window_config() const { return WindowConfig{window, step}; }

    TrainOptions train_options() const {
        return TrainOptions{validation_fraction, validation_split};
    }
};

// Key -> value, keys written as "section.key".
using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(0, 1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    return s;
}

inline std::uint64_t to_u64(const std::string& v, const std::string& key) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    return out;
}

inline double to_f64(const std::string& v, const std::string& key) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    return out;
}

inline bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

} // namespace detail

// Parses `[section]` headers and `key = value` lines; `#` starts a comment.
inline ConfigMap parse_config_text(std::istream& is, const std::string& origin) {
    ConfigMap map;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": bad section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
        map[section.empty() ? key : section + "." + key] = value;
    }
    return map;
}

inline ConfigMap parse_config_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path.string());
    return parse_config_text(is, path.string());
}

namespace detail {

inline void apply_key(RunConfig& c, const std::string& key, const std::string& value) {
    if (key == "run.task") c.task = parse_task_selection(value);
    else if (key == "run.scheme") c.scheme = parse_scheme(value);
    else if (key == "run.labeling") c.labeling = parse_label_mode(value);
    else if (key == "run.preset") c.preset = parse_preset(value);
    else if (key == "run.seed") c.seed = to_u64(value, key);
    else if (key == "run.jobs") c.jobs = static_cast<int>(to_u64(value, key));
    else if (key == "run.dataset_root") c.dataset_root = value;
    else if (key == "run.out") c.out_dir = value;
    else if (key == "data.window") c.window = to_u64(value, key);
    else if (key == "data.step") c.step = to_u64(value, key);
    else if (key == "data.validate_rotations") c.validate_rotations = to_bool(value, key);
    else if (key == "network.hidden1") c.hidden1 = to_u64(value, key);
    else if (key == "network.hidden2") c.hidden2 = to_u64(value, key);
    else if (key == "network.maxpool_dropout") c.maxpool_dropout = to_f64(value, key);
    else if (key == "network.fc_dropout") c.fc_dropout = to_f64(value, key);
    else if (key == "train.learning_rate") c.learning_rate = to_f64(value, key);
    else if (key == "train.batch_size") c.batch_size = to_u64(value, key);
    else if (key == "train.epochs") c.epochs = to_u64(value, key);
    else if (key == "train.validation_fraction") c.validation_fraction = to_f64(value, key);
    else if (key == "train.validation_split") c.validation_split = parse_validation_split(value);
    else if (key == "eval.trial_vote") c.trial_vote = to_bool(value, key);
    else if (key == "synth.subjects") c.synth_subjects = to_u64(value, key);
    else if (key == "synth.trials") c.synth_trials = to_u64(value, key);
    else if (key == "synth.min_frames") c.synth_min_frames = to_u64(value, key);
    else if (key == "synth.max_frames") c.synth_max_frames = to_u64(value, key);
    else throw ConfigError("config: unknown key '" + key + "'");
}

inline void apply_preset(RunConfig& c, Preset preset, const ConfigMap& file,
                         const ConfigMap& flags) {
    c.preset = preset;
    if (preset == Preset::Paper) return;
    // Desk preset: reduced optimizer budget for CI and synthetic runs.
    // Explicit file/flag values still win.
    const OptimizerConfig desk = OptimizerConfig::desk();
    auto overridden = [&](const std::string& key) {
        return file.count(key) > 0 || flags.count(key) > 0;
    };
    if (!overridden("train.batch_size")) c.batch_size = desk.batch_size;
    if (!overridden("train.epochs")) c.epochs = desk.epochs;
    if (!overridden("train.learning_rate")) c.learning_rate = desk.learning_rate;
}

} // namespace detail

// Three-layer resolution: defaults, then preset, then config file, then
// command-line flags.
inline RunConfig resolve_config(const ConfigMap& file, const ConfigMap& flags) {
    RunConfig c;
    Preset preset = c.preset;
    if (auto it = file.find("run.preset"); it != file.end()) preset = parse_preset(it->second);
    if (auto it = flags.find("run.preset"); it != flags.end()) preset = parse_preset(it->second);
    detail::apply_preset(c, preset, file, flags);
    for (const auto& [k, v] : file)
        if (k != "run.preset") detail::apply_key(c, k, v);
    for (const auto& [k, v] : flags)
        if (k != "run.preset") detail::apply_key(c, k, v);
    return c;
}

// Emits every key; parse(emit(c)) reproduces c exactly.
inline std::string emit_config(const RunConfig& c) {
    std::ostringstream os;
    os << "[run]\n";
    os << "task = " << c.task.name() << "\n";
    os << "scheme = " << scheme_name(c.scheme) << "\n";
    os << "labeling = " << label_mode_name(c.labeling) << "\n";
    os << "preset = " << preset_name(c.preset) << "\n";
    os << "seed = " << c.seed << "\n";
    os << "jobs = " << c.jobs << "\n";
    if (!c.dataset_root.empty()) os << "dataset_root = " << c.dataset_root << "\n";
    os << "out = " << c.out_dir << "\n";
    os << "\n[data]\n";
    os << "window = " << c.window << "\n";
    os << "step = " << c.step << "\n";
    os << "validate_rotations = " << (c.validate_rotations ? "true" : "false") << "\n";
    os << "\n[network]\n";
    os << "hidden1 = " << c.hidden1 << "\n";
    os << "hidden2 = " << c.hidden2 << "\n";
    os << "maxpool_dropout = " << detail::format_double(c.maxpool_dropout) << "\n";
    os << "fc_dropout = " << detail::format_double(c.fc_dropout) << "\n";
    os << "\n[train]\n";
    os << "learning_rate = " << detail::format_double(c.learning_rate) << "\n";
    os << "batch_size = " << c.batch_size << "\n";
    os << "epochs = " << c.epochs << "\n";
    os << "validation_fraction = " << detail::format_double(c.validation_fraction) << "\n";
    os << "validation_split = " << validation_split_name(c.validation_split) << "\n";
    os << "\n[eval]\n";
    os << "trial_vote = " << (c.trial_vote ? "true" : "false") << "\n";
    os << "\n[synth]\n";
    os << "subjects = " << c.synth_subjects << "\n";
    os << "trials = " << c.synth_trials << "\n";
    os << "min_frames = " << c.synth_min_frames << "\n";
    os << "max_frames = " << c.synth_max_frames << "\n";
    return os.str();
}

inline RunConfig parse_config(const std::string& text) {
    std::istringstream is(text);
    const ConfigMap map = parse_config_text(is, "<config>");
    return resolve_config(map, {});
}

} // namespace skillnet
