#pragma once

// Trial ingestion and augmentation: manifest + kinematics parsing, per-trial
// z-normalization, master/patient-side manipulator split, label-preserving
// sliding-window cropping, GRS / self-proclaimed labeling, a synthetic
// corpus generator for verification without the gated source dataset, and a
// binary crop cache.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "skillnet/errors.hpp"
#include "skillnet/rng.hpp"

namespace skillnet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Domain enums and constants
// ---------------------------------------------------------------------------

enum class Task { Suturing = 0, NeedlePassing = 1, KnotTying = 2 };
enum class SkillClass { Novice = 0, Intermediate = 1, Expert = 2 };
enum class Side { MTM = 0, PSM = 1 };

inline constexpr std::size_t kChannelsPerArm = 19;
inline constexpr std::size_t kTotalChannels = 76;  // MTM1, MTM2, PSM1, PSM2
inline constexpr std::size_t kPairChannels = 38;   // one manipulator pair
inline constexpr double kSampleRateHz = 30.0;
inline constexpr int kGrsMin = 6;
inline constexpr int kGrsMax = 30;

inline std::string task_code(Task t) {
    switch (t) {
        case Task::Suturing: return "su";
        case Task::NeedlePassing: return "np";
        case Task::KnotTying: return "kt";
    }
    return "?";
}

inline std::string task_name(Task t) {
    switch (t) {
        case Task::Suturing: return "SU";
        case Task::NeedlePassing: return "NP";
        case Task::KnotTying: return "KT";
    }
    return "?";
}

inline Task parse_task(std::string_view s) {
    std::string lower(s);
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower == "su" || lower == "suturing") return Task::Suturing;
    if (lower == "np" || lower == "needle_passing" || lower == "needle-passing")
        return Task::NeedlePassing;
    if (lower == "kt" || lower == "knot_tying" || lower == "knot-tying") return Task::KnotTying;
    throw InputError("unknown task: " + std::string(s));
}

inline std::string class_name(SkillClass c) {
    switch (c) {
        case SkillClass::Novice: return "Novice";
        case SkillClass::Intermediate: return "Intermediate";
        case SkillClass::Expert: return "Expert";
    }
    return "?";
}

inline SkillClass parse_skill_class(std::string_view s) {
    std::string lower(s);
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower == "novice" || lower == "n") return SkillClass::Novice;
    if (lower == "intermediate" || lower == "i") return SkillClass::Intermediate;
    if (lower == "expert" || lower == "e") return SkillClass::Expert;
    throw InputError("unknown skill class: " + std::string(s));
}

inline std::string side_name(Side s) { return s == Side::MTM ? "MTM" : "PSM"; }

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

struct LabelRecord {
    SkillClass self_proclaimed = SkillClass::Novice;
    int grs_score = kGrsMin;
};

enum class LabelMode { SelfProclaimed, GrsThreshold };

struct GrsThresholds {
    int lower = 0;
    int upper = 0;
};

// GRS cut-offs per task: below lower -> Novice, below upper -> Intermediate,
// at or above upper -> Expert (upper bound inclusive on the Expert side).
struct LabelingPolicy {
    LabelMode mode = LabelMode::SelfProclaimed;
    std::array<GrsThresholds, 3> thresholds{GrsThresholds{19, 24},   // Suturing
                                            GrsThresholds{15, 20},   // Needle-passing
                                            GrsThresholds{15, 20}};  // Knot-tying

    const GrsThresholds& for_task(Task t) const { return thresholds[static_cast<int>(t)]; }

    void validate() const {
        for (const auto& th : thresholds)
            if (th.lower >= th.upper)
                throw ConfigError("labeling policy: lower threshold must be below upper");
    }
};

inline std::string label_mode_name(LabelMode m) {
    return m == LabelMode::SelfProclaimed ? "self" : "grs";
}

inline LabelMode parse_label_mode(std::string_view s) {
    if (s == "self") return LabelMode::SelfProclaimed;
    if (s == "grs") return LabelMode::GrsThreshold;
    throw InputError("unknown labeling mode: " + std::string(s));
}

inline SkillClass assign_label(const LabelRecord& record, const LabelingPolicy& policy,
                               Task task) {
    if (record.grs_score < kGrsMin || record.grs_score > kGrsMax)
        throw InputError("GRS score " + std::to_string(record.grs_score) + " outside " +
                         std::to_string(kGrsMin) + ".." + std::to_string(kGrsMax));
    if (policy.mode == LabelMode::SelfProclaimed) return record.self_proclaimed;
    const GrsThresholds& th = policy.for_task(task);
    if (record.grs_score < th.lower) return SkillClass::Novice;
    if (record.grs_score < th.upper) return SkillClass::Intermediate;
    return SkillClass::Expert;
}

// ---------------------------------------------------------------------------
// Trial recordings
// ---------------------------------------------------------------------------

// One task execution: T x 76 kinematic channels at 30 Hz plus labels and
// subject/trial identity. Columns per arm: position xyz, rotation matrix
// (row-major 9), linear velocity, angular velocity, gripper angle; arms in
// the order MTM1, MTM2, PSM1, PSM2.
struct TrialRecording {
    Task task = Task::Suturing;
    std::string subject_id;
    int trial_index = 1;
    std::size_t frames = 0;
    std::vector<double> values; // frames x 76, channel fastest
    LabelRecord labels;

    double& at(std::size_t t, std::size_t ch) { return values[t * kTotalChannels + ch]; }
    double at(std::size_t t, std::size_t ch) const { return values[t * kTotalChannels + ch]; }
    const double* frame(std::size_t t) const { return values.data() + t * kTotalChannels; }
};

using Corpus = std::vector<TrialRecording>;

inline double rotation_det(const double* r) {
    return r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
           r[2] * (r[3] * r[7] - r[4] * r[6]);
}

// Rotation blocks live at channel offset 3 inside each 19-channel arm block.
inline void validate_rotations(const TrialRecording& trial, double tol = 0.05) {
    for (std::size_t t = 0; t < trial.frames; ++t) {
        for (std::size_t arm = 0; arm < 4; ++arm) {
            const double* r = trial.frame(t) + arm * kChannelsPerArm + 3;
            const double det = rotation_det(r);
            if (std::abs(det - 1.0) >= tol)
                throw InputError("trial " + trial.subject_id + "#" +
                                 std::to_string(trial.trial_index) + ": rotation block of arm " +
                                 std::to_string(arm + 1) + " at frame " + std::to_string(t) +
                                 " has det " + std::to_string(det));
        }
    }
}

// ---------------------------------------------------------------------------
// z-normalization
// ---------------------------------------------------------------------------

struct ChannelStats {
    std::array<double, kTotalChannels> mean{};
    std::array<double, kTotalChannels> stddev{};
};

inline constexpr double kSigmaGuard = 1e-8;

// Per-trial, per-channel z = (x - mu) / sigma with population sigma.
// Channels with sigma below the guard are centered only.
inline std::pair<TrialRecording, ChannelStats> z_normalize(const TrialRecording& trial) {
    if (trial.frames < 2)
        throw InputError("z-normalize: trial needs at least 2 frames, has " +
                         std::to_string(trial.frames));
    ChannelStats stats;
    const double n = static_cast<double>(trial.frames);
    for (std::size_t t = 0; t < trial.frames; ++t)
        for (std::size_t ch = 0; ch < kTotalChannels; ++ch) stats.mean[ch] += trial.at(t, ch);
    for (double& m : stats.mean) m /= n;
    for (std::size_t t = 0; t < trial.frames; ++t)
        for (std::size_t ch = 0; ch < kTotalChannels; ++ch) {
            const double d = trial.at(t, ch) - stats.mean[ch];
            stats.stddev[ch] += d * d;
        }
    for (double& s : stats.stddev) s = std::sqrt(s / n);

    TrialRecording out = trial;
    for (std::size_t ch = 0; ch < kTotalChannels; ++ch) {
        const double sigma = stats.stddev[ch] < kSigmaGuard ? 1.0 : stats.stddev[ch];
        const double mu = stats.mean[ch];
        for (std::size_t t = 0; t < trial.frames; ++t)
            out.at(t, ch) = (trial.at(t, ch) - mu) / sigma;
    }
    return {std::move(out), stats};
}

// ---------------------------------------------------------------------------
// Manipulator split and window cropping
// ---------------------------------------------------------------------------

// A 38-channel manipulator-pair series carrying its parent trial identity
// and the class label resolved under the active policy.
struct LabeledInstance {
    Task task = Task::Suturing;
    std::string subject_id;
    int trial_index = 1;
    Side side = Side::MTM;
    SkillClass label = SkillClass::Novice;
    std::size_t frames = 0;
    std::vector<double> values; // frames x 38

    double at(std::size_t t, std::size_t ch) const { return values[t * kPairChannels + ch]; }
};

// Splits a 76-channel trial into the MTM pair (columns 0..37) and the PSM
// pair (columns 38..75); both inherit the trial's label.
inline std::array<LabeledInstance, 2> split_manipulators(const TrialRecording& trial,
                                                         const LabelingPolicy& policy) {
    const SkillClass label = assign_label(trial.labels, policy, trial.task);
    std::array<LabeledInstance, 2> out;
    for (int s = 0; s < 2; ++s) {
        LabeledInstance& inst = out[static_cast<std::size_t>(s)];
        inst.task = trial.task;
        inst.subject_id = trial.subject_id;
        inst.trial_index = trial.trial_index;
        inst.side = static_cast<Side>(s);
        inst.label = label;
        inst.frames = trial.frames;
        inst.values.resize(trial.frames * kPairChannels);
        const std::size_t offset = static_cast<std::size_t>(s) * kPairChannels;
        for (std::size_t t = 0; t < trial.frames; ++t)
            std::copy_n(trial.frame(t) + offset, kPairChannels,
                        inst.values.data() + t * kPairChannels);
    }
    return out;
}

struct WindowConfig {
    std::size_t window_width = 60;
    std::size_t step = 30;

    void validate() const {
        if (window_width < 1 || step < 1)
            throw ConfigError("window config: width and step must be at least 1");
    }
};

struct CropSource {
    Task task = Task::Suturing;
    std::string subject_id;
    int trial_index = 1;
    Side side = Side::MTM;
    std::size_t start_frame = 0;
};

// The network's input unit: a W x 38 slice of one manipulator pair carrying
// the parent trial's label.
struct WindowCrop {
    std::size_t window_width = 0;
    std::vector<double> values; // window_width x 38
    SkillClass label = SkillClass::Novice;
    CropSource source;
};

// Crops at start m = 0, L, 2L, ... while m + W <= frames. A series shorter
// than the window yields no crops.
inline std::vector<WindowCrop> sliding_window_crop(const LabeledInstance& instance,
                                                   const WindowConfig& config) {
    config.validate();
    std::vector<WindowCrop> crops;
    const std::size_t w = config.window_width;
    for (std::size_t m = 0; m + w <= instance.frames; m += config.step) {
        WindowCrop crop;
        crop.window_width = w;
        crop.label = instance.label;
        crop.source = CropSource{instance.task, instance.subject_id, instance.trial_index,
                                 instance.side, m};
        crop.values.assign(instance.values.begin() +
                               static_cast<std::ptrdiff_t>(m * kPairChannels),
                           instance.values.begin() +
                               static_cast<std::ptrdiff_t>((m + w) * kPairChannels));
        crops.push_back(std::move(crop));
    }
    return crops;
}

inline std::size_t expected_crop_count(std::size_t frames, const WindowConfig& config) {
    if (frames < config.window_width) return 0;
    return (frames - config.window_width) / config.step + 1;
}

// Full augmentation pipeline for one trial: normalize the 76-channel
// recording, split the manipulator pairs, crop both instances.
inline std::vector<WindowCrop> build_crops(const TrialRecording& trial,
                                           const LabelingPolicy& policy,
                                           const WindowConfig& config) {
    auto [normalized, stats] = z_normalize(trial);
    (void)stats;
    std::vector<WindowCrop> crops;
    for (const LabeledInstance& inst : split_manipulators(normalized, policy)) {
        auto part = sliding_window_crop(inst, config);
        crops.insert(crops.end(), std::make_move_iterator(part.begin()),
                     std::make_move_iterator(part.end()));
    }
    return crops;
}

inline std::vector<WindowCrop> build_crops(const Corpus& corpus, const LabelingPolicy& policy,
                                           const WindowConfig& config) {
    std::vector<WindowCrop> crops;
    for (const TrialRecording& trial : corpus) {
        auto part = build_crops(trial, policy, config);
        crops.insert(crops.end(), std::make_move_iterator(part.begin()),
                     std::make_move_iterator(part.end()));
    }
    return crops;
}

// ---------------------------------------------------------------------------
// Manifest and kinematics parsing
// ---------------------------------------------------------------------------

struct ManifestEntry {
    Task task = Task::Suturing;
    std::string subject_id;
    int trial_index = 1;
    std::string kinematics_path; // relative to the manifest's directory
    int grs_score = kGrsMin;
    SkillClass self_proclaimed = SkillClass::Novice;
};

inline constexpr std::string_view kManifestHeader =
    "task,subject_id,trial_index,kinematics_path,grs_score,self_proclaimed";

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    for (std::string& f : fields) {
        while (!f.empty() && std::isspace(static_cast<unsigned char>(f.front()))) f.erase(0, 1);
        while (!f.empty() && std::isspace(static_cast<unsigned char>(f.back()))) f.pop_back();
    }
    return fields;
}

inline int parse_int_field(const std::string& s, const std::string& what, std::size_t line_no) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw ParseError("manifest line " + std::to_string(line_no) + ": bad " + what + " '" +
                         s + "'");
    return v;
}

} // namespace detail

inline std::vector<ManifestEntry> parse_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open manifest: " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    bool saw_header = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!saw_header) {
            if (line != kManifestHeader)
                throw ParseError("manifest line " + std::to_string(line_no) +
                                 ": expected header '" + std::string(kManifestHeader) + "'");
            saw_header = true;
            continue;
        }
        const auto fields = detail::split_csv(line);
        if (fields.size() != 6)
            throw ParseError("manifest line " + std::to_string(line_no) + ": expected 6 fields, got " +
                             std::to_string(fields.size()));
        ManifestEntry e;
        e.task = parse_task(fields[0]);
        e.subject_id = fields[1];
        e.trial_index = detail::parse_int_field(fields[2], "trial index", line_no);
        e.kinematics_path = fields[3];
        e.grs_score = detail::parse_int_field(fields[4], "GRS score", line_no);
        e.self_proclaimed = parse_skill_class(fields[5]);
        entries.push_back(std::move(e));
    }
    if (!saw_header) throw ParseError("manifest is empty: " + path.string());
    return entries;
}

struct ParseOptions {
    bool validate_rotations = false;
};

// Kinematics file: plain text, one frame per line, 76 whitespace-separated
// decimal reals.
inline TrialRecording parse_trial(const fs::path& kinematics_file, const ManifestEntry& entry,
                                  const ParseOptions& options = {}) {
    std::ifstream is(kinematics_file);
    if (!is) throw InputError("cannot open kinematics file: " + kinematics_file.string());

    TrialRecording trial;
    trial.task = entry.task;
    trial.subject_id = entry.subject_id;
    trial.trial_index = entry.trial_index;
    trial.labels.grs_score = entry.grs_score;
    trial.labels.self_proclaimed = entry.self_proclaimed;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::istringstream ls(line);
        std::size_t col = 0;
        std::string token;
        while (ls >> token) {
            if (col >= kTotalChannels)
                throw ParseError(kinematics_file.string() + ":" + std::to_string(line_no) +
                                 ": more than " + std::to_string(kTotalChannels) + " columns");
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
            if (ec != std::errc{} || ptr != token.data() + token.size())
                throw ParseError(kinematics_file.string() + ":" + std::to_string(line_no) +
                                 ": non-numeric token '" + token + "'");
            if (!std::isfinite(v))
                throw ParseError(kinematics_file.string() + ":" + std::to_string(line_no) +
                                 ": non-finite value");
            trial.values.push_back(v);
            ++col;
        }
        if (col != kTotalChannels)
            throw ParseError(kinematics_file.string() + ":" + std::to_string(line_no) + ": " +
                             std::to_string(col) + " columns, expected " +
                             std::to_string(kTotalChannels));
        ++trial.frames;
    }
    if (trial.frames == 0) throw ParseError("kinematics file has no frames: " + kinematics_file.string());
    if (options.validate_rotations) validate_rotations(trial);
    return trial;
}

// ---------------------------------------------------------------------------
// JIGSAWS layout adapter
// ---------------------------------------------------------------------------

// Converts the dataset's native meta files (one line per trial: trial name,
// self-proclaimed letter, total GRS score, element scores) into manifest
// entries. Expected layout under the root:
//   <root>/<TaskDir>/meta_file_<TaskDir>.txt
//   <root>/<TaskDir>/kinematics/AllGestures/<TrialName>.txt
inline std::vector<ManifestEntry> jigsaws_manifest(const fs::path& root) {
    const std::array<std::pair<std::string, Task>, 3> dirs{
        std::pair<std::string, Task>{"Suturing", Task::Suturing},
        std::pair<std::string, Task>{"Needle_Passing", Task::NeedlePassing},
        std::pair<std::string, Task>{"Knot_Tying", Task::KnotTying}};

    std::vector<ManifestEntry> entries;
    for (const auto& [dir, task] : dirs) {
        const fs::path meta = root / dir / ("meta_file_" + dir + ".txt");
        if (!fs::exists(meta)) continue;
        std::ifstream is(meta);
        if (!is) throw InputError("cannot open meta file: " + meta.string());
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            std::istringstream ls(line);
            std::string trial_name, skill;
            int grs = 0;
            if (!(ls >> trial_name)) continue; // blank line
            if (!(ls >> skill >> grs))
                throw ParseError(meta.string() + ":" + std::to_string(line_no) +
                                 ": expected '<trial> <skill> <score> ...'");
            // Trial names look like Suturing_B001: subject letter, then the
            // trial number.
            const auto sep = trial_name.rfind('_');
            if (sep == std::string::npos || sep + 2 > trial_name.size())
                throw ParseError(meta.string() + ":" + std::to_string(line_no) +
                                 ": unrecognized trial name '" + trial_name + "'");
            const std::string suffix = trial_name.substr(sep + 1);
            const std::string subject(1, suffix[0]);
            int trial_index = 0;
            auto [ptr, ec] = std::from_chars(suffix.data() + 1, suffix.data() + suffix.size(),
                                             trial_index);
            if (ec != std::errc{} || ptr != suffix.data() + suffix.size())
                throw ParseError(meta.string() + ":" + std::to_string(line_no) +
                                 ": unrecognized trial number in '" + trial_name + "'");
            ManifestEntry e;
            e.task = task;
            e.subject_id = subject;
            e.trial_index = trial_index;
            e.kinematics_path = dir + "/kinematics/AllGestures/" + trial_name + ".txt";
            e.grs_score = grs;
            e.self_proclaimed = parse_skill_class(skill);
            entries.push_back(std::move(e));
        }
    }
    if (entries.empty())
        throw InputError("no JIGSAWS meta files found under " + root.string());
    return entries;
}

// Loads every trial listed in <root>/manifest.csv, or falls back to the
// JIGSAWS native layout when no manifest is present.
inline Corpus load_corpus(const fs::path& root, std::optional<Task> task_filter = {},
                          const ParseOptions& options = {}) {
    std::vector<ManifestEntry> entries;
    const fs::path manifest = root / "manifest.csv";
    if (fs::exists(manifest))
        entries = parse_manifest(manifest);
    else if (fs::exists(root))
        entries = jigsaws_manifest(root);
    else
        throw InputError("dataset root does not exist: " + root.string());

    Corpus corpus;
    for (const ManifestEntry& e : entries) {
        if (task_filter && e.task != *task_filter) continue;
        corpus.push_back(parse_trial(root / e.kinematics_path, e, options));
    }
    if (corpus.empty())
        throw InputError("no trials matched under " + root.string() +
                         (task_filter ? " for task " + task_name(*task_filter) : ""));
    return corpus;
}

// ---------------------------------------------------------------------------
// Synthetic corpus generator
// ---------------------------------------------------------------------------

// Class identity is frequency-coded: each skill level moves at a distinct
// base rate, which survives per-trial z-normalization, so short windows stay
// separable. GRS scores are drawn inside the class's threshold band, making
// both labeling policies agree by construction.
struct SyntheticSpec {
    std::size_t subjects = 8;
    std::size_t trials_per_subject = 5;
    std::size_t min_frames = 420;
    std::size_t max_frames = 600;
    Task task = Task::Suturing;
    std::uint64_t seed = 1;
    std::array<double, 3> class_freq_hz{0.4, 1.3, 4.0}; // Novice, Intermediate, Expert
    double freq_jitter = 0.05;
    double noise_scale = 0.1;
    double noise_ar = 0.9;

    void validate() const {
        if (subjects < 2 || trials_per_subject < 2)
            throw InputError("synthetic spec: need at least 2 subjects with 2 trials each");
        if (min_frames < 2 || max_frames < min_frames)
            throw InputError("synthetic spec: bad frame range");
    }
};

namespace detail {

// AR(1) noise stream.
class ArNoise {
public:
    ArNoise(double rho, double scale, Rng& rng) : rho_(rho), scale_(scale), rng_(rng) {}
    double next() {
        state_ = rho_ * state_ + std::sqrt(1.0 - rho_ * rho_) * rng_.gaussian();
        return scale_ * state_;
    }

private:
    double rho_;
    double scale_;
    Rng& rng_;
    double state_ = 0.0;
};

// Slow bounded phase wobble. Keeps the class frequency intact while crops
// taken from different parts of one trial stop sharing a fixed phase
// fingerprint, so frequency is the only trial-stable class cue.
class PhaseWobble {
public:
    explicit PhaseWobble(Rng& rng)
        : amp_(rng.uniform(0.6, 1.2)),
          omega_(2.0 * std::numbers::pi * rng.uniform(0.05, 0.12) / kSampleRateHz),
          offset_(rng.uniform(0.0, 2.0 * std::numbers::pi)) {}
    double at(double t) const { return amp_ * std::sin(omega_ * t + offset_); }

private:
    double amp_;
    double omega_;
    double offset_;
};

// Slow multiplicative amplitude envelope, same purpose as the phase wobble.
class AmplitudeEnvelope {
public:
    explicit AmplitudeEnvelope(Rng& rng)
        : depth_(rng.uniform(0.15, 0.3)),
          omega_(2.0 * std::numbers::pi * rng.uniform(0.04, 0.1) / kSampleRateHz),
          offset_(rng.uniform(0.0, 2.0 * std::numbers::pi)) {}
    double at(double t) const { return 1.0 + depth_ * std::sin(omega_ * t + offset_); }

private:
    double depth_;
    double omega_;
    double offset_;
};

inline void rotation_from_euler(double ax, double ay, double az, double* r) {
    const double cx = std::cos(ax), sx = std::sin(ax);
    const double cy = std::cos(ay), sy = std::sin(ay);
    const double cz = std::cos(az), sz = std::sin(az);
    // R = Rz * Ry * Rx, row-major.
    r[0] = cz * cy;
    r[1] = cz * sy * sx - sz * cx;
    r[2] = cz * sy * cx + sz * sx;
    r[3] = sz * cy;
    r[4] = sz * sy * sx + cz * cx;
    r[5] = sz * sy * cx - cz * sx;
    r[6] = -sy;
    r[7] = cy * sx;
    r[8] = cy * cx;
}

} // namespace detail

inline SkillClass synthetic_class_for_subject(std::size_t subject_index) {
    return static_cast<SkillClass>(subject_index % 3);
}

inline TrialRecording generate_synthetic_trial(const SyntheticSpec& spec,
                                               std::size_t subject_index, int trial_index) {
    const SkillClass cls = synthetic_class_for_subject(subject_index);
    const int cls_i = static_cast<int>(cls);
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(spec.task) + 1, subject_index + 1,
                        static_cast<std::uint64_t>(trial_index)));

    TrialRecording trial;
    trial.task = spec.task;
    char subj[16];
    std::snprintf(subj, sizeof subj, "S%02zu", subject_index + 1);
    trial.subject_id = subj;
    trial.trial_index = trial_index;
    trial.frames = spec.min_frames + rng.below(spec.max_frames - spec.min_frames + 1);
    trial.values.assign(trial.frames * kTotalChannels, 0.0);
    trial.labels.self_proclaimed = cls;

    // GRS inside the class band for this task, so threshold labeling agrees
    // with the self-proclaimed level.
    LabelingPolicy policy;
    const GrsThresholds& th = policy.for_task(spec.task);
    switch (cls) {
        case SkillClass::Novice:
            trial.labels.grs_score = static_cast<int>(rng.uniform_int(kGrsMin, th.lower - 1));
            break;
        case SkillClass::Intermediate:
            trial.labels.grs_score = static_cast<int>(rng.uniform_int(th.lower, th.upper - 1));
            break;
        case SkillClass::Expert:
            trial.labels.grs_score = static_cast<int>(rng.uniform_int(th.upper, kGrsMax));
            break;
    }

    const double freq =
        spec.class_freq_hz[static_cast<std::size_t>(cls_i)] *
        (1.0 + spec.freq_jitter * rng.uniform(-1.0, 1.0));
    const double omega = 2.0 * std::numbers::pi * freq / kSampleRateHz;

    for (std::size_t arm = 0; arm < 4; ++arm) {
        const std::size_t base = arm * kChannelsPerArm;

        // Positions: class-frequency sinusoids with random phase/amplitude
        // plus slow phase wobble and envelope modulation.
        for (std::size_t i = 0; i < 3; ++i) {
            const double amp = rng.uniform(0.8, 1.2);
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const detail::PhaseWobble wobble(rng);
            const detail::AmplitudeEnvelope envelope(rng);
            detail::ArNoise noise(spec.noise_ar, spec.noise_scale, rng);
            for (std::size_t t = 0; t < trial.frames; ++t) {
                const double td = static_cast<double>(t);
                trial.at(t, base + i) =
                    amp * envelope.at(td) * std::sin(omega * td + phase + wobble.at(td)) +
                    noise.next();
            }
        }

        // Rotation matrix from wobbling Euler angles; determinant stays 1
        // because the noise perturbs the angles, not the entries.
        {
            std::array<double, 3> amp{}, phase{};
            std::array<detail::PhaseWobble, 3> wobble{detail::PhaseWobble(rng),
                                                      detail::PhaseWobble(rng),
                                                      detail::PhaseWobble(rng)};
            for (std::size_t i = 0; i < 3; ++i) {
                amp[i] = rng.uniform(0.2, 0.5);
                phase[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
            }
            detail::ArNoise anoise(spec.noise_ar, 0.02, rng);
            for (std::size_t t = 0; t < trial.frames; ++t) {
                const double td = static_cast<double>(t);
                const double wob = anoise.next();
                detail::rotation_from_euler(
                    amp[0] * std::sin(omega * td + phase[0] + wobble[0].at(td)) + wob,
                    amp[1] * std::sin(omega * td + phase[1] + wobble[1].at(td)),
                    amp[2] * std::sin(omega * td + phase[2] + wobble[2].at(td)),
                    &trial.at(t, base + 3));
            }
        }

        // Linear and angular velocities: quadrature components at the class
        // frequency.
        for (std::size_t i = 0; i < 6; ++i) {
            const double amp = rng.uniform(0.8, 1.2) * omega;
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const detail::PhaseWobble wobble(rng);
            const detail::AmplitudeEnvelope envelope(rng);
            detail::ArNoise noise(spec.noise_ar, spec.noise_scale * omega, rng);
            for (std::size_t t = 0; t < trial.frames; ++t) {
                const double td = static_cast<double>(t);
                trial.at(t, base + 12 + i) =
                    amp * envelope.at(td) * std::cos(omega * td + phase + wobble.at(td)) +
                    noise.next();
            }
        }

        // Gripper angle: half-rate open/close cycle.
        {
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const detail::PhaseWobble wobble(rng);
            detail::ArNoise noise(spec.noise_ar, 0.05, rng);
            for (std::size_t t = 0; t < trial.frames; ++t) {
                const double td = static_cast<double>(t);
                trial.at(t, base + 18) =
                    0.5 + 0.5 * std::sin(0.5 * omega * td + phase + wobble.at(td)) +
                    noise.next();
            }
        }
    }
    return trial;
}

inline Corpus generate_synthetic_corpus(const SyntheticSpec& spec) {
    spec.validate();
    Corpus corpus;
    for (std::size_t s = 0; s < spec.subjects; ++s)
        for (std::size_t r = 1; r <= spec.trials_per_subject; ++r)
            corpus.push_back(generate_synthetic_trial(spec, s, static_cast<int>(r)));
    return corpus;
}

// ---------------------------------------------------------------------------
// Corpus emission (synthetic datasets on disk)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

// Writes kinematics files plus a manifest.csv under `dir`. Deterministic:
// the same corpus produces byte-identical files.
inline fs::path write_corpus(const fs::path& dir, const Corpus& corpus) {
    std::error_code ec;
    fs::create_directories(dir / "kinematics", ec);
    if (ec) throw IoError("cannot create " + (dir / "kinematics").string() + ": " + ec.message());

    std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
    if (!manifest) throw IoError("cannot write manifest under " + dir.string());
    manifest << "# synthetic corpus\n" << kManifestHeader << "\n";

    for (const TrialRecording& trial : corpus) {
        char name[64];
        std::snprintf(name, sizeof name, "%s_%s_%02d.txt", task_code(trial.task).c_str(),
                      trial.subject_id.c_str(), trial.trial_index);
        const std::string rel = std::string("kinematics/") + name;
        std::ofstream kin(dir / rel, std::ios::trunc);
        if (!kin) throw IoError("cannot write " + (dir / rel).string());
        for (std::size_t t = 0; t < trial.frames; ++t) {
            const double* f = trial.frame(t);
            for (std::size_t ch = 0; ch < kTotalChannels; ++ch) {
                if (ch) kin << ' ';
                kin << detail::format_double(f[ch]);
            }
            kin << '\n';
        }
        if (!kin) throw IoError("write failed: " + (dir / rel).string());
        manifest << task_code(trial.task) << ',' << trial.subject_id << ',' << trial.trial_index
                 << ',' << rel << ',' << trial.labels.grs_score << ','
                 << class_name(trial.labels.self_proclaimed) << '\n';
    }
    if (!manifest) throw IoError("manifest write failed under " + dir.string());
    return dir / "manifest.csv";
}

// ---------------------------------------------------------------------------
// Crop cache
// ---------------------------------------------------------------------------

inline constexpr char kCropCacheMagic[8] = {'S', 'K', 'C', 'R', 'O', 'P', 'S', '1'};

struct CropCacheProvenance {
    Task task = Task::Suturing;
    WindowConfig window;
    LabelMode labeling = LabelMode::SelfProclaimed;
};

inline void save_crop_cache(const fs::path& path, const std::vector<WindowCrop>& crops,
                            const CropCacheProvenance& prov) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open crop cache for writing: " + path.string());

    auto write_u64 = [&](std::uint64_t v) {
        unsigned char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        os.write(reinterpret_cast<const char*>(buf), 8);
    };
    auto write_f64 = [&](double d) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        write_u64(bits);
    };
    auto write_str = [&](const std::string& s) {
        write_u64(s.size());
        os.write(s.data(), static_cast<std::streamsize>(s.size()));
    };

    os.write(kCropCacheMagic, sizeof kCropCacheMagic);
    write_u64(static_cast<std::uint64_t>(prov.task));
    write_u64(prov.window.window_width);
    write_u64(prov.window.step);
    write_u64(static_cast<std::uint64_t>(prov.labeling));
    write_u64(crops.size());
    for (const WindowCrop& c : crops) {
        write_u64(static_cast<std::uint64_t>(c.source.task));
        write_str(c.source.subject_id);
        write_u64(static_cast<std::uint64_t>(c.source.trial_index));
        write_u64(static_cast<std::uint64_t>(c.source.side));
        write_u64(c.source.start_frame);
        write_u64(static_cast<std::uint64_t>(c.label));
        write_u64(c.window_width);
        write_u64(c.values.size());
        for (double v : c.values) write_f64(v);
    }
    if (!os) throw IoError("crop cache write failed: " + path.string());
}

inline std::pair<std::vector<WindowCrop>, CropCacheProvenance> load_crop_cache(
    const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open crop cache: " + path.string());

    auto read_u64 = [&]() {
        unsigned char buf[8];
        is.read(reinterpret_cast<char*>(buf), 8);
        if (!is) throw ParseError("crop cache: truncated field in " + path.string());
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        return v;
    };
    auto read_f64 = [&]() {
        const std::uint64_t bits = read_u64();
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    };
    auto read_str = [&]() {
        const std::uint64_t n = read_u64();
        std::string s(n, '\0');
        is.read(s.data(), static_cast<std::streamsize>(n));
        if (!is) throw ParseError("crop cache: truncated string in " + path.string());
        return s;
    };

    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kCropCacheMagic, sizeof magic) != 0)
        throw ParseError("not a crop cache: " + path.string());

    CropCacheProvenance prov;
    prov.task = static_cast<Task>(read_u64());
    prov.window.window_width = read_u64();
    prov.window.step = read_u64();
    prov.labeling = static_cast<LabelMode>(read_u64());

    std::vector<WindowCrop> crops(read_u64());
    for (WindowCrop& c : crops) {
        c.source.task = static_cast<Task>(read_u64());
        c.source.subject_id = read_str();
        c.source.trial_index = static_cast<int>(read_u64());
        c.source.side = static_cast<Side>(read_u64());
        c.source.start_frame = read_u64();
        c.label = static_cast<SkillClass>(read_u64());
        c.window_width = read_u64();
        c.values.resize(read_u64());
        for (double& v : c.values) v = read_f64();
    }
    return {std::move(crops), prov};
}

} // namespace skillnet
