#pragma once

// Per-frame spatial feature vectors: the stand-in for a frozen image encoder.
// Frames come either from the synthetic generator or from SGF1 files holding
// precomputed encoder outputs (one pooled vector per frame).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace streamgate {

struct FeatureFrame {
    std::uint64_t frame_index = 0;
    double timestamp_s = 0.0;
    std::vector<double> features;

    bool operator==(const FeatureFrame &) const = default;
};

using FeatureStream = std::vector<FeatureFrame>;

// Frames [start_frame, end_frame) show event `event_class`.
struct EventSegment {
    std::size_t start_frame = 0;
    std::size_t end_frame = 0;
    int event_class = 0;
};

inline constexpr std::size_t kDefaultSpatialDim = 64;
inline constexpr double kDefaultFps = 2.0;
inline constexpr std::uint64_t kDefaultAnchorSeed = 0x5eed'a9c0;

struct SyntheticStreamSpec {
    std::uint64_t seed = 0;
    std::size_t num_frames = 0;
    double fps = kDefaultFps;
    std::vector<EventSegment> event_segments;
    double noise_std = 0.1;
    std::size_t d_spat = kDefaultSpatialDim;
    // Class anchors are a function of (class, d_spat, anchor_seed) only, so
    // every stream in a corpus shares them.
    std::uint64_t anchor_seed = kDefaultAnchorSeed;
};

// Throws SpecError on overlapping / out-of-range / empty segments or bad rates.
void validate(const SyntheticStreamSpec &spec);

// Fixed standard-normal anchor vector for an event class.
std::vector<double> class_anchor(int event_class, std::size_t d_spat, std::uint64_t anchor_seed = kDefaultAnchorSeed);

// Segment frames are anchor + N(0, noise_std^2); other frames pure noise.
FeatureStream generate_synthetic_stream(const SyntheticStreamSpec &spec);

// SGF1: "SGF1", u32 D_spat, u64 frame count, then per frame
// (u64 frame_index, f64 timestamp_s, D_spat x f64), all little-endian.
void write_feature_file(const std::string &path, std::span<const FeatureFrame> frames);
FeatureStream load_feature_file(const std::string &path);

// Throws InputError unless timestamps strictly increase and widths agree.
void check_stream(std::span<const FeatureFrame> frames);

void to_json(nlohmann::json &j, const EventSegment &s);
void from_json(const nlohmann::json &j, EventSegment &s);
void to_json(nlohmann::json &j, const SyntheticStreamSpec &s);
void from_json(const nlohmann::json &j, SyntheticStreamSpec &s);

} // namespace streamgate
