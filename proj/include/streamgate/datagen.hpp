#pragma once

// Streaming dataset construction from offline captions: merge adjacent
// identical captions, anchor each remaining caption to the earliest frame at
// or after its time, and label that frame respond and every other frame
// silence.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "streamgate/features.hpp"

namespace streamgate {

inline constexpr int kLabelSilence = 0;
inline constexpr int kLabelRespond = 1;

struct CaptionRecord {
    std::string text;
    double time_s = 0.0;

    bool operator==(const CaptionRecord &) const = default;
};

struct StreamEvent {
    std::string text;
    std::size_t anchor_frame = 0;

    bool operator==(const StreamEvent &) const = default;
};

struct StreamSample {
    std::string prompt;
    std::vector<StreamEvent> events;
    std::vector<int> labels;
    // Path of the SGF1 file the frames came from (may be empty in memory).
    std::string features_path;
    FeatureStream frames;
};

struct ImbalanceStats {
    std::size_t silence_count = 0;
    std::size_t response_count = 0;
    double ratio_r = 0.0;
    // Set when ratio_r < 1 (more responses than silences) or exactly 1.
    bool warning = false;
};

// Collapses runs of equal text (after whitespace normalization) to their
// first record. Throws InputError naming the first index whose time goes
// backwards.
std::vector<CaptionRecord> dedup_captions(std::span<const CaptionRecord> captions);

// Anchor frame of each event: the earliest frame whose time is >= the
// event time. Throws DatasetError naming the event when it falls outside the
// frame range or shares an anchor with an earlier event.
std::vector<std::size_t> anchor_frames(std::span<const CaptionRecord> events, std::span<const double> frame_times);

std::vector<int> label_frames(std::span<const CaptionRecord> events, std::span<const double> frame_times);

// dedup + label over a loaded stream.
StreamSample build_stream_sample(std::span<const CaptionRecord> captions, FeatureStream frames,
                                 const std::string &prompt, const std::string &features_path = {});

// Throws DatasetError on an empty dataset or when no frame is labelled respond.
ImbalanceStats imbalance_stats(std::span<const StreamSample> samples);

// Caption JSONL: {"text": ..., "time_s": ...} per line.
std::vector<CaptionRecord> read_captions_jsonl(const std::string &path);
void write_captions_jsonl(const std::string &path, std::span<const CaptionRecord> captions);

// Dataset JSONL: {"prompt", "events": [{"text", "anchor_frame"}], "labels",
// "features"} per line. Relative feature paths resolve against the dataset
// file's directory. Frames are loaded when `load_frames` is set.
std::vector<StreamSample> read_dataset_jsonl(const std::string &path, bool load_frames = true);
void write_dataset_jsonl(const std::string &path, std::span<const StreamSample> samples);

void to_json(nlohmann::json &j, const StreamSample &s);
void from_json(const nlohmann::json &j, StreamSample &s);

// ---- synthetic benchmark corpus --------------------------------------------

struct SyntheticCorpusConfig {
    std::size_t num_streams = 60;
    std::size_t frames_per_stream = 200;
    double fps = kDefaultFps;
    std::size_t events_per_stream = 3;
    std::size_t min_event_frames = 8;
    std::size_t max_event_frames = 16;
    // Noise frames before the first event and between events.
    std::size_t min_gap_frames = 20;
    std::size_t num_classes = 3;
    double noise_std = 0.1;
    std::size_t d_spat = kDefaultSpatialDim;
    std::uint64_t seed = 7;
    std::uint64_t anchor_seed = kDefaultAnchorSeed;
    std::string prompt = "describe what happens";
};

// Fixed two-word caption of each synthetic class.
const std::string &class_caption(int event_class);

// Random stream layout: events_per_stream segments separated by noise gaps,
// consecutive events of different classes.
SyntheticStreamSpec random_stream_spec(const SyntheticCorpusConfig &config, std::size_t stream_index);

// Captions of a synthetic stream: one record per second of every segment,
// starting at the segment's first frame time.
std::vector<CaptionRecord> synthetic_captions(const SyntheticStreamSpec &spec);

// Builds the whole corpus in memory through the caption pipeline above.
std::vector<StreamSample> build_synthetic_corpus(const SyntheticCorpusConfig &config);

// Every caption text plus the prompt, for vocabulary construction.
std::vector<std::string> corpus_texts(std::span<const StreamSample> samples);

} // namespace streamgate
