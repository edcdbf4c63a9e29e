#include "streamgate/datagen.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>

#include "streamgate/cognition.hpp"
#include "streamgate/error.hpp"
#include "streamgate/numerics.hpp"

namespace streamgate {

using nlohmann::json;

std::vector<CaptionRecord> dedup_captions(std::span<const CaptionRecord> captions) {
    std::vector<CaptionRecord> out;
    std::string current;
    for (std::size_t i = 0; i < captions.size(); ++i) {
        if (i > 0 && captions[i].time_s < captions[i - 1].time_s)
            throw InputError("caption " + std::to_string(i) + " at " + std::to_string(captions[i].time_s) +
                             " s precedes the previous caption");
        std::string text = normalize_whitespace(captions[i].text);
        if (!out.empty() && text == current) continue;
        current = text;
        out.push_back({std::move(text), captions[i].time_s});
    }
    return out;
}

std::vector<std::size_t> anchor_frames(std::span<const CaptionRecord> events, std::span<const double> frame_times) {
    for (std::size_t i = 1; i < frame_times.size(); ++i)
        if (!(frame_times[i] > frame_times[i - 1]))
            throw InputError("frame times must increase (frame " + std::to_string(i) + ")");
    std::vector<std::size_t> anchors;
    anchors.reserve(events.size());
    for (std::size_t e = 0; e < events.size(); ++e) {
        const double t = events[e].time_s;
        const std::string who = "event " + std::to_string(e) + " ('" + events[e].text + "' at " + std::to_string(t) + " s)";
        if (frame_times.empty() || t < frame_times.front() || t > frame_times.back())
            throw DatasetError(who + " lies outside the frame range");
        const auto it = std::lower_bound(frame_times.begin(), frame_times.end(), t);
        const auto frame = static_cast<std::size_t>(it - frame_times.begin());
        if (std::find(anchors.begin(), anchors.end(), frame) != anchors.end())
            throw DatasetError(who + " collides with an earlier event at frame " + std::to_string(frame));
        anchors.push_back(frame);
    }
    return anchors;
}

std::vector<int> label_frames(std::span<const CaptionRecord> events, std::span<const double> frame_times) {
    std::vector<int> labels(frame_times.size(), kLabelSilence);
    for (std::size_t a : anchor_frames(events, frame_times)) labels[a] = kLabelRespond;
    return labels;
}

StreamSample build_stream_sample(std::span<const CaptionRecord> captions, FeatureStream frames,
                                 const std::string &prompt, const std::string &features_path) {
    auto events = dedup_captions(captions);
    std::vector<double> times;
    times.reserve(frames.size());
    for (const auto &f : frames) times.push_back(f.timestamp_s);
    const auto anchors = anchor_frames(events, times);
    StreamSample s;
    s.prompt = normalize_whitespace(prompt);
    s.labels.assign(frames.size(), kLabelSilence);
    for (std::size_t e = 0; e < events.size(); ++e) {
        s.events.push_back({events[e].text, anchors[e]});
        s.labels[anchors[e]] = kLabelRespond;
    }
    s.features_path = features_path;
    s.frames = std::move(frames);
    return s;
}

ImbalanceStats imbalance_stats(std::span<const StreamSample> samples) {
    if (samples.empty()) throw DatasetError("dataset is empty");
    ImbalanceStats st;
    for (const auto &s : samples)
        for (int l : s.labels) (l == kLabelRespond ? st.response_count : st.silence_count)++;
    if (st.response_count == 0) throw DatasetError("degenerate dataset: no frame is labelled respond");
    st.ratio_r = static_cast<double>(st.silence_count) / static_cast<double>(st.response_count);
    st.warning = st.ratio_r <= 1.0;
    return st;
}

namespace {

std::vector<json> read_jsonl(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::vector<json> rows;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::exception &e) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

std::ofstream open_out(const std::string &path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + path + "'");
    return out;
}

} // namespace

std::vector<CaptionRecord> read_captions_jsonl(const std::string &path) {
    std::vector<CaptionRecord> out;
    for (const auto &j : read_jsonl(path)) {
        try {
            out.push_back({j.at("text").get<std::string>(), j.at("time_s").get<double>()});
        } catch (const json::exception &e) {
            throw FormatError(path + ": caption " + std::to_string(out.size()) + ": " + e.what());
        }
    }
    return out;
}

void write_captions_jsonl(const std::string &path, std::span<const CaptionRecord> captions) {
    auto out = open_out(path);
    for (const auto &c : captions) out << json{{"text", c.text}, {"time_s", c.time_s}}.dump() << '\n';
}

void to_json(json &j, const StreamSample &s) {
    json events = json::array();
    for (const auto &e : s.events) events.push_back({{"text", e.text}, {"anchor_frame", e.anchor_frame}});
    j = json{{"prompt", s.prompt}, {"events", events}, {"labels", s.labels}, {"features", s.features_path}};
}

void from_json(const json &j, StreamSample &s) {
    s.prompt = j.at("prompt").get<std::string>();
    s.events.clear();
    for (const auto &e : j.at("events"))
        s.events.push_back({e.at("text").get<std::string>(), e.at("anchor_frame").get<std::size_t>()});
    s.labels = j.at("labels").get<std::vector<int>>();
    s.features_path = j.value("features", std::string{});
}

std::vector<StreamSample> read_dataset_jsonl(const std::string &path, bool load_frames) {
    const auto dir = std::filesystem::path(path).parent_path();
    std::vector<StreamSample> out;
    for (const auto &j : read_jsonl(path)) {
        StreamSample s;
        try {
            s = j.get<StreamSample>();
        } catch (const json::exception &e) {
            throw FormatError(path + ": sample " + std::to_string(out.size()) + ": " + e.what());
        }
        for (int l : s.labels)
            if (l != kLabelSilence && l != kLabelRespond)
                throw DatasetError(path + ": sample " + std::to_string(out.size()) + " has label " + std::to_string(l));
        for (const auto &e : s.events)
            if (e.anchor_frame >= s.labels.size() || s.labels[e.anchor_frame] != kLabelRespond)
                throw DatasetError(path + ": event '" + e.text + "' anchor does not match the labels");
        if (load_frames && !s.features_path.empty()) {
            std::filesystem::path fp(s.features_path);
            if (fp.is_relative()) fp = dir / fp;
            s.frames = load_feature_file(fp.string());
            if (s.frames.size() != s.labels.size())
                throw DatasetError(path + ": sample " + std::to_string(out.size()) + " has " +
                                   std::to_string(s.labels.size()) + " labels for " +
                                   std::to_string(s.frames.size()) + " frames");
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_dataset_jsonl(const std::string &path, std::span<const StreamSample> samples) {
    auto out = open_out(path);
    for (const auto &s : samples) out << json(s).dump() << '\n';
}

// ---- synthetic corpus ------------------------------------------------------------

const std::string &class_caption(int event_class) {
    static const std::array<std::string, 8> captions = {
        "person cooking", "dog running",   "car parking",  "door opening",
        "ball bouncing",  "bird landing",  "light flashing", "crowd cheering"};
    if (event_class < 0 || static_cast<std::size_t>(event_class) >= captions.size())
        throw ConfigError("no caption for event class " + std::to_string(event_class));
    return captions[static_cast<std::size_t>(event_class)];
}

SyntheticStreamSpec random_stream_spec(const SyntheticCorpusConfig &c, std::size_t stream_index) {
    if (c.num_classes < 2 && c.events_per_stream > 1)
        throw ConfigError("consecutive events need at least two classes");
    if (c.min_event_frames == 0 || c.min_event_frames > c.max_event_frames)
        throw ConfigError("invalid event length range");
    Rng rng(c.seed * 7919ull + stream_index * 104729ull + 17);
    const std::size_t n = c.events_per_stream;
    std::vector<std::size_t> lengths(n);
    std::size_t used = 0;
    for (auto &len : lengths) {
        len = c.min_event_frames + rng.below(c.max_event_frames - c.min_event_frames + 1);
        used += len + c.min_gap_frames;
    }
    if (used > c.frames_per_stream)
        throw ConfigError("stream of " + std::to_string(c.frames_per_stream) + " frames cannot hold " +
                          std::to_string(n) + " events with the requested gaps");
    // Spread the slack over the n gaps before events and the tail.
    std::vector<std::size_t> extra(n + 1, 0);
    for (std::size_t s = c.frames_per_stream - used; s > 0; --s) ++extra[rng.below(n + 1)];
    SyntheticStreamSpec spec;
    spec.seed = c.seed * 1000003ull + stream_index;
    spec.num_frames = c.frames_per_stream;
    spec.fps = c.fps;
    spec.noise_std = c.noise_std;
    spec.d_spat = c.d_spat;
    spec.anchor_seed = c.anchor_seed;
    std::size_t pos = 0;
    int prev = -1;
    for (std::size_t e = 0; e < n; ++e) {
        pos += c.min_gap_frames + extra[e];
        int cls;
        do {
            cls = static_cast<int>(rng.below(c.num_classes));
        } while (cls == prev);
        prev = cls;
        spec.event_segments.push_back({pos, pos + lengths[e], cls});
        pos += lengths[e];
    }
    validate(spec);
    return spec;
}

std::vector<CaptionRecord> synthetic_captions(const SyntheticStreamSpec &spec) {
    std::vector<CaptionRecord> out;
    for (const auto &seg : spec.event_segments) {
        const double start = static_cast<double>(seg.start_frame) / spec.fps;
        const double end = static_cast<double>(seg.end_frame) / spec.fps;
        for (double t = start; t < end; t += 1.0) out.push_back({class_caption(seg.event_class), t});
    }
    return out;
}

std::vector<StreamSample> build_synthetic_corpus(const SyntheticCorpusConfig &config) {
    std::vector<StreamSample> out;
    out.reserve(config.num_streams);
    for (std::size_t i = 0; i < config.num_streams; ++i) {
        const auto spec = random_stream_spec(config, i);
        out.push_back(build_stream_sample(synthetic_captions(spec), generate_synthetic_stream(spec), config.prompt));
    }
    return out;
}

std::vector<std::string> corpus_texts(std::span<const StreamSample> samples) {
    std::vector<std::string> texts;
    for (const auto &s : samples) {
        texts.push_back(s.prompt);
        for (const auto &e : s.events) texts.push_back(e.text);
    }
    return texts;
}

} // namespace streamgate
