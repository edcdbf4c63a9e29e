#include "streamgate/features.hpp"

#include <algorithm>
#include <cmath>

#include "streamgate/binary_io.hpp"
#include "streamgate/error.hpp"
#include "streamgate/numerics.hpp"

namespace streamgate {

void validate(const SyntheticStreamSpec &spec) {
    if (!(spec.fps > 0.0)) throw SpecError("fps must be positive");
    if (spec.d_spat == 0) throw SpecError("d_spat must be positive");
    if (!(spec.noise_std >= 0.0)) throw SpecError("noise_std must be non-negative");
    auto segs = spec.event_segments;
    std::sort(segs.begin(), segs.end(), [](const auto &a, const auto &b) { return a.start_frame < b.start_frame; });
    for (std::size_t i = 0; i < segs.size(); ++i) {
        const auto &s = segs[i];
        if (s.start_frame >= s.end_frame)
            throw SpecError("empty segment [" + std::to_string(s.start_frame) + ", " + std::to_string(s.end_frame) + ")");
        if (s.end_frame > spec.num_frames)
            throw SpecError("segment [" + std::to_string(s.start_frame) + ", " + std::to_string(s.end_frame) +
                            ") exceeds " + std::to_string(spec.num_frames) + " frames");
        if (s.event_class < 0) throw SpecError("negative event class");
        if (i > 0 && segs[i - 1].end_frame > s.start_frame)
            throw SpecError("segments overlap at frame " + std::to_string(s.start_frame));
    }
}

std::vector<double> class_anchor(int event_class, std::size_t d_spat, std::uint64_t anchor_seed) {
    Rng rng(anchor_seed * 1000003ull + static_cast<std::uint64_t>(event_class) * 7919ull + d_spat);
    std::vector<double> a(d_spat);
    for (auto &v : a) v = rng.normal();
    return a;
}

FeatureStream generate_synthetic_stream(const SyntheticStreamSpec &spec) {
    validate(spec);
    std::vector<int> frame_class(spec.num_frames, -1);
    for (const auto &s : spec.event_segments)
        for (std::size_t f = s.start_frame; f < s.end_frame; ++f) frame_class[f] = s.event_class;

    std::vector<std::vector<double>> anchors;
    auto anchor = [&](int c) -> const std::vector<double> & {
        if (static_cast<std::size_t>(c) >= anchors.size()) anchors.resize(static_cast<std::size_t>(c) + 1);
        auto &a = anchors[static_cast<std::size_t>(c)];
        if (a.empty()) a = class_anchor(c, spec.d_spat, spec.anchor_seed);
        return a;
    };

    Rng rng(spec.seed);
    FeatureStream frames(spec.num_frames);
    for (std::size_t f = 0; f < spec.num_frames; ++f) {
        auto &fr = frames[f];
        fr.frame_index = f;
        fr.timestamp_s = static_cast<double>(f) / spec.fps;
        fr.features.assign(spec.d_spat, 0.0);
        if (frame_class[f] >= 0) fr.features = anchor(frame_class[f]);
        for (auto &v : fr.features) {
            const double z = rng.normal();
            v += spec.noise_std * z;
        }
    }
    return frames;
}

void check_stream(std::span<const FeatureFrame> frames) {
    for (std::size_t i = 1; i < frames.size(); ++i) {
        if (!(frames[i].timestamp_s > frames[i - 1].timestamp_s))
            throw InputError("timestamps not strictly increasing at frame " + std::to_string(i));
        if (frames[i].features.size() != frames[0].features.size())
            throw InputError("frame " + std::to_string(i) + " has dimension " +
                             std::to_string(frames[i].features.size()) + ", expected " +
                             std::to_string(frames[0].features.size()));
    }
}

void write_feature_file(const std::string &path, std::span<const FeatureFrame> frames) {
    check_stream(frames);
    const std::size_t d = frames.empty() ? 0 : frames[0].features.size();
    BinaryWriter w;
    w.bytes("SGF1");
    w.u32(static_cast<std::uint32_t>(d));
    w.u64(frames.size());
    for (const auto &f : frames) {
        w.u64(f.frame_index);
        w.f64(f.timestamp_s);
        for (double v : f.features) w.f64(v);
    }
    w.save(path);
}

FeatureStream load_feature_file(const std::string &path) {
    auto r = BinaryReader::from_file(path);
    if (r.remaining() < 4 || r.bytes(4) != "SGF1") throw FormatError(path + ": bad magic at byte offset 0");
    const std::size_t d = r.u32();
    const std::uint64_t count = r.u64();
    const std::size_t record = 16 + 8 * d;
    FeatureStream frames;
    frames.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, r.remaining() / record)));
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto offset = r.offset();
        if (r.remaining() < record)
            throw FormatError(path + ": truncated payload in frame " + std::to_string(i) + " at byte offset " +
                              std::to_string(offset));
        FeatureFrame f;
        f.frame_index = r.u64();
        f.timestamp_s = r.f64();
        f.features.resize(d);
        for (auto &v : f.features) v = r.f64();
        if (!frames.empty() && !(f.timestamp_s > frames.back().timestamp_s))
            throw FormatError(path + ": non-increasing timestamp at frame " + std::to_string(i) + " (byte offset " +
                              std::to_string(offset) + ")");
        frames.push_back(std::move(f));
    }
    if (!r.at_end())
        throw FormatError(path + ": trailing bytes at byte offset " + std::to_string(r.offset()));
    return frames;
}

void to_json(nlohmann::json &j, const EventSegment &s) {
    j = nlohmann::json::array({s.start_frame, s.end_frame, s.event_class});
}

void from_json(const nlohmann::json &j, EventSegment &s) {
    if (j.is_array()) {
        if (j.size() != 3) throw SpecError("segment must be [start_frame, end_frame, event_class]");
        s.start_frame = j[0].get<std::size_t>();
        s.end_frame = j[1].get<std::size_t>();
        s.event_class = j[2].get<int>();
    } else {
        s.start_frame = j.at("start_frame").get<std::size_t>();
        s.end_frame = j.at("end_frame").get<std::size_t>();
        s.event_class = j.at("event_class").get<int>();
    }
}

void to_json(nlohmann::json &j, const SyntheticStreamSpec &s) {
    j = nlohmann::json{{"seed", s.seed},       {"num_frames", s.num_frames},         {"fps", s.fps},
                       {"noise_std", s.noise_std}, {"d_spat", s.d_spat},             {"anchor_seed", s.anchor_seed},
                       {"event_segments", s.event_segments}};
}

void from_json(const nlohmann::json &j, SyntheticStreamSpec &s) {
    s = SyntheticStreamSpec{};
    s.seed = j.at("seed").get<std::uint64_t>();
    s.num_frames = j.at("num_frames").get<std::size_t>();
    s.fps = j.value("fps", kDefaultFps);
    s.noise_std = j.value("noise_std", 0.1);
    s.d_spat = j.value("d_spat", kDefaultSpatialDim);
    s.anchor_seed = j.value("anchor_seed", kDefaultAnchorSeed);
    if (j.contains("event_segments")) s.event_segments = j.at("event_segments").get<std::vector<EventSegment>>();
}

} // namespace streamgate
