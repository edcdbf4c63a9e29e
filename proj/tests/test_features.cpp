#include <gtest/gtest.h>

#include <cmath>

#include "streamgate/binary_io.hpp"
#include "streamgate/features.hpp"
#include "streamgate/numerics.hpp"
#include "support.hpp"

using namespace streamgate;

namespace {

SyntheticStreamSpec two_event_spec(double noise) {
    SyntheticStreamSpec s;
    s.seed = 4;
    s.num_frames = 60;
    s.noise_std = noise;
    s.event_segments = {{5, 25, 0}, {35, 55, 1}};
    return s;
}

double mean_similarity(const FeatureStream &f, std::size_t a0, std::size_t a1, std::size_t b0, std::size_t b1) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = a0; i < a1; ++i)
        for (std::size_t j = b0; j < b1; ++j) {
            if (i == j) continue;
            s += cosine_similarity(f[i].features, f[j].features);
            ++n;
        }
    return s / static_cast<double>(n);
}

} // namespace

TEST(SyntheticStream, ZeroNoiseSegmentEqualsAnchor) {
    SyntheticStreamSpec s;
    s.num_frames = 12;
    s.noise_std = 0.0;
    s.event_segments = {{0, 12, 0}};
    const auto frames = generate_synthetic_stream(s);
    const auto anchor = class_anchor(0, s.d_spat, s.anchor_seed);
    ASSERT_EQ(frames.size(), 12u);
    for (const auto &f : frames) EXPECT_EQ(f.features, anchor);
}

TEST(SyntheticStream, FrameIndicesAndTimes) {
    auto s = two_event_spec(0.1);
    s.fps = 4.0;
    const auto frames = generate_synthetic_stream(s);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        EXPECT_EQ(frames[i].frame_index, i);
        EXPECT_DOUBLE_EQ(frames[i].timestamp_s, static_cast<double>(i) / 4.0);
    }
}

TEST(SyntheticStream, SameSeedBitwiseIdentical) {
    EXPECT_EQ(generate_synthetic_stream(two_event_spec(0.1)), generate_synthetic_stream(two_event_spec(0.1)));
    auto other = two_event_spec(0.1);
    other.seed = 5;
    EXPECT_NE(generate_synthetic_stream(two_event_spec(0.1)), generate_synthetic_stream(other));
}

TEST(SyntheticStream, WithinSegmentMoreSimilarThanAcross) {
    const auto f = generate_synthetic_stream(two_event_spec(0.01));
    const double within = 0.5 * (mean_similarity(f, 5, 25, 5, 25) + mean_similarity(f, 35, 55, 35, 55));
    const double across = mean_similarity(f, 5, 25, 35, 55);
    EXPECT_GT(within, across);
    EXPECT_GT(within, 0.99);
}

TEST(SyntheticStream, InvalidSpecs) {
    auto s = two_event_spec(0.1);
    s.event_segments = {{5, 25, 0}, {20, 30, 1}};
    EXPECT_THROW(generate_synthetic_stream(s), SpecError);
    s.event_segments = {{5, 61, 0}};
    EXPECT_THROW(generate_synthetic_stream(s), SpecError);
    s.event_segments = {{5, 5, 0}};
    EXPECT_THROW(generate_synthetic_stream(s), SpecError);
    s.event_segments = {};
    s.fps = 0.0;
    EXPECT_THROW(generate_synthetic_stream(s), SpecError);
}

TEST(SyntheticStream, SpecJsonRoundTrip) {
    const auto s = two_event_spec(0.25);
    nlohmann::json j = s;
    const auto back = j.get<SyntheticStreamSpec>();
    EXPECT_EQ(generate_synthetic_stream(back), generate_synthetic_stream(s));
}

TEST(FeatureFile, RoundTripIsBitExact) {
    streamgate::testing::TempDir dir("sgf");
    auto frames = generate_synthetic_stream(two_event_spec(0.3));
    frames[3].features[0] = -0.0;
    write_feature_file(dir.file("a.sgf"), frames);
    const auto back = load_feature_file(dir.file("a.sgf"));
    ASSERT_EQ(back.size(), frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        EXPECT_EQ(back[i].frame_index, frames[i].frame_index);
        EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i].timestamp_s), std::bit_cast<std::uint64_t>(frames[i].timestamp_s));
        for (std::size_t k = 0; k < frames[i].features.size(); ++k)
            ASSERT_EQ(std::bit_cast<std::uint64_t>(back[i].features[k]), std::bit_cast<std::uint64_t>(frames[i].features[k]));
    }
}

TEST(FeatureFile, EmptyStream) {
    streamgate::testing::TempDir dir("sgf");
    write_feature_file(dir.file("e.sgf"), {});
    EXPECT_TRUE(load_feature_file(dir.file("e.sgf")).empty());
}

TEST(FeatureFile, TimestampRegressionNamesFrame) {
    streamgate::testing::TempDir dir("sgf");
    BinaryWriter w;
    w.bytes("SGF1");
    w.u32(2);
    w.u64(10);
    for (std::uint64_t i = 0; i < 10; ++i) {
        w.u64(i);
        w.f64(i == 7 ? 2.0 : 0.5 * static_cast<double>(i));
        w.f64(1.0);
        w.f64(2.0);
    }
    w.save(dir.file("bad.sgf"));
    try {
        load_feature_file(dir.file("bad.sgf"));
        FAIL() << "expected a format error";
    } catch (const FormatError &e) {
        EXPECT_NE(std::string(e.what()).find("frame 7"), std::string::npos) << e.what();
    }
}

TEST(FeatureFile, BadMagicAndTruncation) {
    streamgate::testing::TempDir dir("sgf");
    BinaryWriter w;
    w.bytes("XXXX");
    w.save(dir.file("m.sgf"));
    EXPECT_THROW(load_feature_file(dir.file("m.sgf")), FormatError);
    write_feature_file(dir.file("t.sgf"), generate_synthetic_stream(two_event_spec(0.1)));
    std::filesystem::resize_file(dir.file("t.sgf"), 100);
    EXPECT_THROW(load_feature_file(dir.file("t.sgf")), FormatError);
    EXPECT_THROW(load_feature_file(dir.file("missing.sgf")), FormatError);
}

TEST(FeatureFile, WriterRejectsInconsistentStreams) {
    streamgate::testing::TempDir dir("sgf");
    FeatureStream f{{0, 0.0, {1.0, 2.0}}, {1, 0.5, {1.0}}};
    EXPECT_THROW(write_feature_file(dir.file("x.sgf"), f), InputError);
}
