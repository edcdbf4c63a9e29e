#include <gtest/gtest.h>

#include <cmath>

#include "streamgate/metrics.hpp"
#include "streamgate/numerics.hpp"

using namespace streamgate;

namespace {

std::vector<int> marks(std::size_t n, std::initializer_list<std::size_t> at) {
    std::vector<int> v(n, 0);
    for (auto i : at) v[i] = 1;
    return v;
}

std::vector<DialogueTurn> turns_at(std::initializer_list<std::pair<double, const char *>> ts) {
    std::vector<DialogueTurn> out;
    for (const auto &[t, text] : ts) out.push_back({static_cast<std::uint64_t>(t * 2.0), t, text});
    return out;
}

} // namespace

TEST(TriggerAcc, WindowedMatching) {
    const auto truth = marks(100, {10, 50}), pred = marks(100, {11, 49, 80});
    EXPECT_NEAR(trigger_acc(pred, truth, 2), 2.0 / 3.0, 1e-15);
    EXPECT_DOUBLE_EQ(trigger_acc(pred, truth, 0), 0.0);
    EXPECT_DOUBLE_EQ(trigger_acc(truth, truth, 0), 1.0);
    EXPECT_DOUBLE_EQ(trigger_acc(marks(100, {}), truth, 5), 0.0);
    // One prediction cannot serve two truths.
    EXPECT_DOUBLE_EQ(trigger_acc(marks(100, {10}), marks(100, {9, 11}), 1), 0.5);
    EXPECT_THROW(trigger_acc(marks(3, {}), truth, 0), EvaluationError);
}

TEST(TimVal, BalancedAccuracy) {
    const auto truth = marks(50, {3, 30});
    EXPECT_DOUBLE_EQ(tim_val(truth, truth), 1.0);
    EXPECT_DOUBLE_EQ(tim_val(marks(50, {}), truth), 0.5);
    EXPECT_DOUBLE_EQ(tim_val(std::vector<int>(50, 1), truth), 0.5);
    EXPECT_DOUBLE_EQ(tim_val(marks(50, {3}), truth), 0.75);
    EXPECT_THROW(tim_val(marks(50, {}), marks(50, {})), EvaluationError);
}

TEST(TimVal, RandomGuessingNearHalf) {
    Rng rng(4);
    const std::size_t n = 40000;
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
        truth[i] = rng.below(20) == 0;
        pred[i] = rng.below(2);
    }
    EXPECT_NEAR(tim_val(pred, truth), 0.5, 0.02);
}

TEST(TimeDiff, HandCases) {
    const std::vector<double> ev{10.0, 20.0};
    EXPECT_DOUBLE_EQ(time_diff(turns_at({{10.0, ""}, {20.0, ""}}), ev, 5.0), 0.0);
    EXPECT_DOUBLE_EQ(time_diff(turns_at({{11.0, ""}, {23.0, ""}}), ev, 5.0), 2.0);
    EXPECT_DOUBLE_EQ(time_diff({}, ev, 2.0), 2.0);
    EXPECT_DOUBLE_EQ(time_diff(turns_at({{19.0, ""}}), ev, 6.0), 3.5);
    EXPECT_DOUBLE_EQ(default_time_penalty(60.0, 4), 15.0);
    EXPECT_THROW(time_diff({}, {}, 1.0), EvaluationError);
}

TEST(Bleu, HandComputed) {
    EXPECT_NEAR(bleu("a dog runs in the park", "a dog runs in the park", 4), 1.0, 1e-12);
    // Clipped unigram counts: "the" is credited once.
    EXPECT_NEAR(bleu("the the the", "the cat", 1), 1.0 / 3.0, 1e-12);
    // Precisions 5/6, 3/5, 2/4, 1/3 with equal lengths.
    EXPECT_NEAR(bleu("the cat sat on the mat", "the cat sat on a mat", 4), std::pow(1.0 / 12.0, 0.25), 1e-12);
    // Brevity penalty exp(1 - 4/2).
    EXPECT_NEAR(bleu("a b", "a b c d", 1), std::exp(-1.0), 1e-12);
    EXPECT_DOUBLE_EQ(bleu("w x y z", "a b c d e f", 4), 0.0);
    EXPECT_DOUBLE_EQ(bleu("a", "a", 1), 1.0);
    EXPECT_DOUBLE_EQ(bleu("a", "b", 1), 0.0);
    // Precisions 3/4, 2/3, 1/2; the 4-gram has no match and is smoothed to 1/2.
    EXPECT_NEAR(bleu("a b c d", "a b c x", 4), std::pow(0.75 * (2.0 / 3.0) * 0.5 * 0.5, 0.25), 1e-12);
    bool warn = false;
    const std::vector<std::string> empty;
    const std::vector<std::vector<std::string>> refs{{"a"}};
    EXPECT_DOUBLE_EQ(bleu(empty, refs, 4, &warn), 0.0);
    EXPECT_TRUE(warn);
}

TEST(RougeL, HandComputed) {
    EXPECT_DOUBLE_EQ(rouge_l("a b c", "a b c"), 1.0);
    EXPECT_DOUBLE_EQ(rouge_l("x y", "a b c"), 0.0);
    const double p = 0.75, r = 1.0, b2 = 1.44;
    EXPECT_NEAR(rouge_l("a b c d", "a c d"), (1 + b2) * p * r / (r + b2 * p), 1e-12);
    EXPECT_DOUBLE_EQ(rouge_l("", "a"), 0.0);
}

TEST(TokenF1, BagOfWords) {
    EXPECT_DOUBLE_EQ(token_f1("a dog runs", "runs a dog"), 1.0);
    EXPECT_DOUBLE_EQ(token_f1("a cat", "the dog"), 0.0);
    EXPECT_NEAR(token_f1("a a b", "a b c"), 2.0 / 3.0, 1e-15);
}

TEST(Fluency, MatchedWithinTolerance) {
    const std::vector<double> ev{1.0, 5.0};
    const std::vector<std::string> refs{"a dog runs", "a cat sits"};
    EXPECT_DOUBLE_EQ(fluency(turns_at({{1.0, "a dog runs"}, {5.5, "a cat sits"}}), ev, refs), 1.0);
    EXPECT_DOUBLE_EQ(fluency({}, ev, refs), 0.0);
    EXPECT_DOUBLE_EQ(fluency(turns_at({{1.2, "a dog runs"}, {9.0, "a cat sits"}}), ev, refs), 0.5);
    EXPECT_THROW(fluency({}, ev, std::vector<std::string>{"x"}), EvaluationError);
}

TEST(Perplexity, ExpMeanNll) {
    const std::vector<double> nll{std::log(2.0), std::log(2.0)};
    EXPECT_NEAR(perplexity(nll), 2.0, 1e-12);
    const std::vector<double> mixed{0.0, std::log(4.0)};
    EXPECT_NEAR(perplexity(mixed), 2.0, 1e-12);
    EXPECT_THROW(perplexity({}), EvaluationError);
}

TEST(Report, JsonNullsAndRoundTrip) {
    EvalReport r;
    r.trigger_acc = 0.5;
    r.streams = 3;
    nlohmann::json j = r;
    EXPECT_TRUE(j.at("ppl").is_null());
    EXPECT_TRUE(j.at("tim_val").is_null());
    EXPECT_DOUBLE_EQ(j.at("trigger_acc").get<double>(), 0.5);
    const auto back = j.get<EvalReport>();
    EXPECT_EQ(back.trigger_acc, r.trigger_acc);
    EXPECT_FALSE(back.ppl);
    EXPECT_EQ(back.streams, 3u);
}

TEST(Report, EvaluateStreamPerfectRun) {
    StreamTruth truth;
    for (std::size_t i = 0; i < 20; ++i) truth.frame_times.push_back(static_cast<double>(i) * 0.5);
    truth.labels = marks(20, {4, 12});
    truth.event_frames = {4, 12};
    truth.event_texts = {"a dog runs", "a cat sits"};
    StreamRun run;
    run.decisions = truth.labels;
    run.turns = {{4, 2.0, "a dog runs"}, {12, 6.0, "a cat sits"}};
    const auto r = evaluate_stream(run, truth);
    EXPECT_DOUBLE_EQ(*r.trigger_acc, 1.0);
    EXPECT_DOUBLE_EQ(*r.tim_val, 1.0);
    EXPECT_DOUBLE_EQ(*r.time_diff_s, 0.0);
    EXPECT_DOUBLE_EQ(*r.fluency, 1.0);
    EXPECT_DOUBLE_EQ(*r.caption_exact_match, 1.0);
    EXPECT_NEAR(*r.bleu1, 1.0, 1e-12);
    EXPECT_NEAR(*r.rouge_l, 1.0, 1e-12);
    EXPECT_FALSE(r.ppl);

    run.decisions = marks(20, {});
    run.turns.clear();
    const auto s = evaluate_stream(run, truth);
    EXPECT_DOUBLE_EQ(*s.trigger_acc, 0.0);
    EXPECT_DOUBLE_EQ(*s.tim_val, 0.5);
    // Default penalty: 9.5 s / 2 events.
    EXPECT_DOUBLE_EQ(*s.time_diff_s, 4.75);
    EXPECT_DOUBLE_EQ(*s.fluency, 0.0);
    EXPECT_FALSE(s.caption_exact_match);
}

TEST(Report, MeanSkipsUnsetFields) {
    EvalReport a, b;
    a.trigger_acc = 1.0;
    b.trigger_acc = 0.5;
    b.tim_val = 0.8;
    const std::vector<EvalReport> rs{a, b};
    const auto m = mean_report(rs);
    EXPECT_DOUBLE_EQ(*m.trigger_acc, 0.75);
    EXPECT_DOUBLE_EQ(*m.tim_val, 0.8);
    EXPECT_FALSE(m.fluency);
    EXPECT_EQ(m.streams, 2u);
}
