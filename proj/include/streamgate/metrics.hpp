#pragma once

// Timing-alignment and language metrics for one evaluated stream.
//
// TriggerAcc  windowed set-F1: truths matched by a prediction within +-w
//             frames (one-to-one, greedy by distance) over
//             truths + unmatched predictions.
// TimVal      balanced per-frame accuracy.
// TimeDiff    mean |t_pred - t_truth| over a greedy nearest-time matching;
//             unmatched events cost a penalty.
// Fluency     mean over events of token-F1 with the matched turn, 0 when the
//             event has no turn within the time tolerance.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace streamgate {

struct DialogueTurn {
    std::uint64_t trigger_frame = 0;
    double trigger_time_s = 0.0;
    std::string text;

    bool operator==(const DialogueTurn &) const = default;
};

// `predicted` and `labels` hold 0 (silence) / 1 (respond) per frame.
double trigger_acc(std::span<const int> predicted, std::span<const int> labels, std::size_t window_w = 0);
double tim_val(std::span<const int> predicted, std::span<const int> labels);

// Pairs (event index, turn index) from greedy one-to-one matching on
// |time difference|, closest pairs first. Pairs further apart than
// `max_gap_s` are never matched.
std::vector<std::pair<std::size_t, std::size_t>> match_turns(std::span<const DialogueTurn> turns,
                                                             std::span<const double> event_times,
                                                             double max_gap_s = 1e300);

double default_time_penalty(double duration_s, std::size_t event_count);

// Throws EvaluationError when there are no events.
double time_diff(std::span<const DialogueTurn> turns, std::span<const double> event_times, double penalty_s);

// Sets *warning for an empty candidate (score 0).
double bleu(std::span<const std::string> candidate, std::span<const std::vector<std::string>> references,
            int max_n, bool *warning = nullptr);
double bleu(const std::string &candidate, const std::string &reference, int max_n);

double rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference, double beta = 1.2);
double rouge_l(const std::string &candidate, const std::string &reference, double beta = 1.2);

// Bag-of-words F1.
double token_f1(const std::string &candidate, const std::string &reference);

inline constexpr double kDefaultFluencyTolerance = 1.0;

double fluency(std::span<const DialogueTurn> turns, std::span<const double> event_times,
               std::span<const std::string> reference_texts, double tolerance_s = kDefaultFluencyTolerance);

// exp(mean NLL); throws EvaluationError on an empty input.
double perplexity(std::span<const double> nll);

struct EvalReport {
    std::optional<double> trigger_acc, tim_val, fluency, time_diff_s, ppl, bleu1, bleu4, rouge_l;
    // Fraction of triggered turns whose text equals the matched event caption.
    std::optional<double> caption_exact_match;
    std::size_t streams = 0;
};

void to_json(nlohmann::json &j, const EvalReport &r);
void from_json(const nlohmann::json &j, EvalReport &r);

struct StreamTruth {
    std::vector<int> labels;
    std::vector<double> frame_times;
    std::vector<std::size_t> event_frames;
    std::vector<std::string> event_texts;
};

struct StreamRun {
    std::vector<int> decisions;
    std::vector<DialogueTurn> turns;
};

struct EvalOptions {
    std::size_t window_w = 0;
    double fluency_tolerance_s = kDefaultFluencyTolerance;
    // Unset: stream duration / event count.
    std::optional<double> time_penalty_s;
};

// Metrics of one stream; ppl is left unset (it needs a model).
EvalReport evaluate_stream(const StreamRun &run, const StreamTruth &truth, const EvalOptions &opts = {});

// Field-wise mean over streams of the populated values.
EvalReport mean_report(std::span<const EvalReport> reports);

} // namespace streamgate
