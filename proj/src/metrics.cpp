#include "streamgate/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "streamgate/cognition.hpp"
#include "streamgate/error.hpp"

namespace streamgate {

using nlohmann::json;

namespace {

void check_lengths(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.size() != labels.size())
        throw EvaluationError("predictions cover " + std::to_string(predicted.size()) + " frames, labels " +
                              std::to_string(labels.size()));
}

std::vector<std::size_t> positives(std::span<const int> v) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] != 0) out.push_back(i);
    return out;
}

// Greedy one-to-one matching of a to b by ascending distance; ties broken by
// a index then b index. Returns (a, b) pairs.
template <class Dist>
std::vector<std::pair<std::size_t, std::size_t>> greedy_match(std::size_t na, std::size_t nb, Dist dist,
                                                              double max_dist) {
    std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
    for (std::size_t i = 0; i < na; ++i)
        for (std::size_t j = 0; j < nb; ++j) {
            const double d = dist(i, j);
            if (d <= max_dist) cand.emplace_back(d, i, j);
        }
    std::sort(cand.begin(), cand.end());
    std::vector<bool> used_a(na, false), used_b(nb, false);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto &[d, i, j] : cand) {
        if (used_a[i] || used_b[j]) continue;
        used_a[i] = used_b[j] = true;
        out.emplace_back(i, j);
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

double trigger_acc(std::span<const int> predicted, std::span<const int> labels, std::size_t window_w) {
    check_lengths(predicted, labels);
    const auto truth = positives(labels), pred = positives(predicted);
    const auto matched = greedy_match(
        truth.size(), pred.size(),
        [&](std::size_t i, std::size_t j) {
            return std::abs(static_cast<double>(truth[i]) - static_cast<double>(pred[j]));
        },
        static_cast<double>(window_w));
    const double denom = static_cast<double>(truth.size() + (pred.size() - matched.size()));
    if (denom == 0.0) return 1.0;
    return static_cast<double>(matched.size()) / denom;
}

double tim_val(std::span<const int> predicted, std::span<const int> labels) {
    check_lengths(predicted, labels);
    std::size_t pos = 0, neg = 0, tp = 0, tn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0) {
            ++pos;
            tp += predicted[i] != 0;
        } else {
            ++neg;
            tn += predicted[i] == 0;
        }
    }
    if (pos == 0 || neg == 0) throw EvaluationError("TimVal needs both silence and respond labels");
    return 0.5 * (static_cast<double>(tp) / static_cast<double>(pos) + static_cast<double>(tn) / static_cast<double>(neg));
}

std::vector<std::pair<std::size_t, std::size_t>> match_turns(std::span<const DialogueTurn> turns,
                                                             std::span<const double> event_times, double max_gap_s) {
    return greedy_match(
        event_times.size(), turns.size(),
        [&](std::size_t e, std::size_t t) { return std::abs(turns[t].trigger_time_s - event_times[e]); }, max_gap_s);
}

double default_time_penalty(double duration_s, std::size_t event_count) {
    if (event_count == 0) throw EvaluationError("no events to spread the penalty over");
    return duration_s / static_cast<double>(event_count);
}

double time_diff(std::span<const DialogueTurn> turns, std::span<const double> event_times, double penalty_s) {
    if (event_times.empty()) throw EvaluationError("TimeDiff needs at least one event");
    const auto pairs = match_turns(turns, event_times);
    double total = penalty_s * static_cast<double>(event_times.size() - pairs.size());
    for (const auto &[e, t] : pairs) total += std::abs(turns[t].trigger_time_s - event_times[e]);
    return total / static_cast<double>(event_times.size());
}

namespace {

using Ngrams = std::map<std::vector<std::string>, std::size_t>;

Ngrams ngrams(std::span<const std::string> words, std::size_t n) {
    Ngrams out;
    for (std::size_t i = 0; i + n <= words.size(); ++i)
        ++out[std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(i),
                                       words.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return out;
}

} // namespace

double bleu(std::span<const std::string> candidate, std::span<const std::vector<std::string>> references, int max_n,
            bool *warning) {
    if (warning) *warning = false;
    if (max_n < 1) throw EvaluationError("BLEU order must be at least 1");
    if (references.empty()) throw EvaluationError("BLEU needs at least one reference");
    if (candidate.empty()) {
        if (warning) *warning = true;
        return 0.0;
    }
    double log_p = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        const auto cand = ngrams(candidate, static_cast<std::size_t>(n));
        std::size_t total = 0, hits = 0;
        for (const auto &[g, c] : cand) {
            total += c;
            std::size_t best = 0;
            for (const auto &r : references) {
                const auto rg = ngrams(r, static_cast<std::size_t>(n));
                if (auto it = rg.find(g); it != rg.end()) best = std::max(best, it->second);
            }
            hits += std::min(c, best);
        }
        if (n == 1 && hits == 0) return 0.0;
        double num = static_cast<double>(hits), den = static_cast<double>(total);
        if (hits == 0) {
            num += 1.0;
            den += 1.0;
        }
        log_p += std::log(num / den);
    }
    const double c = static_cast<double>(candidate.size());
    // Closest reference length, shorter on ties.
    double r = static_cast<double>(references[0].size());
    for (const auto &ref : references) {
        const double len = static_cast<double>(ref.size());
        if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
    }
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(log_p / max_n);
}

double bleu(const std::string &candidate, const std::string &reference, int max_n) {
    const auto cand = split_words(candidate);
    const std::vector<std::vector<std::string>> refs{split_words(reference)};
    return bleu(cand, refs, max_n);
}

double rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference, double beta) {
    if (candidate.empty() || reference.empty()) return 0.0;
    const std::size_t m = candidate.size(), n = reference.size();
    std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
    for (std::size_t i = 1; i <= m; ++i) {
        for (std::size_t j = 1; j <= n; ++j)
            cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[n]);
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(m), r = lcs / static_cast<double>(n);
    const double b2 = beta * beta;
    return (1.0 + b2) * p * r / (r + b2 * p);
}

double rouge_l(const std::string &candidate, const std::string &reference, double beta) {
    const auto c = split_words(candidate), r = split_words(reference);
    return rouge_l(c, r, beta);
}

double token_f1(const std::string &candidate, const std::string &reference) {
    const auto c = split_words(candidate), r = split_words(reference);
    if (c.empty() || r.empty()) return c.empty() && r.empty() ? 1.0 : 0.0;
    std::map<std::string, long> counts;
    for (const auto &w : r) ++counts[w];
    std::size_t common = 0;
    for (const auto &w : c)
        if (counts[w]-- > 0) ++common;
    if (common == 0) return 0.0;
    const double p = static_cast<double>(common) / static_cast<double>(c.size());
    const double rec = static_cast<double>(common) / static_cast<double>(r.size());
    return 2.0 * p * rec / (p + rec);
}

double fluency(std::span<const DialogueTurn> turns, std::span<const double> event_times,
               std::span<const std::string> reference_texts, double tolerance_s) {
    if (event_times.empty()) throw EvaluationError("Fluency needs at least one event");
    if (reference_texts.size() != event_times.size())
        throw EvaluationError("Fluency needs one reference text per event");
    double total = 0.0;
    for (const auto &[e, t] : match_turns(turns, event_times, tolerance_s))
        total += token_f1(turns[t].text, reference_texts[e]);
    return total / static_cast<double>(event_times.size());
}

double perplexity(std::span<const double> nll) {
    if (nll.empty()) throw EvaluationError("perplexity of an empty sequence");
    double s = 0.0;
    for (double v : nll) s += v;
    return std::exp(s / static_cast<double>(nll.size()));
}

namespace {

void put(json &j, const char *key, const std::optional<double> &v) {
    j[key] = v ? json(*v) : json(nullptr);
}

void get(const json &j, const char *key, std::optional<double> &v) {
    if (j.contains(key) && !j.at(key).is_null()) v = j.at(key).get<double>();
    else v.reset();
}

} // namespace

void to_json(json &j, const EvalReport &r) {
    j = json::object();
    put(j, "trigger_acc", r.trigger_acc);
    put(j, "tim_val", r.tim_val);
    put(j, "fluency", r.fluency);
    put(j, "time_diff_s", r.time_diff_s);
    put(j, "ppl", r.ppl);
    put(j, "bleu1", r.bleu1);
    put(j, "bleu4", r.bleu4);
    put(j, "rouge_l", r.rouge_l);
    put(j, "caption_exact_match", r.caption_exact_match);
    j["streams"] = r.streams;
}

void from_json(const json &j, EvalReport &r) {
    get(j, "trigger_acc", r.trigger_acc);
    get(j, "tim_val", r.tim_val);
    get(j, "fluency", r.fluency);
    get(j, "time_diff_s", r.time_diff_s);
    get(j, "ppl", r.ppl);
    get(j, "bleu1", r.bleu1);
    get(j, "bleu4", r.bleu4);
    get(j, "rouge_l", r.rouge_l);
    get(j, "caption_exact_match", r.caption_exact_match);
    r.streams = j.value("streams", std::size_t{0});
}

EvalReport evaluate_stream(const StreamRun &run, const StreamTruth &truth, const EvalOptions &opts) {
    if (truth.frame_times.size() != truth.labels.size())
        throw EvaluationError("truth has " + std::to_string(truth.labels.size()) + " labels for " +
                              std::to_string(truth.frame_times.size()) + " frame times");
    if (truth.event_frames.size() != truth.event_texts.size())
        throw EvaluationError("truth needs one text per event");
    EvalReport r;
    r.streams = 1;
    r.trigger_acc = trigger_acc(run.decisions, truth.labels, opts.window_w);
    bool one_class = std::all_of(truth.labels.begin(), truth.labels.end(), [&](int l) { return l == truth.labels[0]; });
    if (!truth.labels.empty() && !one_class) r.tim_val = tim_val(run.decisions, truth.labels);
    if (truth.event_frames.empty()) return r;
    std::vector<double> event_times;
    for (std::size_t f : truth.event_frames) {
        if (f >= truth.frame_times.size()) throw EvaluationError("event frame beyond the stream");
        event_times.push_back(truth.frame_times[f]);
    }
    const double duration = truth.frame_times.empty() ? 0.0 : truth.frame_times.back() - truth.frame_times.front();
    const double penalty = opts.time_penalty_s ? *opts.time_penalty_s : default_time_penalty(duration, event_times.size());
    r.time_diff_s = time_diff(run.turns, event_times, penalty);
    r.fluency = fluency(run.turns, event_times, truth.event_texts, opts.fluency_tolerance_s);
    const auto pairs = match_turns(run.turns, event_times, opts.fluency_tolerance_s);
    if (!pairs.empty()) {
        double b1 = 0.0, b4 = 0.0, rl = 0.0, exact = 0.0;
        for (const auto &[e, t] : pairs) {
            const auto &cand = run.turns[t].text;
            const auto &ref = truth.event_texts[e];
            b1 += bleu(cand, ref, 1);
            b4 += bleu(cand, ref, 4);
            rl += rouge_l(cand, ref);
            exact += normalize_whitespace(cand) == normalize_whitespace(ref) ? 1.0 : 0.0;
        }
        const double n = static_cast<double>(pairs.size());
        r.bleu1 = b1 / n;
        r.bleu4 = b4 / n;
        r.rouge_l = rl / n;
        r.caption_exact_match = exact / n;
    }
    return r;
}

EvalReport mean_report(std::span<const EvalReport> reports) {
    EvalReport out;
    out.streams = reports.size();
    auto avg = [&](std::optional<double> EvalReport::*field) {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto &r : reports)
            if (r.*field) {
                s += *(r.*field);
                ++n;
            }
        out.*field = n ? std::optional<double>(s / static_cast<double>(n)) : std::nullopt;
    };
    for (auto f : {&EvalReport::trigger_acc, &EvalReport::tim_val, &EvalReport::fluency, &EvalReport::time_diff_s,
                   &EvalReport::ppl, &EvalReport::bleu1, &EvalReport::bleu4, &EvalReport::rouge_l,
                   &EvalReport::caption_exact_match})
        avg(f);
    return out;
}

} // namespace streamgate
