#include "streamgate/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "streamgate/error.hpp"

namespace streamgate {

void validate(const TrainConfig &cfg) {
    if (cfg.stage != 1 && cfg.stage != 2) throw ConfigError("stage must be 1 or 2");
    if (cfg.batch == 0) throw ConfigError("batch must be at least 1");
    if (!(cfg.learning_rate() >= 0.0) || !std::isfinite(cfg.learning_rate()))
        throw ConfigError("learning rate must be finite and non-negative");
    if (cfg.w_s && !(*cfg.w_s > 0.0 && *cfg.w_s < 1.0))
        throw ConfigError("W_s must lie strictly between 0 and 1, got " + std::to_string(*cfg.w_s));
    if (cfg.pooling.capacity == 0) throw ConfigError("pool_k must be at least 1");
}

namespace {

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double to_double(const std::string &key, const std::string &v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception &) {
        throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
    }
}

std::uint64_t to_uint(const std::string &key, const std::string &v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
    return std::stoull(v);
}

bool to_bool(const std::string &key, const std::string &v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("'" + key + "' expects a boolean, got '" + v + "'");
}

} // namespace

TrainConfig parse_train_config(const std::string &text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
        if (key == "stage") cfg.stage = static_cast<int>(to_uint(key, v));
        else if (key == "epochs") cfg.epochs = to_uint(key, v);
        else if (key == "lr") cfg.lr = to_double(key, v);
        else if (key == "cosine") cfg.cosine = to_bool(key, v);
        else if (key == "w_s") cfg.w_s = v == "auto" ? std::nullopt : std::optional<double>(to_double(key, v));
        else if (key == "seed") cfg.seed = to_uint(key, v);
        else if (key == "batch") cfg.batch = to_uint(key, v);
        else if (key == "clip_norm") cfg.clip_norm = to_double(key, v);
        else if (key == "optimizer") {
            if (v == "adam") cfg.optimizer = OptimizerKind::adam;
            else if (v == "sgd") cfg.optimizer = OptimizerKind::sgd;
            else throw ConfigError("unknown optimizer '" + v + "'");
        } else if (key == "pool_strategy") cfg.pooling.strategy = parse_pool_strategy(v);
        else if (key == "pool_k") cfg.pooling.capacity = to_uint(key, v);
        else if (key == "log") cfg.log_path = v;
        else throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    validate(cfg);
    return cfg;
}

TrainConfig load_train_config(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str());
}

double recommend_ws(const ImbalanceStats &stats, bool *warning) {
    if (warning) *warning = false;
    if (!(stats.ratio_r >= 1.0)) {
        if (warning) *warning = true;
        return 0.5;
    }
    return std::clamp(10.0 / stats.ratio_r, 0.01, 0.5);
}

namespace {

class Optimizer {
  public:
    explicit Optimizer(OptimizerKind kind) : kind_(kind) {}
    void step(const ParameterList &params, double lr) {
        if (kind_ == OptimizerKind::adam) adam_.step(params, lr);
        else sgd_step(params, lr);
    }

  private:
    OptimizerKind kind_;
    Adam adam_;
};

std::vector<std::vector<double>> snapshot(const ParameterList &params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const auto *p : params) out.push_back(p->value.data);
    return out;
}

void restore(const ParameterList &params, const std::vector<std::vector<double>> &values) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i]->value.data = values[i];
        params[i]->value.grad.reset();
    }
}

std::uint64_t checksum_of(const ParameterList &params) {
    return parameter_checksum(ConstParameterList(params.begin(), params.end()));
}

class LossLog {
  public:
    explicit LossLog(const std::string &path) {
        if (path.empty()) return;
        out_.open(path, std::ios::trunc);
        if (!out_) throw ConfigError("cannot write training log '" + path + "'");
        out_ << "step,loss\n";
    }
    void write(std::size_t step, double loss) {
        if (out_.is_open()) out_ << step << ',' << loss << '\n';
    }

  private:
    std::ofstream out_;
};

std::vector<std::size_t> shuffled(std::size_t n, Rng &rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

std::vector<int> caption_reference(const Vocab &vocab, const std::string &text) {
    std::vector<int> ids = vocab.encode(text);
    ids.push_back(kEos);
    return ids;
}

void check_events(const StreamSample &s) {
    if (s.frames.empty()) throw DatasetError("stream sample has no frames loaded");
    for (std::size_t e = 0; e < s.events.size(); ++e) {
        if (s.events[e].anchor_frame >= s.frames.size())
            throw DatasetError("event anchor " + std::to_string(s.events[e].anchor_frame) + " beyond stream end");
        if (e > 0 && s.events[e].anchor_frame <= s.events[e - 1].anchor_frame)
            throw DatasetError("events must be ordered by anchor frame");
    }
}

// Window bounds (first, last] of event e in frame indices, as positions.
std::pair<std::size_t, std::size_t> event_window(const StreamSample &s, std::size_t e) {
    const std::size_t begin = e == 0 ? 0 : s.events[e - 1].anchor_frame + 1;
    return {begin, s.events[e].anchor_frame + 1};
}

struct StreamLoss {
    std::optional<Var> sum;
    std::size_t tokens = 0;
};

StreamLoss stream_caption_loss(Tape &tape, SsmParams &epfe, ToyDecoder &decoder, const Vocab &vocab,
                               const StreamSample &s, const PoolingPolicy &pooling) {
    check_events(s);
    StreamLoss out;
    if (s.events.empty()) return out;
    const std::size_t upto = s.events.back().anchor_frame + 1;
    auto tokens = epfe_forward(tape, epfe, std::span<const FeatureFrame>(s.frames.data(), upto));
    CognitionContext ctx;
    ctx.prompt_tokens = vocab.encode(s.prompt);
    for (std::size_t e = 0; e < s.events.size(); ++e) {
        const auto [begin, end] = event_window(s, e);
        std::vector<Var> pooled;
        for (std::size_t p : pool_positions(end - begin, pooling)) pooled.push_back(tokens[begin + p]);
        const auto ref = caption_reference(vocab, s.events[e].text);
        Var l = caption_loss(tape, decoder, pooled, ctx, ref);
        out.sum = out.sum ? add(*out.sum, l) : l;
        out.tokens += ref.size();
        ctx.prior_turns.push_back(vocab.encode(s.events[e].text));
    }
    return out;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace

TrainReport train_stage1(SsmParams &epfe, ToyDecoder &decoder, const Vocab &vocab,
                         std::span<const StreamSample> data, const TrainConfig &cfg) {
    validate(cfg);
    if (cfg.stage != 1) throw ConfigError("train_stage1 needs stage = 1");
    if (data.empty()) throw DatasetError("stage 1 needs at least one stream");
    const auto t0 = std::chrono::steady_clock::now();
    ParameterList params = epfe.parameters();
    for (auto *p : decoder.parameters()) params.push_back(p);
    Optimizer opt(cfg.optimizer);
    LossLog log(cfg.log_path);
    Rng rng(cfg.seed);
    TrainReport report;
    const std::size_t steps_per_epoch = (data.size() + cfg.batch - 1) / cfg.batch;
    const std::size_t total = steps_per_epoch * cfg.epochs;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = shuffled(data.size(), rng);
        double epoch_nll = 0.0;
        std::size_t epoch_tokens = 0;
        for (std::size_t b = 0; b < data.size(); b += cfg.batch) {
            Tape tape;
            std::optional<Var> sum;
            std::size_t count = 0;
            for (std::size_t i = b; i < std::min(data.size(), b + cfg.batch); ++i) {
                auto sl = stream_caption_loss(tape, epfe, decoder, vocab, data[order[i]], cfg.pooling);
                if (!sl.sum) continue;
                sum = sum ? add(*sum, *sl.sum) : *sl.sum;
                count += sl.tokens;
            }
            if (!sum) continue;
            Var loss = scale(*sum, 1.0 / static_cast<double>(count));
            const double value = loss.value().item();
            if (!std::isfinite(value)) {
                zero_grad(params);
                throw TrainingError("stage 1 loss became non-finite at step " + std::to_string(report.steps) +
                                    "; parameters left at the last good step");
            }
            auto good = snapshot(params);
            tape.backward(loss);
            if (cfg.clip_norm > 0.0) clip_grad_norm(params, cfg.clip_norm);
            opt.step(params, cosine_lr(cfg.learning_rate(), report.steps, total, cfg.cosine));
            for (const auto *p : params)
                if (!p->value.all_finite()) {
                    restore(params, good);
                    throw TrainingError("parameter '" + p->name + "' became non-finite at step " +
                                        std::to_string(report.steps) + "; restored the last good values");
                }
            report.step_loss.push_back(value);
            log.write(report.steps, value);
            ++report.steps;
            epoch_nll += value * static_cast<double>(count);
            epoch_tokens += count;
        }
        report.epoch_loss.push_back(epoch_tokens ? epoch_nll / static_cast<double>(epoch_tokens) : 0.0);
    }
    report.checksum = checksum_of(params);
    report.wall_s = elapsed_s(t0);
    return report;
}

double stage1_loss(const SsmParams &epfe, const ToyDecoder &decoder, const Vocab &vocab,
                   std::span<const StreamSample> data, const PoolingPolicy &pooling) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto &s : data) {
        check_events(s);
        if (s.events.empty()) continue;
        const std::size_t upto = s.events.back().anchor_frame + 1;
        const auto tokens = epfe_run(epfe, std::span<const FeatureFrame>(s.frames.data(), upto));
        CognitionContext ctx;
        ctx.prompt_tokens = vocab.encode(s.prompt);
        for (std::size_t e = 0; e < s.events.size(); ++e) {
            const auto [begin, end] = event_window(s, e);
            ctx.pooled_tokens.clear();
            for (std::size_t p : pool_positions(end - begin, pooling)) ctx.pooled_tokens.push_back(tokens[begin + p].vector);
            const auto ref = caption_reference(vocab, s.events[e].text);
            for (double v : sequence_token_nll(decoder, ctx, ref)) total += v;
            count += ref.size();
            ctx.prior_turns.push_back(vocab.encode(s.events[e].text));
        }
    }
    if (count == 0) throw DatasetError("no events to score");
    return total / static_cast<double>(count);
}

GateTrainingSet make_gate_training_set(const SsmParams &epfe, const Vocab &vocab, std::span<const StreamSample> data) {
    if (data.empty()) throw DatasetError("stage 2 needs at least one stream");
    GateTrainingSet set;
    set.prompt = vocab.encode(data.front().prompt);
    for (const auto &s : data) {
        if (s.frames.size() != s.labels.size())
            throw DatasetError("stream has " + std::to_string(s.frames.size()) + " frames and " +
                               std::to_string(s.labels.size()) + " labels");
        if (vocab.encode(s.prompt) != set.prompt) throw DatasetError("stage 2 expects one prompt across the dataset");
        const auto toks = epfe_run(epfe, s.frames);
        const std::size_t d = epfe.config.d_out;
        Tensor t(Shape{toks.size(), d});
        for (std::size_t i = 0; i < toks.size(); ++i)
            std::copy(toks[i].vector.begin(), toks[i].vector.end(), t.data.begin() + i * d);
        set.tokens.push_back(std::move(t));
        set.labels.push_back(s.labels);
    }
    set.stats = imbalance_stats(data);
    return set;
}

namespace {

double weight_total(std::span<const int> labels, double w_s) {
    double w = 0.0;
    for (int l : labels) w += l == kLabelRespond ? 1.0 - w_s : w_s;
    return w;
}

} // namespace

Var weighted_gate_loss(Var logits, std::span<const int> labels, double w_s) {
    const std::array<double, 2> w{w_s, 1.0 - w_s};
    Var sum = cross_entropy_rows(logits, labels, std::span<const double>(w));
    return scale(sum, 1.0 / weight_total(labels, w_s));
}

TrainReport train_stage2(GateModel &gate, const GateTrainingSet &set, const TrainConfig &cfg) {
    validate(cfg);
    if (cfg.stage != 2) throw ConfigError("train_stage2 needs stage = 2");
    const auto t0 = std::chrono::steady_clock::now();
    TrainReport report;
    report.w_s = cfg.w_s ? *cfg.w_s : recommend_ws(set.stats);
    const std::array<double, 2> w{report.w_s, 1.0 - report.w_s};
    ParameterList params = gate.parameters();
    Optimizer opt(cfg.optimizer);
    LossLog log(cfg.log_path);
    Rng rng(cfg.seed);
    const std::size_t n = set.tokens.size();
    const std::size_t total = (n + cfg.batch - 1) / cfg.batch * cfg.epochs;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = shuffled(n, rng);
        double epoch_sum = 0.0, epoch_w = 0.0;
        for (std::size_t b = 0; b < n; b += cfg.batch) {
            Tape tape;
            std::optional<Var> sum;
            double wsum = 0.0;
            for (std::size_t i = b; i < std::min(n, b + cfg.batch); ++i) {
                const auto &labels = set.labels[order[i]];
                Var logits = gate_logits(tape, gate, set.prompt, tape.constant(set.tokens[order[i]]));
                Var l = cross_entropy_rows(logits, labels, std::span<const double>(w));
                sum = sum ? add(*sum, l) : l;
                wsum += weight_total(labels, report.w_s);
            }
            Var loss = scale(*sum, 1.0 / wsum);
            const double value = loss.value().item();
            if (!std::isfinite(value)) {
                zero_grad(params);
                throw TrainingError("stage 2 loss became non-finite at step " + std::to_string(report.steps) +
                                    "; parameters left at the last good step");
            }
            auto good = snapshot(params);
            tape.backward(loss);
            if (cfg.clip_norm > 0.0) clip_grad_norm(params, cfg.clip_norm);
            opt.step(params, cosine_lr(cfg.learning_rate(), report.steps, total, cfg.cosine));
            for (const auto *p : params)
                if (!p->value.all_finite()) {
                    restore(params, good);
                    throw TrainingError("parameter '" + p->name + "' became non-finite at step " +
                                        std::to_string(report.steps) + "; restored the last good values");
                }
            report.step_loss.push_back(value);
            log.write(report.steps, value);
            ++report.steps;
            epoch_sum += value * wsum;
            epoch_w += wsum;
        }
        report.epoch_loss.push_back(epoch_w > 0.0 ? epoch_sum / epoch_w : 0.0);
    }
    report.checksum = checksum_of(params);
    report.wall_s = elapsed_s(t0);
    return report;
}

TrainReport train_stage2(GateModel &gate, const SsmParams &epfe, const Vocab &vocab,
                         std::span<const StreamSample> data, const TrainConfig &cfg) {
    return train_stage2(gate, make_gate_training_set(epfe, vocab, data), cfg);
}

} // namespace streamgate
