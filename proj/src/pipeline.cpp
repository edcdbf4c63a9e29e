#include "streamgate/pipeline.hpp"

#include <chrono>
#include <cmath>

#include "streamgate/error.hpp"

namespace streamgate {

std::string to_string(CognitionMode m) { return m == CognitionMode::blocking ? "blocking" : "async"; }

CognitionMode parse_cognition_mode(const std::string &s) {
    if (s == "blocking") return CognitionMode::blocking;
    if (s == "async") return CognitionMode::async;
    throw ConfigError("unknown cognition mode '" + s + "'");
}

std::string to_string(BenchMode m) { return m == BenchMode::event_gated ? "event_gated" : "per_step"; }

std::vector<int> RunResult::decision_labels() const {
    std::vector<int> out;
    out.reserve(log.size());
    for (const auto &f : log) out.push_back(f.decision == Decision::respond ? 1 : 0);
    return out;
}

GateFn model_gate(const GateModel &gate) {
    return [&gate](std::span<const int> prompt, const PerceptionToken &token) { return gate_step(gate, prompt, token); };
}

namespace {

using Clock = std::chrono::steady_clock;

double micros(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::micro>(b - a).count();
}

template <class F>
auto in_phase(std::uint64_t frame, const char *phase, F &&f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error &e) {
        throw Error(e.kind(), "frame " + std::to_string(frame) + " (" + phase + "): " + e.what());
    }
}

std::vector<int> strip_eos(std::vector<int> ids) {
    if (!ids.empty() && ids.back() == kEos) ids.pop_back();
    return ids;
}

std::vector<std::vector<int>> last_turns(const std::vector<std::vector<int>> &turns, std::size_t keep) {
    const std::size_t first = turns.size() > keep ? turns.size() - keep : 0;
    return {turns.begin() + static_cast<std::ptrdiff_t>(first), turns.end()};
}

} // namespace

StreamSession::StreamSession(const SsmParams &epfe, GateFn gate, CognitionBackend *backend, std::vector<int> prompt,
                             SessionOptions options)
    : epfe_(epfe), gate_(std::move(gate)), backend_(backend), options_(options), prompt_ids_(std::move(prompt)),
      state_(initial_state(epfe)), memory_(options.memory_cap) {
    if (prompt_ids_.empty()) throw InputError("session prompt is empty");
    if (!gate_) throw ConfigError("session needs a gate");
    if (options_.pooling.capacity == 0) throw ConfigError("pooling capacity must be at least 1");
    if (options_.cognition == CognitionMode::async && backend_) worker_ = std::thread([this] { worker_loop(); });
}

StreamSession::~StreamSession() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
}

void StreamSession::run_job(const Job &job) {
    CognitionContext ctx;
    ctx.prompt_tokens = prompt_ids_;
    ctx.pooled_tokens = job.pooled;
    ctx.turns_kept = options_.turns_kept;
    ctx.prior_turns = last_turns(turn_tokens_, options_.turns_kept);
    const auto t0 = Clock::now();
    auto ids = in_phase(job.frame_index, "cognition",
                        [&] { return strip_eos(backend_->decode_response(ctx, options_.max_response_len)); });
    const double us = micros(t0, Clock::now());
    std::string text = backend_->vocab().decode(ids);
    std::lock_guard lock(mu_);
    turn_tokens_.push_back(std::move(ids));
    result_.turns.push_back({job.frame_index, job.time_s, std::move(text)});
    result_.log[job.log_index].cognition_us = us;
}

void StreamSession::worker_loop() {
    for (;;) {
        Job job;
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
            if (queue_.empty()) return;
            job = std::move(queue_.front());
            queue_.pop_front();
            busy_ = true;
        }
        try {
            run_job(job);
        } catch (const std::exception &e) {
            std::lock_guard lock(mu_);
            if (!worker_error_) worker_error_ = e.what();
        }
        {
            std::lock_guard lock(mu_);
            busy_ = false;
        }
        cv_.notify_all();
    }
}

GateDecision StreamSession::process(const FeatureFrame &frame) {
    const auto t0 = Clock::now();
    PerceptionToken token = in_phase(frame.frame_index, "perception", [&] {
        auto [tok, next] = epfe_step(epfe_, state_, frame);
        state_ = std::move(next);
        memory_.append(tok);
        return tok;
    });
    const auto t1 = Clock::now();
    GateDecision d = in_phase(frame.frame_index, "gate", [&] { return gate_(prompt_ids_, token); });
    const auto t2 = Clock::now();

    FrameLog entry;
    entry.frame_index = frame.frame_index;
    entry.timestamp_s = frame.timestamp_s;
    entry.decision = d.decision;
    entry.logits = d.logits;
    entry.perception_us = micros(t0, t1);
    entry.gate_us = micros(t1, t2);
    std::size_t log_index;
    {
        std::lock_guard lock(mu_);
        if (worker_error_) throw BackendError("frame " + std::to_string(frame.frame_index) + " (cognition): " + *worker_error_);
        log_index = result_.log.size();
        result_.log.push_back(entry);
    }
    if (d.decision != Decision::respond) return d;

    // The snapshot is taken now, so a slow cognition call never sees tokens
    // that arrive after the trigger.
    Job job{log_index, frame.frame_index, frame.timestamp_s, {}};
    if (backend_) {
        for (auto &t : in_phase(frame.frame_index, "pooling", [&] { return pool(memory_, options_.pooling); }))
            job.pooled.push_back(std::move(t.vector));
    }
    memory_.mark_trigger(frame.frame_index);
    if (!backend_) return d;
    ++result_.cognition_calls;
    if (options_.cognition == CognitionMode::blocking) {
        run_job(job);
    } else {
        {
            std::lock_guard lock(mu_);
            queue_.push_back(std::move(job));
        }
        cv_.notify_all();
    }
    return d;
}

RunResult StreamSession::finish() {
    if (worker_.joinable()) {
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [this] { return (queue_.empty() && !busy_) || worker_error_.has_value(); });
            stopping_ = true;
        }
        cv_.notify_all();
        worker_.join();
    }
    if (worker_error_) throw BackendError("cognition failed: " + *worker_error_);
    return std::move(result_);
}

RunResult run_stream(StreamSession &session, std::span<const FeatureFrame> frames) {
    for (const auto &f : frames) session.process(f);
    return session.finish();
}

// ---- per-step baseline ---------------------------------------------------------

GateDecision per_step_decision(const ToyDecoder &decoder, std::span<const PerceptionToken> history,
                               std::span<const int> prompt, std::span<const std::vector<int>> prior_turns) {
    if (history.empty()) throw InputError("per-step decision needs at least one frame");
    const std::size_t d = decoder.config.d_perc;
    CognitionContext ctx;
    ctx.prompt_tokens.assign(prompt.begin(), prompt.end());
    ctx.prior_turns.assign(prior_turns.begin(), prior_turns.end());
    ctx.turns_kept = prior_turns.size();
    const auto seq = context_token_ids(ctx);
    const std::size_t rows = history.size() + seq.size();
    if (rows > decoder.config.max_seq_len)
        throw ContextOverflowError("per-step context of " + std::to_string(rows) + " positions exceeds the maximum of " +
                                   std::to_string(decoder.config.max_seq_len));
    Tensor perc(Shape{history.size(), d});
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (history[i].vector.size() != d) throw DimensionError("perception token width does not match the decoder");
        std::copy(history[i].vector.begin(), history[i].vector.end(), perc.data.begin() + i * d);
    }
    Tape tape(false);
    std::vector<Var> p{tape.constant(std::move(perc))};
    Var h = decoder_hidden(tape, decoder, p, seq, decoder.blocks.size());
    const std::size_t n = h.value().rows();
    Var last = layer_norm(slice_rows(h, n - 1, n), tape.param(decoder.lnf_g), tape.param(decoder.lnf_b));
    const Tensor &logits = matmul_nt(last, tape.param(decoder.lm_head)).value();
    GateDecision out;
    out.frame_index = history.back().frame_index;
    out.logits = {logits.data[kSilence], logits.data[kResponse]};
    if (!std::isfinite(out.logits[0]) || !std::isfinite(out.logits[1]))
        throw NumericalError("decoder produced non-finite logits at frame " + std::to_string(out.frame_index));
    out.decision = decide(out.logits[0], out.logits[1]);
    return out;
}

RunResult run_per_step_baseline(const ToyDecoder &decoder, const Vocab &vocab, const SsmParams &epfe,
                                std::span<const FeatureFrame> frames, const std::string &prompt,
                                const BaselineOptions &options) {
    const std::vector<int> prompt_ids = vocab.encode(prompt);
    RunResult result;
    SsmState state = initial_state(epfe);
    std::vector<PerceptionToken> history;
    PerceptionMemory memory;
    std::vector<std::vector<int>> turns;
    for (const auto &frame : frames) {
        const auto t0 = Clock::now();
        auto [tok, next] = in_phase(frame.frame_index, "perception", [&] { return epfe_step(epfe, state, frame); });
        state = std::move(next);
        history.push_back(tok);
        memory.append(std::move(tok));
        const auto t1 = Clock::now();
        const auto kept = last_turns(turns, options.turns_kept);
        GateDecision d;
        try {
            d = per_step_decision(decoder, history, prompt_ids, kept);
        } catch (const ContextOverflowError &e) {
            result.truncated = "context overflow at frame " + std::to_string(frame.frame_index) + ": " + e.what();
            break;
        }
        if (options.schedule) d.decision = options.schedule(frame.frame_index);
        const auto t2 = Clock::now();
        FrameLog entry;
        entry.frame_index = frame.frame_index;
        entry.timestamp_s = frame.timestamp_s;
        entry.decision = d.decision;
        entry.logits = d.logits;
        entry.perception_us = micros(t0, t1);
        entry.gate_us = micros(t1, t2);
        if (d.decision == Decision::respond) {
            CognitionContext ctx;
            ctx.prompt_tokens = prompt_ids;
            ctx.prior_turns = kept;
            ctx.turns_kept = options.turns_kept;
            if (options.text_context == TextContext::full) {
                for (const auto &t : history) ctx.pooled_tokens.push_back(t.vector);
            } else {
                for (auto &t : pool(memory, options.pooling)) ctx.pooled_tokens.push_back(std::move(t.vector));
            }
            memory.mark_trigger(frame.frame_index);
            std::vector<int> ids;
            try {
                ids = strip_eos(decode_response(decoder, ctx, options.max_response_len));
            } catch (const ContextOverflowError &e) {
                result.truncated = "context overflow at frame " + std::to_string(frame.frame_index) + ": " + e.what();
                result.log.push_back(entry);
                break;
            }
            entry.cognition_us = micros(t2, Clock::now());
            ++result.cognition_calls;
            result.turns.push_back({frame.frame_index, frame.timestamp_s, vocab.decode(ids)});
            turns.push_back(std::move(ids));
        }
        result.log.push_back(entry);
    }
    return result;
}

// ---- throughput ----------------------------------------------------------------

std::vector<BenchResult> bench_throughput(const BenchSystem &sys, const BenchOptions &options) {
    if (!sys.epfe || !sys.decoder || !sys.vocab) throw ConfigError("bench needs an extractor, a decoder and a vocabulary");
    if (!(options.duration_s > 0.0)) throw ConfigError("bench duration must be positive");
    std::vector<BenchResult> out;
    const auto prompt_ids = sys.vocab->encode(sys.prompt);
    for (BenchMode mode : options.modes) {
        if (mode == BenchMode::event_gated && !sys.gate) throw ConfigError("event-gated bench needs a gate");
        for (double fps : options.fps) {
            if (!(fps > 0.0)) throw ConfigError("bench frame rates must be positive");
            SyntheticStreamSpec spec;
            spec.seed = options.seed;
            spec.fps = fps;
            spec.num_frames = static_cast<std::size_t>(std::llround(fps * options.duration_s));
            spec.d_spat = sys.epfe->config.d_spat;
            const std::size_t n = spec.num_frames;
            if (n >= 8) spec.event_segments = {{n / 4, n / 4 + n / 8, 0}, {n / 2 + n / 8, n / 2 + n / 4, 1}};
            const auto frames = generate_synthetic_stream(spec);
            const auto t0 = Clock::now();
            if (mode == BenchMode::event_gated) {
                ToyDecoderBackend backend(*sys.decoder, *sys.vocab);
                SessionOptions so;
                so.cognition = options.cognition;
                so.memory_cap = options.memory_cap;
                StreamSession session(*sys.epfe, model_gate(*sys.gate), &backend, prompt_ids, so);
                run_stream(session, frames);
            } else {
                run_per_step_baseline(*sys.decoder, *sys.vocab, *sys.epfe, frames, sys.prompt);
            }
            BenchResult r;
            r.mode = mode;
            r.fps_in = fps;
            r.frames = n;
            r.wall_s = std::chrono::duration<double>(Clock::now() - t0).count();
            r.wall_s_per_video_second = r.wall_s / options.duration_s;
            out.push_back(r);
        }
    }
    return out;
}

} // namespace streamgate
