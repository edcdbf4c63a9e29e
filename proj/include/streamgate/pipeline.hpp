#pragma once

// Streaming runner: per frame, perception (extractor step + memory append),
// gate judgment, and on respond a cognition call over pooled memory. Also the
// per-step baseline, where the full decoder reads every past frame at every
// step, and the throughput benchmark.

#include <array>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "streamgate/cognition.hpp"
#include "streamgate/epfe.hpp"
#include "streamgate/gate.hpp"
#include "streamgate/memory.hpp"
#include "streamgate/metrics.hpp"

namespace streamgate {

enum class CognitionMode { blocking, async };

std::string to_string(CognitionMode m);
CognitionMode parse_cognition_mode(const std::string &s);

struct FrameLog {
    std::uint64_t frame_index = 0;
    double timestamp_s = 0.0;
    Decision decision = Decision::silence;
    std::array<double, 2> logits{};
    double perception_us = 0.0;
    double gate_us = 0.0;
    // Set on frames that invoked cognition (filled in after the call
    // finishes when cognition runs asynchronously).
    std::optional<double> cognition_us;
};

struct RunResult {
    std::vector<DialogueTurn> turns;
    std::vector<FrameLog> log;
    std::size_t cognition_calls = 0;
    // Per-step baseline only: why the stream stopped early.
    std::optional<std::string> truncated;

    std::vector<int> decision_labels() const;
};

// Any callable with the gate_step signature.
using GateFn = std::function<GateDecision(std::span<const int> prompt, const PerceptionToken &token)>;

GateFn model_gate(const GateModel &gate);

struct SessionOptions {
    CognitionMode cognition = CognitionMode::blocking;
    PoolingPolicy pooling;
    std::size_t max_response_len = 8;
    std::size_t turns_kept = kDefaultTurnsKept;
    // Ring cap for the perception memory; 0 keeps every token.
    std::size_t memory_cap = 0;
};

// One live stream. Perception, gate and memory writes happen on the caller's
// thread; with CognitionMode::async, cognition calls run on a worker in
// trigger order over snapshots taken at decision time, so the turns match a
// blocking run exactly.
class StreamSession {
  public:
    // `backend` may be null: decisions are still made and logged, no turns
    // are produced.
    StreamSession(const SsmParams &epfe, GateFn gate, CognitionBackend *backend, std::vector<int> prompt,
                  SessionOptions options = {});
    StreamSession(const StreamSession &) = delete;
    StreamSession &operator=(const StreamSession &) = delete;
    ~StreamSession();

    GateDecision process(const FeatureFrame &frame);
    // Waits for queued cognition calls and returns everything recorded.
    RunResult finish();

    const PerceptionMemory &memory() const { return memory_; }
    const std::vector<int> &prompt_tokens() const { return prompt_ids_; }

  private:
    struct Job {
        std::size_t log_index;
        std::uint64_t frame_index;
        double time_s;
        std::vector<std::vector<double>> pooled;
    };

    void run_job(const Job &job);
    void worker_loop();

    const SsmParams &epfe_;
    GateFn gate_;
    CognitionBackend *backend_;
    SessionOptions options_;
    std::vector<int> prompt_ids_;
    SsmState state_;
    PerceptionMemory memory_;

    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Job> queue_;
    bool stopping_ = false;
    bool busy_ = false;
    std::optional<std::string> worker_error_;
    std::thread worker_;
    std::vector<std::vector<int>> turn_tokens_;
    RunResult result_;
};

// Errors from any stage are rethrown as Error with the frame index and phase
// in the message.
RunResult run_stream(StreamSession &session, std::span<const FeatureFrame> frames);

// ---- per-step baseline -----------------------------------------------------

enum class TextContext { full, pooled };

struct BaselineOptions {
    std::size_t max_response_len = 8;
    std::size_t turns_kept = kDefaultTurnsKept;
    // full: responses read every past perception token; pooled: the same
    // pooled window the gated runner uses.
    TextContext text_context = TextContext::full;
    PoolingPolicy pooling;
    // When set, replaces the decoder's own respond/silence choice (the full
    // decoder pass still runs every frame).
    std::function<Decision(std::uint64_t frame_index)> schedule;
};

// Decoder decision at the position after [history; prompt; turns; <bos>]:
// </response> vs </silence>, ties to silence.
GateDecision per_step_decision(const ToyDecoder &decoder, std::span<const PerceptionToken> history,
                               std::span<const int> prompt, std::span<const std::vector<int>> prior_turns);

// Runs the baseline over a stream. Context overflow stops the stream and is
// recorded in RunResult::truncated.
RunResult run_per_step_baseline(const ToyDecoder &decoder, const Vocab &vocab, const SsmParams &epfe,
                                std::span<const FeatureFrame> frames, const std::string &prompt,
                                const BaselineOptions &options = {});

// ---- throughput -----------------------------------------------------------

enum class BenchMode { event_gated, per_step };

std::string to_string(BenchMode m);

struct BenchResult {
    BenchMode mode = BenchMode::event_gated;
    double fps_in = 0.0;
    std::size_t frames = 0;
    double wall_s = 0.0;
    double wall_s_per_video_second = 0.0;
    bool realtime() const { return wall_s_per_video_second < 1.0; }
};

struct BenchSystem {
    const SsmParams *epfe = nullptr;
    const GateModel *gate = nullptr;
    const ToyDecoder *decoder = nullptr;
    const Vocab *vocab = nullptr;
    std::string prompt;
};

struct BenchOptions {
    std::vector<BenchMode> modes{BenchMode::event_gated};
    std::vector<double> fps{5, 10, 30, 60, 100};
    double duration_s = 10.0;
    CognitionMode cognition = CognitionMode::blocking;
    std::uint64_t seed = 11;
    std::size_t memory_cap = 4096;
};

// For each (mode, fps) a synthetic stream of fps * duration frames is
// processed end to end and timed.
std::vector<BenchResult> bench_throughput(const BenchSystem &system, const BenchOptions &options);

} // namespace streamgate
