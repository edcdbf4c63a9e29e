#pragma once

// Two-stage training. Stage 1 fits the perception extractor and the decoder
// jointly on captions at event anchors; stage 2 fits only the gate on
// per-frame silence/respond labels with a class-weighted cross-entropy.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "streamgate/cognition.hpp"
#include "streamgate/datagen.hpp"
#include "streamgate/epfe.hpp"
#include "streamgate/gate.hpp"
#include "streamgate/memory.hpp"

namespace streamgate {

inline constexpr double kStage1Lr = 2e-3;
inline constexpr double kStage2Lr = 2e-4;

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
    int stage = 1;
    std::size_t epochs = 1;
    // Unset means the stage default.
    std::optional<double> lr;
    bool cosine = true;
    // Silence weight; unset means recommend_ws on the training set.
    std::optional<double> w_s;
    std::uint64_t seed = 0;
    std::size_t batch = 1;
    double clip_norm = 1.0;
    OptimizerKind optimizer = OptimizerKind::adam;
    PoolingPolicy pooling;
    // CSV (step,loss) written when non-empty.
    std::string log_path;

    double learning_rate() const { return lr ? *lr : (stage == 1 ? kStage1Lr : kStage2Lr); }
};

// Throws ConfigError on out-of-range values (W_s must lie in (0, 1)).
void validate(const TrainConfig &cfg);

// Flat "key = value" file; '#' starts a comment. Keys: stage, epochs, lr,
// cosine, w_s (number or "auto"), seed, batch, clip_norm, optimizer,
// pool_strategy, pool_k, log.
TrainConfig parse_train_config(const std::string &text);
TrainConfig load_train_config(const std::string &path);

struct TrainReport {
    std::vector<double> epoch_loss; // mean per epoch
    std::vector<double> step_loss;
    std::uint64_t checksum = 0;     // over the parameters the stage trains
    double wall_s = 0.0;
    std::size_t steps = 0;
    double w_s = 0.0;               // stage 2 only
};

// clamp(10 / ratio, 0.01, 0.5); ratios below 1 give 0.5 and set *warning.
double recommend_ws(const ImbalanceStats &stats, bool *warning = nullptr);

// Stage 1. For each event, the extractor runs over the frames up to the
// anchor, the window since the previous anchor is pooled, and the caption
// (followed by <eos>) is scored under teacher forcing with the previous
// captions as prior turns. Loss is the mean per-token NLL. On a non-finite
// loss the parameters are restored to the last good step and TrainingError
// is thrown.
TrainReport train_stage1(SsmParams &epfe, ToyDecoder &decoder, const Vocab &vocab,
                         std::span<const StreamSample> data, const TrainConfig &cfg);

// Mean per-token caption NLL of the stage-1 objective without updating.
double stage1_loss(const SsmParams &epfe, const ToyDecoder &decoder, const Vocab &vocab,
                   std::span<const StreamSample> data, const PoolingPolicy &pooling);

// Frozen perception tokens and labels for stage 2.
struct GateTrainingSet {
    std::vector<int> prompt;
    std::vector<Tensor> tokens; // n_frames x d_out per stream
    std::vector<std::vector<int>> labels;
    ImbalanceStats stats;
};

GateTrainingSet make_gate_training_set(const SsmParams &epfe, const Vocab &vocab,
                                       std::span<const StreamSample> data);

// Sum over rows of w[label] * CE divided by the sum of the weights used,
// with w = {w_s, 1 - w_s}.
Var weighted_gate_loss(Var logits, std::span<const int> labels, double w_s);

// Stage 2: only gate parameters change.
TrainReport train_stage2(GateModel &gate, const GateTrainingSet &set, const TrainConfig &cfg);
TrainReport train_stage2(GateModel &gate, const SsmParams &epfe, const Vocab &vocab,
                         std::span<const StreamSample> data, const TrainConfig &cfg);

} // namespace streamgate
