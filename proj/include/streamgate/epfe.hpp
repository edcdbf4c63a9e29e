#pragma once

// Event-preserving feature extractor: a state-space recurrence that folds
// each frame into a persistent hidden state and emits one perception token
// per frame at a cost independent of how many frames came before.
//
//   lti:        h' = A h + B x,                         y = C h'
//   selective:  dt = softplus(W_dt x + b_dt)
//               a_bar = exp(-dt * softplus(a))          (diagonal, in (0,1))
//               h' = a_bar * h + (1 - a_bar) * s_B(x) * (B x)
//               y = C (s_C(x) * h')
// with x = input_proj * features and s_B, s_C sigmoid input gates. The
// selective update is the zero-order-hold discretization of
// dh/dt = -softplus(a) h + softplus(a) s_B(x) B x.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "streamgate/features.hpp"
#include "streamgate/numerics.hpp"

namespace streamgate {

enum class SsmMode { lti, selective };

std::string to_string(SsmMode m);
SsmMode parse_ssm_mode(const std::string &s);

struct EpfeConfig {
    SsmMode mode = SsmMode::selective;
    std::size_t d_spat = kDefaultSpatialDim;
    std::size_t d_in = 64;
    std::size_t d_state = 64;
    std::size_t d_out = 64;
    std::uint64_t seed = 1;
};

struct SsmParams {
    EpfeConfig config;
    Parameter input_proj; // d_in x d_spat
    Parameter A;          // lti: d_state x d_state; selective: d_state raw rates
    Parameter B;          // d_state x d_in
    Parameter C;          // d_out x d_state
    // selective only
    Parameter dt_proj, dt_bias;
    Parameter b_proj, b_bias;
    Parameter c_proj, c_bias;

    ParameterList parameters();
    ConstParameterList parameters() const;
};

// Seeded initialization. LTI: A = 0.99 * orthogonal (spectral radius 0.99).
// Selective: decays exp(-softplus(a_i)) spread over [0.05, 0.95] at unit step.
SsmParams make_ssm_params(const EpfeConfig &config);

// Rebuilds parameters from checkpoint tensors named "epfe.*".
SsmParams ssm_params_from(const EpfeConfig &config, std::span<const Parameter> tensors);

struct SsmState {
    std::vector<double> h;
    std::uint64_t frames_seen = 0;
};

struct PerceptionToken {
    std::uint64_t frame_index = 0;
    std::vector<double> vector;

    bool operator==(const PerceptionToken &) const = default;
};

SsmState initial_state(const SsmParams &params);
SsmState epfe_reset(const SsmState &state);

// One recurrence step; throws NumericalError carrying the frame index when
// the new state is not finite.
std::pair<PerceptionToken, SsmState> epfe_step(const SsmParams &params, const SsmState &state,
                                               const FeatureFrame &frame);

// Runs a whole stream from the given state; one token per frame.
std::vector<PerceptionToken> epfe_run(const SsmParams &params, std::span<const FeatureFrame> frames,
                                      SsmState *state = nullptr);

// Differentiable version of the recurrence. Returns one (1 x d_out) token per
// frame. Parameters receive gradient when `params` is non-const and the tape
// records gradients.
std::vector<Var> epfe_forward(Tape &tape, SsmParams &params, std::span<const FeatureFrame> frames);
std::vector<Var> epfe_forward(Tape &tape, const SsmParams &params, std::span<const FeatureFrame> frames);

// Cosine similarity of every token pair. Throws NumericalError naming the
// frame of any zero-norm token.
Tensor token_similarity_matrix(std::span<const PerceptionToken> tokens);

// Floating point operations of one epfe_step (a function of dimensions only).
std::uint64_t epfe_step_flops(const EpfeConfig &config);

} // namespace streamgate
