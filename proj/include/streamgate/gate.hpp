#pragma once

// Cognition gate: reads the prompt plus the current perception token and
// decides, once per frame, whether the cognition backend should respond.
//
// The default gate is a copy of the decoder's shallow layers ending in a
// two-row head taken from the lm_head rows of </silence> and </response>.
// The alternatives (linear, mlp, transformer, cross_attention) share the same
// call signature for ablations.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "streamgate/cognition.hpp"
#include "streamgate/epfe.hpp"

namespace streamgate {

enum class GateArch { shallow, linear, mlp, transformer, cross_attention };
enum class InitStrategy { random, skip_block, early_block };
enum class Decision { silence, respond };

std::string to_string(GateArch a);
std::string to_string(InitStrategy s);
// Accepts the CLI spellings too ("xattn", "skip", "early").
GateArch parse_gate_arch(const std::string &s);
InitStrategy parse_init_strategy(const std::string &s);

struct GateConfig {
    GateArch arch = GateArch::shallow;
    std::size_t layers = 4;
    InitStrategy init = InitStrategy::early_block;
    std::uint64_t seed = 3;
    std::size_t mlp_hidden = 128;
};

struct GateModel {
    GateConfig config;
    std::size_t vocab_size = 0, d_model = 0, d_token = 0, heads = 0, d_ff = 0;
    // Decoder layers the blocks were copied from (empty when not copied).
    std::vector<std::size_t> source_layers;

    // Unused parameters keep an empty name and are not reported.
    Parameter embed, perc_proj, perc_bias;
    std::vector<BlockParams> blocks;
    Parameter lnf_g, lnf_b;
    Parameter hidden_w, hidden_b; // mlp hidden layer; first FFN layer of cross_attention
    Parameter xq, xk, xv, xo;     // cross_attention
    Parameter ffn_out_w, ffn_out_b;
    Parameter head, head_bias;    // 2 x width; row 0 silence, row 1 respond

    ParameterList parameters();
    ConstParameterList parameters() const;
};

// Decoder layers used by a strategy: EarlyBlock 0..k-1, SkipBlock every
// ceil(L/k)-th layer. Throws ConfigError when k is 0 or exceeds L.
std::vector<std::size_t> gate_source_layers(std::size_t decoder_layers, std::size_t k, InitStrategy strategy);

// Shallow-transfer gate. Non-random strategies copy the embedding, the
// perception projection, the selected blocks, the final norm and the two
// head rows.
GateModel gate_init(const ToyDecoder &decoder, std::size_t k, InitStrategy strategy, std::uint64_t seed = 3);

// Fresh alternative architecture sized to match the decoder.
GateModel gate_alternative(GateArch arch, const DecoderConfig &decoder, std::size_t d_token,
                           std::uint64_t seed = 3, std::size_t mlp_hidden = 128);

// Dispatches on config.arch.
GateModel make_gate(const GateConfig &config, const ToyDecoder &decoder);

// Rebuilds a gate with the layout `config` implies from checkpoint tensors
// named "gate.*".
GateModel gate_from(const GateConfig &config, const DecoderConfig &decoder, std::size_t d_token,
                    std::span<const Parameter> tensors);

// Logits (n x 2) for n perception tokens given as rows of `tokens`, each
// scored independently against the same prompt.
template <class Gate>
Var gate_logits(Tape &tape, Gate &gate, std::span<const int> prompt, Var tokens);

// Shallow / transformer gates: residual stream at the prompt rows after all
// gate blocks.
Var gate_prompt_hidden(Tape &tape, const GateModel &gate, std::span<const int> prompt);

struct GateDecision {
    std::uint64_t frame_index = 0;
    Decision decision = Decision::silence;
    std::array<double, 2> logits{}; // {silence, respond}
};

// respond only when its logit is strictly larger.
Decision decide(double silence_logit, double respond_logit);

// Throws InputError on an empty prompt and NumericalError (with the frame
// index) on non-finite logits.
GateDecision gate_step(const GateModel &gate, std::span<const int> prompt, const PerceptionToken &token);

// Decisions for a whole token sequence in one batched pass; equal to calling
// gate_step per token.
std::vector<GateDecision> gate_run(const GateModel &gate, std::span<const int> prompt,
                                   std::span<const PerceptionToken> tokens);

} // namespace streamgate
