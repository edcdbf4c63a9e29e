#pragma once

// Toy autoregressive decoder standing in for the LLM, plus the backend
// interface the streaming pipeline talks to.
//
// Input layout for one cognition call:
//   [pooled perception rows] [prompt] [turn_1 <eos> ... turn_m <eos>] <bos> response <eos>
// Perception vectors enter through a learned projection and are prepended.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "streamgate/numerics.hpp"
#include "streamgate/transformer.hpp"

namespace streamgate {

inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kSilence = 2;
inline constexpr int kResponse = 3;

std::string normalize_whitespace(std::string_view text);
std::vector<std::string> split_words(std::string_view text);

// Word-level vocabulary; specials occupy ids 0-3.
class Vocab {
  public:
    Vocab();

    // Specials followed by corpus words in order of first appearance.
    static Vocab from_corpus(std::span<const std::string> texts);
    static Vocab load(const std::string &path);
    void save(const std::string &path) const;

    int add(const std::string &token);
    bool contains(const std::string &token) const { return index_.count(token) != 0; }
    // Throws VocabularyError naming the token.
    int id(const std::string &token) const;
    const std::string &token(int id) const;
    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string> &tokens() const noexcept { return tokens_; }

    std::vector<int> encode(std::string_view text) const;
    // Joins non-special tokens with single spaces.
    std::string decode(std::span<const int> ids) const;

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

struct DecoderConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    std::size_t layers = 6;
    std::size_t heads = 2;
    std::size_t d_ff = 256;
    std::size_t d_perc = 64;
    std::size_t max_seq_len = 4096;
    std::uint64_t seed = 2;
};

struct ToyDecoder {
    DecoderConfig config;
    Parameter embed;     // V x d_model
    Parameter perc_proj; // d_model x d_perc
    Parameter perc_bias; // d_model
    std::vector<BlockParams> blocks;
    Parameter lnf_g, lnf_b;
    Parameter lm_head;   // V x d_model

    ParameterList parameters();
    ConstParameterList parameters() const;
};

ToyDecoder make_decoder(const DecoderConfig &config);
// Rebuilds a decoder from checkpoint tensors named "llm.*".
ToyDecoder decoder_from(const DecoderConfig &config, std::span<const Parameter> tensors);

// Number of context turns kept in front of a new response.
inline constexpr std::size_t kDefaultTurnsKept = 4;

struct CognitionContext {
    std::vector<int> prompt_tokens;
    std::vector<std::vector<double>> pooled_tokens;
    std::vector<std::vector<int>> prior_turns;
    std::size_t turns_kept = kDefaultTurnsKept;

    bool empty() const { return prompt_tokens.empty() && pooled_tokens.empty() && prior_turns.empty(); }
};

// prompt, the last `turns_kept` turns each followed by <eos>, then <bos>.
std::vector<int> context_token_ids(const CognitionContext &ctx);

// Residual stream after the first `layers` blocks for rows
// [perception; embed(tokens)]. Perception may be empty (rows == 0).
template <class Decoder>
Var decoder_hidden(Tape &tape, Decoder &model, const std::vector<Var> &perception, std::span<const int> tokens,
                   std::size_t layers);

template <class Decoder>
Var decoder_logits(Tape &tape, Decoder &model, const std::vector<Var> &perception, std::span<const int> tokens);

// Greedy decoding until <eos> (included in the result) or max_len tokens.
// Throws ContextOverflowError if the sequence would exceed max_seq_len.
std::vector<int> decode_response(const ToyDecoder &model, const CognitionContext &ctx, std::size_t max_len);

// Per-token NLL of `reference` under teacher forcing (entry t is the NLL of
// reference[t] given everything before it).
std::vector<double> sequence_token_nll(const ToyDecoder &model, const CognitionContext &ctx,
                                       std::span<const int> reference);
// Mean of sequence_token_nll.
double sequence_nll(const ToyDecoder &model, const CognitionContext &ctx, std::span<const int> reference);
// Encodes `reference` first; unknown words raise VocabularyError.
double sequence_nll(const ToyDecoder &model, const Vocab &vocab, const CognitionContext &ctx,
                    std::string_view reference);

// Differentiable caption loss (summed NLL over reference tokens) for training.
Var caption_loss(Tape &tape, ToyDecoder &model, const std::vector<Var> &perception,
                 const CognitionContext &ctx, std::span<const int> reference);

// Any object answering these two calls can serve as the cognition stage.
class CognitionBackend {
  public:
    virtual ~CognitionBackend() = default;
    virtual std::vector<int> decode_response(const CognitionContext &ctx, std::size_t max_len) = 0;
    virtual double sequence_nll(const CognitionContext &ctx, std::span<const int> reference) = 0;
    virtual const Vocab &vocab() const = 0;
};

class ToyDecoderBackend : public CognitionBackend {
  public:
    ToyDecoderBackend(const ToyDecoder &model, const Vocab &vocab) : model_(model), vocab_(vocab) {}
    std::vector<int> decode_response(const CognitionContext &ctx, std::size_t max_len) override {
        return streamgate::decode_response(model_, ctx, max_len);
    }
    double sequence_nll(const CognitionContext &ctx, std::span<const int> reference) override {
        return streamgate::sequence_nll(model_, ctx, reference);
    }
    const Vocab &vocab() const override { return vocab_; }
    const ToyDecoder &model() const { return model_; }

  private:
    const ToyDecoder &model_;
    const Vocab &vocab_;
};

} // namespace streamgate
