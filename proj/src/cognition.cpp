#include "streamgate/cognition.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "streamgate/error.hpp"

namespace streamgate {

std::string normalize_whitespace(std::string_view text) {
    std::string out;
    bool pending_space = false;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(ch);
    }
    return out;
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) words.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

// ---- Vocab ---------------------------------------------------------------------

Vocab::Vocab() {
    for (const char *s : {"<bos>", "<eos>", "</silence>", "</response>"}) add(s);
}

Vocab Vocab::from_corpus(std::span<const std::string> texts) {
    Vocab v;
    for (const auto &t : texts)
        for (const auto &w : split_words(t))
            if (!v.contains(w)) v.add(w);
    return v;
}

Vocab Vocab::load(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open vocabulary '" + path + "'");
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    Vocab v;
    if (lines.size() < 4) throw FormatError(path + ": vocabulary must start with the four special tokens");
    for (std::size_t i = 0; i < 4; ++i)
        if (lines[i] != v.tokens_[i])
            throw FormatError(path + ": line " + std::to_string(i + 1) + " should be '" + v.tokens_[i] + "'");
    for (std::size_t i = 4; i < lines.size(); ++i) {
        if (v.contains(lines[i])) throw FormatError(path + ": duplicate token '" + lines[i] + "'");
        v.add(lines[i]);
    }
    return v;
}

void Vocab::save(const std::string &path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write vocabulary '" + path + "'");
    for (const auto &t : tokens_) out << t << '\n';
}

int Vocab::add(const std::string &token) {
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
}

int Vocab::id(const std::string &token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw VocabularyError("unknown token '" + token + "'");
    return it->second;
}

const std::string &Vocab::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
        throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(tokens_.size()));
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto &w : split_words(text)) ids.push_back(id(w));
    return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        if (id >= 0 && id < 4) continue;
        if (!out.empty()) out.push_back(' ');
        out += token(id);
    }
    return out;
}

// ---- ToyDecoder ----------------------------------------------------------------

ParameterList ToyDecoder::parameters() {
    ParameterList list{&embed, &perc_proj, &perc_bias};
    for (auto &b : blocks)
        for (auto *p : b.parameters()) list.push_back(p);
    list.insert(list.end(), {&lnf_g, &lnf_b, &lm_head});
    return list;
}

ConstParameterList ToyDecoder::parameters() const {
    auto list = const_cast<ToyDecoder *>(this)->parameters();
    return {list.begin(), list.end()};
}

ToyDecoder make_decoder(const DecoderConfig &config) {
    if (config.vocab_size < 4) throw ConfigError("decoder vocabulary must hold the special tokens");
    if (config.d_model == 0 || config.heads == 0 || config.d_model % config.heads != 0)
        throw ConfigError("d_model must be a positive multiple of heads");
    Rng rng(config.seed);
    ToyDecoder m;
    m.config = config;
    const auto d = config.d_model;
    m.embed = Parameter("llm.embed", uniform_init({config.vocab_size, d}, 1, rng));
    m.perc_proj = Parameter("llm.perc_proj", uniform_init({d, config.d_perc}, config.d_perc, rng));
    m.perc_bias = Parameter("llm.perc_bias", Tensor(Shape{d}, 0.0));
    for (std::size_t i = 0; i < config.layers; ++i)
        m.blocks.push_back(make_block("llm.block" + std::to_string(i), d, config.d_ff, rng));
    m.lnf_g = Parameter("llm.ln_f.g", Tensor(Shape{d}, 1.0));
    m.lnf_b = Parameter("llm.ln_f.b", Tensor(Shape{d}, 0.0));
    m.lm_head = Parameter("llm.lm_head", uniform_init({config.vocab_size, d}, d, rng));
    return m;
}

ToyDecoder decoder_from(const DecoderConfig &config, std::span<const Parameter> tensors) {
    ToyDecoder m = make_decoder(config);
    load_into(m.parameters(), tensors);
    return m;
}

std::vector<int> context_token_ids(const CognitionContext &ctx) {
    std::vector<int> ids = ctx.prompt_tokens;
    const std::size_t n = ctx.prior_turns.size();
    const std::size_t first = n > ctx.turns_kept ? n - ctx.turns_kept : 0;
    for (std::size_t i = first; i < n; ++i) {
        ids.insert(ids.end(), ctx.prior_turns[i].begin(), ctx.prior_turns[i].end());
        ids.push_back(kEos);
    }
    ids.push_back(kBos);
    return ids;
}

template <class Decoder>
Var decoder_hidden(Tape &tape, Decoder &model, const std::vector<Var> &perception, std::span<const int> tokens,
                   std::size_t layers) {
    const auto &c = model.config;
    if (layers > model.blocks.size()) throw ConfigError("decoder has only " + std::to_string(model.blocks.size()) + " layers");
    std::size_t n = tokens.size();
    for (const auto &v : perception) n += v.value().rows();
    if (n == 0) throw InputError("decoder input is empty");
    if (n > c.max_seq_len)
        throw ContextOverflowError("sequence of " + std::to_string(n) + " positions exceeds the maximum of " +
                                   std::to_string(c.max_seq_len));
    std::vector<Var> parts;
    if (!perception.empty()) {
        Var rows = perception.size() == 1 ? perception[0] : concat_rows(perception);
        parts.push_back(add_row(matmul_nt(rows, tape.param(model.perc_proj)), tape.param(model.perc_bias)));
    }
    if (!tokens.empty()) {
        for (int t : tokens)
            if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size)
                throw VocabularyError("token id " + std::to_string(t) + " outside vocabulary of " +
                                      std::to_string(c.vocab_size));
        parts.push_back(gather_rows(tape.param(model.embed), tokens));
    }
    Var x = parts.size() == 1 ? parts[0] : concat_rows(parts);
    x = add(x, tape.constant(sinusoidal_positions(n, c.d_model)));
    for (std::size_t i = 0; i < layers; ++i) x = block_causal(bind_block(tape, model.blocks[i]), x, c.heads);
    return x;
}

template Var decoder_hidden<ToyDecoder>(Tape &, ToyDecoder &, const std::vector<Var> &, std::span<const int>,
                                        std::size_t);
template Var decoder_hidden<const ToyDecoder>(Tape &, const ToyDecoder &, const std::vector<Var> &,
                                              std::span<const int>, std::size_t);

namespace {

template <class Decoder>
Var head(Tape &tape, Decoder &model, Var hidden) {
    Var n = layer_norm(hidden, tape.param(model.lnf_g), tape.param(model.lnf_b));
    return matmul_nt(n, tape.param(model.lm_head));
}

std::vector<Var> perception_constants(Tape &tape, const CognitionContext &ctx, std::size_t d_perc) {
    std::vector<Var> out;
    for (const auto &v : ctx.pooled_tokens) {
        if (v.size() != d_perc)
            throw DimensionError("pooled perception vector has " + std::to_string(v.size()) + " entries, decoder expects " +
                                 std::to_string(d_perc));
        out.push_back(tape.constant(Tensor(Shape{1, d_perc}, v)));
    }
    return out;
}

void check_reference(const ToyDecoder &model, std::span<const int> reference) {
    if (reference.empty()) throw InputError("reference sequence is empty");
    for (int t : reference)
        if (t < 0 || static_cast<std::size_t>(t) >= model.config.vocab_size)
            throw VocabularyError("reference token id " + std::to_string(t) + " outside vocabulary of " +
                                  std::to_string(model.config.vocab_size));
}

} // namespace

template <class Decoder>
Var decoder_logits(Tape &tape, Decoder &model, const std::vector<Var> &perception, std::span<const int> tokens) {
    return head(tape, model, decoder_hidden(tape, model, perception, tokens, model.blocks.size()));
}

template Var decoder_logits<ToyDecoder>(Tape &, ToyDecoder &, const std::vector<Var> &, std::span<const int>);
template Var decoder_logits<const ToyDecoder>(Tape &, const ToyDecoder &, const std::vector<Var> &,
                                              std::span<const int>);

std::vector<int> decode_response(const ToyDecoder &model, const CognitionContext &ctx, std::size_t max_len) {
    if (ctx.empty()) throw InputError("cognition context is empty");
    if (max_len == 0) throw InputError("max_len must be at least 1");
    std::vector<int> seq = context_token_ids(ctx);
    std::vector<int> out;
    for (std::size_t step = 0; step < max_len; ++step) {
        Tape tape(false);
        auto perc = perception_constants(tape, ctx, model.config.d_perc);
        Var h = decoder_hidden(tape, model, perc, seq, model.blocks.size());
        const std::size_t n = h.value().rows();
        const Tensor &logits = head(tape, model, slice_rows(h, n - 1, n)).value();
        const auto best = std::max_element(logits.data.begin(), logits.data.end()) - logits.data.begin();
        const int next = static_cast<int>(best);
        out.push_back(next);
        if (next == kEos) break;
        seq.push_back(next);
    }
    return out;
}

std::vector<double> sequence_token_nll(const ToyDecoder &model, const CognitionContext &ctx,
                                       std::span<const int> reference) {
    check_reference(model, reference);
    std::vector<int> seq = context_token_ids(ctx);
    const std::size_t first = ctx.pooled_tokens.size() + seq.size() - 1;
    seq.insert(seq.end(), reference.begin(), reference.end() - 1);
    Tape tape(false);
    auto perc = perception_constants(tape, ctx, model.config.d_perc);
    Var h = decoder_hidden(tape, model, perc, seq, model.blocks.size());
    const Tensor &logits = head(tape, model, slice_rows(h, first, h.value().rows())).value();
    const std::size_t v = logits.cols();
    std::vector<double> nll(reference.size());
    for (std::size_t t = 0; t < reference.size(); ++t) {
        const double *row = logits.data.data() + t * v;
        const double mx = *std::max_element(row, row + v);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
        nll[t] = mx + std::log(z) - row[reference[t]];
    }
    return nll;
}

double sequence_nll(const ToyDecoder &model, const CognitionContext &ctx, std::span<const int> reference) {
    const auto nll = sequence_token_nll(model, ctx, reference);
    double s = 0.0;
    for (double v : nll) s += v;
    return s / static_cast<double>(nll.size());
}

double sequence_nll(const ToyDecoder &model, const Vocab &vocab, const CognitionContext &ctx,
                    std::string_view reference) {
    std::vector<int> ids = vocab.encode(reference);
    return sequence_nll(model, ctx, ids);
}

Var caption_loss(Tape &tape, ToyDecoder &model, const std::vector<Var> &perception, const CognitionContext &ctx,
                 std::span<const int> reference) {
    check_reference(model, reference);
    std::vector<int> seq = context_token_ids(ctx);
    const std::size_t first = perception.size() + seq.size() - 1;
    seq.insert(seq.end(), reference.begin(), reference.end() - 1);
    Var h = decoder_hidden(tape, model, perception, seq, model.blocks.size());
    Var logits = head(tape, model, slice_rows(h, first, h.value().rows()));
    return cross_entropy_rows(logits, reference);
}

} // namespace streamgate
