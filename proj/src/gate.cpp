#include "streamgate/gate.hpp"

#include <algorithm>
#include <cmath>

#include "streamgate/error.hpp"

namespace streamgate {

std::string to_string(GateArch a) {
    switch (a) {
    case GateArch::shallow: return "shallow";
    case GateArch::linear: return "linear";
    case GateArch::mlp: return "mlp";
    case GateArch::transformer: return "transformer";
    case GateArch::cross_attention: return "cross_attention";
    }
    return "?";
}

std::string to_string(InitStrategy s) {
    switch (s) {
    case InitStrategy::random: return "random";
    case InitStrategy::skip_block: return "skip";
    case InitStrategy::early_block: return "early";
    }
    return "?";
}

GateArch parse_gate_arch(const std::string &s) {
    if (s == "shallow") return GateArch::shallow;
    if (s == "linear") return GateArch::linear;
    if (s == "mlp") return GateArch::mlp;
    if (s == "transformer") return GateArch::transformer;
    if (s == "xattn" || s == "cross_attention") return GateArch::cross_attention;
    throw ConfigError("unknown gate architecture '" + s + "'");
}

InitStrategy parse_init_strategy(const std::string &s) {
    if (s == "random") return InitStrategy::random;
    if (s == "skip" || s == "skip_block" || s == "SkipBlock") return InitStrategy::skip_block;
    if (s == "early" || s == "early_block" || s == "EarlyBlock") return InitStrategy::early_block;
    throw ConfigError("unknown gate init strategy '" + s + "'");
}

ParameterList GateModel::parameters() {
    ParameterList all{&embed, &perc_proj, &perc_bias};
    for (auto &b : blocks)
        for (auto *p : b.parameters()) all.push_back(p);
    all.insert(all.end(), {&lnf_g, &lnf_b, &hidden_w, &hidden_b, &xq, &xk, &xv, &xo, &ffn_out_w, &ffn_out_b,
                           &head, &head_bias});
    ParameterList used;
    for (auto *p : all)
        if (!p->name.empty()) used.push_back(p);
    return used;
}

ConstParameterList GateModel::parameters() const {
    auto list = const_cast<GateModel *>(this)->parameters();
    return {list.begin(), list.end()};
}

std::vector<std::size_t> gate_source_layers(std::size_t decoder_layers, std::size_t k, InitStrategy strategy) {
    if (k == 0) throw ConfigError("gate needs at least one layer");
    if (k > decoder_layers)
        throw ConfigError("gate depth " + std::to_string(k) + " exceeds the decoder's " +
                          std::to_string(decoder_layers) + " layers");
    std::vector<std::size_t> layers;
    if (strategy == InitStrategy::random) return layers;
    const std::size_t stride = strategy == InitStrategy::skip_block ? (decoder_layers + k - 1) / k : 1;
    for (std::size_t i = 0; i < k; ++i) layers.push_back(std::min(i * stride, decoder_layers - 1));
    return layers;
}

namespace {

std::string block_prefix(std::size_t i) { return "gate.block" + std::to_string(i); }

GateModel base_model(GateArch arch, const DecoderConfig &dc, std::size_t d_token) {
    GateModel g;
    g.config.arch = arch;
    g.vocab_size = dc.vocab_size;
    g.d_model = dc.d_model;
    g.d_token = d_token;
    g.heads = dc.heads;
    g.d_ff = dc.d_ff;
    return g;
}

void add_prompt_path(GateModel &g, Rng &rng) {
    g.embed = Parameter("gate.embed", uniform_init({g.vocab_size, g.d_model}, 1, rng));
    g.perc_proj = Parameter("gate.perc_proj", uniform_init({g.d_model, g.d_token}, g.d_token, rng));
    g.perc_bias = Parameter("gate.perc_bias", Tensor(Shape{g.d_model}, 0.0));
}

void add_final_norm(GateModel &g) {
    g.lnf_g = Parameter("gate.ln_f.g", Tensor(Shape{g.d_model}, 1.0));
    g.lnf_b = Parameter("gate.ln_f.b", Tensor(Shape{g.d_model}, 0.0));
}

GateModel shallow_random(const DecoderConfig &dc, std::size_t k, std::uint64_t seed) {
    GateModel g = base_model(GateArch::shallow, dc, dc.d_perc);
    g.config.layers = k;
    g.config.init = InitStrategy::random;
    g.config.seed = seed;
    Rng rng(seed);
    add_prompt_path(g, rng);
    for (std::size_t i = 0; i < k; ++i) g.blocks.push_back(make_block(block_prefix(i), g.d_model, g.d_ff, rng));
    add_final_norm(g);
    g.head = Parameter("gate.head", uniform_init({2, g.d_model}, g.d_model, rng));
    return g;
}

void copy_value(Parameter &dst, const Parameter &src) {
    dst.value.shape = src.value.shape;
    dst.value.data = src.value.data;
}

template <class Gate>
Var token_rows(Tape &tape, Gate &g, Var tokens, std::size_t position) {
    Var x = add_row(matmul_nt(tokens, tape.param(g.perc_proj)), tape.param(g.perc_bias));
    if (position == static_cast<std::size_t>(-1)) return x;
    Tensor pos = sinusoidal_positions(1, g.d_model, position);
    pos.shape = Shape{g.d_model};
    return add_row(x, tape.constant(std::move(pos)));
}

template <class Gate>
Var prompt_rows(Tape &tape, Gate &g, std::span<const int> prompt) {
    for (int t : prompt)
        if (t < 0 || static_cast<std::size_t>(t) >= g.vocab_size)
            throw VocabularyError("prompt token id " + std::to_string(t) + " outside vocabulary of " +
                                  std::to_string(g.vocab_size));
    Var x = gather_rows(tape.param(g.embed), prompt);
    return add(x, tape.constant(sinusoidal_positions(prompt.size(), g.d_model)));
}

template <class Gate>
Var apply_head(Tape &tape, Gate &g, Var x) {
    Var logits = matmul_nt(x, tape.param(g.head));
    if (!g.head_bias.name.empty()) logits = add_row(logits, tape.param(g.head_bias));
    return logits;
}

template <class Gate>
Var transformer_logits(Tape &tape, Gate &g, std::span<const int> prompt, Var tokens) {
    Var xp = prompt_rows(tape, g, prompt);
    Var xt = token_rows(tape, g, tokens, prompt.size());
    for (auto &b : g.blocks) {
        BoundBlock bb = bind_block(tape, b);
        AttentionPrefix pre;
        Var next = block_causal(bb, xp, g.heads, &pre);
        xt = block_prefixed(bb, xt, pre, g.heads);
        xp = next;
    }
    return apply_head(tape, g, layer_norm(xt, tape.param(g.lnf_g), tape.param(g.lnf_b)));
}

template <class Gate>
Var xattn_logits(Tape &tape, Gate &g, std::span<const int> prompt, Var tokens) {
    Var queries = prompt_rows(tape, g, prompt);
    Var memory = token_rows(tape, g, tokens, static_cast<std::size_t>(-1));
    Var wq = tape.param(g.xq), wk = tape.param(g.xk), wv = tape.param(g.xv), wo = tape.param(g.xo);
    Var w1 = tape.param(g.hidden_w), b1 = tape.param(g.hidden_b);
    Var w2 = tape.param(g.ffn_out_w), b2 = tape.param(g.ffn_out_b);
    Var ln_g = tape.param(g.lnf_g), ln_b = tape.param(g.lnf_b);
    const std::size_t n = memory.value().rows();
    const double inv_p = 1.0 / static_cast<double>(prompt.size());
    std::vector<Var> pooled;
    pooled.reserve(n);
    for (std::size_t f = 0; f < n; ++f) {
        Var mem = slice_rows(memory, f, f + 1);
        Var h = add(queries, cross_attention(queries, mem, wq, wk, wv, wo, g.heads));
        Var ff = add_row(matmul_nt(gelu(add_row(matmul_nt(layer_norm(h, ln_g, ln_b), w1), b1)), w2), b2);
        h = add(h, ff);
        Tensor ones(Shape{1, prompt.size()}, inv_p);
        pooled.push_back(matmul(tape.constant(std::move(ones)), h));
    }
    Var x = n == 1 ? pooled[0] : concat_rows(pooled);
    return apply_head(tape, g, x);
}

} // namespace

GateModel gate_init(const ToyDecoder &decoder, std::size_t k, InitStrategy strategy, std::uint64_t seed) {
    const auto &dc = decoder.config;
    auto layers = gate_source_layers(dc.layers, k, strategy);
    GateModel g = shallow_random(dc, k, seed);
    g.config.init = strategy;
    if (strategy == InitStrategy::random) return g;
    g.source_layers = layers;
    copy_value(g.embed, decoder.embed);
    copy_value(g.perc_proj, decoder.perc_proj);
    copy_value(g.perc_bias, decoder.perc_bias);
    for (std::size_t i = 0; i < k; ++i) g.blocks[i].copy_values_from(decoder.blocks[layers[i]]);
    copy_value(g.lnf_g, decoder.lnf_g);
    copy_value(g.lnf_b, decoder.lnf_b);
    const std::size_t d = dc.d_model;
    Tensor head(Shape{2, d});
    for (std::size_t j = 0; j < d; ++j) {
        head.at(0, j) = decoder.lm_head.value.at(kSilence, j);
        head.at(1, j) = decoder.lm_head.value.at(kResponse, j);
    }
    g.head = Parameter("gate.head", std::move(head));
    return g;
}

GateModel gate_alternative(GateArch arch, const DecoderConfig &dc, std::size_t d_token, std::uint64_t seed,
                           std::size_t mlp_hidden) {
    GateModel g = base_model(arch, dc, d_token);
    g.config.seed = seed;
    g.config.mlp_hidden = mlp_hidden;
    g.config.init = InitStrategy::random;
    Rng rng(seed);
    std::size_t width = 0;
    switch (arch) {
    case GateArch::shallow:
        throw ConfigError("the shallow gate is built with gate_init");
    case GateArch::linear:
        g.config.layers = 0;
        width = d_token;
        break;
    case GateArch::mlp:
        g.config.layers = 0;
        if (mlp_hidden == 0) throw ConfigError("mlp gate needs a hidden width");
        g.hidden_w = Parameter("gate.hidden.w", uniform_init({mlp_hidden, d_token}, d_token, rng));
        g.hidden_b = Parameter("gate.hidden.b", Tensor(Shape{mlp_hidden}, 0.0));
        width = mlp_hidden;
        break;
    case GateArch::transformer:
        g.config.layers = 1;
        add_prompt_path(g, rng);
        g.blocks.push_back(make_block(block_prefix(0), g.d_model, g.d_ff, rng));
        add_final_norm(g);
        width = g.d_model;
        break;
    case GateArch::cross_attention: {
        g.config.layers = 1;
        add_prompt_path(g, rng);
        const std::size_t d = g.d_model;
        g.xq = Parameter("gate.xattn.wq", uniform_init({d, d}, d, rng));
        g.xk = Parameter("gate.xattn.wk", uniform_init({d, d}, d, rng));
        g.xv = Parameter("gate.xattn.wv", uniform_init({d, d}, d, rng));
        g.xo = Parameter("gate.xattn.wo", uniform_init({d, d}, d, rng));
        add_final_norm(g);
        g.hidden_w = Parameter("gate.hidden.w", uniform_init({g.d_ff, d}, d, rng));
        g.hidden_b = Parameter("gate.hidden.b", Tensor(Shape{g.d_ff}, 0.0));
        g.ffn_out_w = Parameter("gate.ffn_out.w", uniform_init({d, g.d_ff}, g.d_ff, rng));
        g.ffn_out_b = Parameter("gate.ffn_out.b", Tensor(Shape{d}, 0.0));
        width = d;
        break;
    }
    }
    g.head = Parameter("gate.head", uniform_init({2, width}, width, rng));
    g.head_bias = Parameter("gate.head_bias", Tensor(Shape{2}, 0.0));
    return g;
}

GateModel make_gate(const GateConfig &config, const ToyDecoder &decoder) {
    GateModel g = config.arch == GateArch::shallow
                      ? gate_init(decoder, config.layers, config.init, config.seed)
                      : gate_alternative(config.arch, decoder.config, decoder.config.d_perc, config.seed,
                                         config.mlp_hidden);
    return g;
}

GateModel gate_from(const GateConfig &config, const DecoderConfig &decoder, std::size_t d_token,
                    std::span<const Parameter> tensors) {
    GateModel g;
    if (config.arch == GateArch::shallow) {
        g = shallow_random(decoder, config.layers, config.seed);
        g.config.init = config.init;
        g.source_layers = gate_source_layers(decoder.layers, config.layers, config.init);
    } else {
        g = gate_alternative(config.arch, decoder, d_token, config.seed, config.mlp_hidden);
    }
    load_into(g.parameters(), tensors);
    return g;
}

template <class Gate>
Var gate_logits(Tape &tape, Gate &gate, std::span<const int> prompt, Var tokens) {
    if (prompt.empty()) throw InputError("gate prompt is empty");
    const Tensor &t = tokens.value();
    if (t.rank() != 2 || t.cols() != gate.d_token)
        throw DimensionError("gate expects tokens of width " + std::to_string(gate.d_token) + ", got " +
                             shape_string(t.shape));
    switch (gate.config.arch) {
    case GateArch::shallow:
    case GateArch::transformer:
        return transformer_logits(tape, gate, prompt, tokens);
    case GateArch::linear:
        return apply_head(tape, gate, tokens);
    case GateArch::mlp:
        return apply_head(tape, gate,
                          relu(add_row(matmul_nt(tokens, tape.param(gate.hidden_w)), tape.param(gate.hidden_b))));
    case GateArch::cross_attention:
        return xattn_logits(tape, gate, prompt, tokens);
    }
    throw ConfigError("unknown gate architecture");
}

template Var gate_logits<GateModel>(Tape &, GateModel &, std::span<const int>, Var);
template Var gate_logits<const GateModel>(Tape &, const GateModel &, std::span<const int>, Var);

Var gate_prompt_hidden(Tape &tape, const GateModel &gate, std::span<const int> prompt) {
    if (gate.blocks.empty() || !gate.xq.name.empty()) throw ConfigError("gate has no causal prompt path");
    if (prompt.empty()) throw InputError("gate prompt is empty");
    Var x = prompt_rows(tape, gate, prompt);
    for (const auto &b : gate.blocks) x = block_causal(bind_block(tape, b), x, gate.heads);
    return x;
}

Decision decide(double silence_logit, double respond_logit) {
    return respond_logit > silence_logit ? Decision::respond : Decision::silence;
}

namespace {

GateDecision to_decision(std::uint64_t frame, const double *row) {
    if (!std::isfinite(row[0]) || !std::isfinite(row[1]))
        throw NumericalError("gate produced non-finite logits at frame " + std::to_string(frame));
    GateDecision d;
    d.frame_index = frame;
    d.logits = {row[0], row[1]};
    d.decision = decide(row[0], row[1]);
    return d;
}

} // namespace

GateDecision gate_step(const GateModel &gate, std::span<const int> prompt, const PerceptionToken &token) {
    Tape tape(false);
    Var x = tape.constant(Tensor(Shape{1, token.vector.size()}, token.vector));
    const Tensor &logits = gate_logits(tape, gate, prompt, x).value();
    return to_decision(token.frame_index, logits.data.data());
}

std::vector<GateDecision> gate_run(const GateModel &gate, std::span<const int> prompt,
                                   std::span<const PerceptionToken> tokens) {
    constexpr std::size_t kChunk = 256;
    std::vector<GateDecision> out;
    out.reserve(tokens.size());
    for (std::size_t begin = 0; begin < tokens.size(); begin += kChunk) {
        const std::size_t end = std::min(tokens.size(), begin + kChunk);
        Tensor x(Shape{end - begin, gate.d_token});
        for (std::size_t i = begin; i < end; ++i) {
            if (tokens[i].vector.size() != gate.d_token)
                throw DimensionError("perception token at frame " + std::to_string(tokens[i].frame_index) +
                                     " has width " + std::to_string(tokens[i].vector.size()));
            std::copy(tokens[i].vector.begin(), tokens[i].vector.end(), x.data.begin() + (i - begin) * gate.d_token);
        }
        Tape tape(false);
        const Tensor &logits = gate_logits(tape, gate, prompt, tape.constant(std::move(x))).value();
        for (std::size_t i = begin; i < end; ++i)
            out.push_back(to_decision(tokens[i].frame_index, logits.data.data() + 2 * (i - begin)));
    }
    return out;
}

} // namespace streamgate
