#include "streamgate/transformer.hpp"

#include <cmath>

namespace streamgate {

ParameterList BlockParams::parameters() {
    return {&ln1_g, &ln1_b, &wq, &wk, &wv, &wo, &ln2_g, &ln2_b, &w1, &b1, &w2, &b2};
}

ConstParameterList BlockParams::parameters() const {
    auto list = const_cast<BlockParams *>(this)->parameters();
    return {list.begin(), list.end()};
}

void BlockParams::copy_values_from(const BlockParams &other) {
    auto dst = parameters();
    auto src = other.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i]->value.shape = src[i]->value.shape;
        dst[i]->value.data = src[i]->value.data;
        dst[i]->value.grad.reset();
    }
}

BlockParams make_block(const std::string &prefix, std::size_t d_model, std::size_t d_ff, Rng &rng) {
    BlockParams b;
    b.ln1_g = Parameter(prefix + ".ln1.g", Tensor(Shape{d_model}, 1.0));
    b.ln1_b = Parameter(prefix + ".ln1.b", Tensor(Shape{d_model}, 0.0));
    b.wq = Parameter(prefix + ".attn.wq", uniform_init({d_model, d_model}, d_model, rng));
    b.wk = Parameter(prefix + ".attn.wk", uniform_init({d_model, d_model}, d_model, rng));
    b.wv = Parameter(prefix + ".attn.wv", uniform_init({d_model, d_model}, d_model, rng));
    b.wo = Parameter(prefix + ".attn.wo", uniform_init({d_model, d_model}, d_model, rng));
    b.ln2_g = Parameter(prefix + ".ln2.g", Tensor(Shape{d_model}, 1.0));
    b.ln2_b = Parameter(prefix + ".ln2.b", Tensor(Shape{d_model}, 0.0));
    b.w1 = Parameter(prefix + ".ffn.w1", uniform_init({d_ff, d_model}, d_model, rng));
    b.b1 = Parameter(prefix + ".ffn.b1", Tensor(Shape{d_ff}, 0.0));
    b.w2 = Parameter(prefix + ".ffn.w2", uniform_init({d_model, d_ff}, d_ff, rng));
    b.b2 = Parameter(prefix + ".ffn.b2", Tensor(Shape{d_model}, 0.0));
    return b;
}

namespace {

Var feed_forward(const BoundBlock &b, Var x) {
    Var n = layer_norm(x, b.ln2_g, b.ln2_b);
    Var hidden = gelu(add_row(matmul_nt(n, b.w1), b.b1));
    return add(x, add_row(matmul_nt(hidden, b.w2), b.b2));
}

std::size_t head_dim(Var x, std::size_t heads) {
    const std::size_t d = x.value().cols();
    if (heads == 0 || d % heads != 0) throw DimensionError("d_model " + std::to_string(d) + " not divisible by heads");
    return d / heads;
}

} // namespace

Var block_causal(const BoundBlock &b, Var x, std::size_t heads, AttentionPrefix *prefix_out) {
    const std::size_t dh = head_dim(x, heads);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    Var n = layer_norm(x, b.ln1_g, b.ln1_b);
    Var q = matmul_nt(n, b.wq);
    Var k = matmul_nt(n, b.wk);
    Var v = matmul_nt(n, b.wv);
    if (prefix_out) *prefix_out = AttentionPrefix{k, v};
    std::vector<Var> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = slice_cols(v, h * dh, (h + 1) * dh);
        Var probs = causal_softmax(scale(matmul_nt(qh, kh), inv));
        outs.push_back(matmul(probs, vh));
    }
    Var attn = heads == 1 ? outs[0] : concat_cols(outs);
    return feed_forward(b, add(x, matmul_nt(attn, b.wo)));
}

Var block_prefixed(const BoundBlock &b, Var x, const AttentionPrefix &prefix, std::size_t heads) {
    const std::size_t dh = head_dim(x, heads);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t p = prefix.k.value().rows();
    Var n = layer_norm(x, b.ln1_g, b.ln1_b);
    Var q = matmul_nt(n, b.wq);
    Var k = matmul_nt(n, b.wk);
    Var v = matmul_nt(n, b.wv);
    std::vector<Var> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = slice_cols(v, h * dh, (h + 1) * dh);
        Var self_score = rowdot(qh, kh);
        if (p == 0) {
            outs.push_back(vh);
            continue;
        }
        Var kp = slice_cols(prefix.k, h * dh, (h + 1) * dh);
        Var vp = slice_cols(prefix.v, h * dh, (h + 1) * dh);
        Var scores = scale(concat_cols({matmul_nt(qh, kp), self_score}), inv);
        Var probs = softmax_rows(scores);
        Var from_prefix = matmul(slice_cols(probs, 0, p), vp);
        Var from_self = mul_col(vh, slice_cols(probs, p, p + 1));
        outs.push_back(add(from_prefix, from_self));
    }
    Var attn = heads == 1 ? outs[0] : concat_cols(outs);
    return feed_forward(b, add(x, matmul_nt(attn, b.wo)));
}

Var cross_attention(Var queries, Var memory, Var wq, Var wk, Var wv, Var wo, std::size_t heads) {
    const std::size_t dh = head_dim(queries, heads);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    Var q = matmul_nt(queries, wq);
    Var k = matmul_nt(memory, wk);
    Var v = matmul_nt(memory, wv);
    std::vector<Var> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = slice_cols(v, h * dh, (h + 1) * dh);
        outs.push_back(matmul(softmax_rows(scale(matmul_nt(qh, kh), inv)), vh));
    }
    Var attn = heads == 1 ? outs[0] : concat_cols(outs);
    return matmul_nt(attn, wo);
}

Tensor sinusoidal_positions(std::size_t rows, std::size_t d_model, std::size_t start) {
    Tensor t(Shape{rows, d_model});
    std::vector<double> freq;
    for (std::size_t i = 0; i < d_model; i += 2)
        freq.push_back(std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model)));
    for (std::size_t r = 0; r < rows; ++r) {
        const double pos = static_cast<double>(start + r);
        for (std::size_t i = 0; i < d_model; i += 2) {
            const double f = freq[i / 2];
            t.at(r, i) = std::sin(pos * f);
            if (i + 1 < d_model) t.at(r, i + 1) = std::cos(pos * f);
        }
    }
    return t;
}

} // namespace streamgate
