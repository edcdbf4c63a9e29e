#pragma once

// Pre-norm transformer block shared by the toy decoder and the gates.

#include <string>
#include <vector>

#include "streamgate/numerics.hpp"

namespace streamgate {

struct BlockParams {
    Parameter ln1_g, ln1_b;
    Parameter wq, wk, wv, wo; // d_model x d_model, applied as x * W^T
    Parameter ln2_g, ln2_b;
    Parameter w1, b1;         // d_ff x d_model, d_ff
    Parameter w2, b2;         // d_model x d_ff, d_model

    ParameterList parameters();
    ConstParameterList parameters() const;
    // Copies every tensor from `other`, keeping this block's names.
    void copy_values_from(const BlockParams &other);
};

BlockParams make_block(const std::string &prefix, std::size_t d_model, std::size_t d_ff, Rng &rng);

// Parameters of one block bound as leaves on a tape.
struct BoundBlock {
    Var ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
};

template <class Block>
BoundBlock bind_block(Tape &tape, Block &b) {
    return BoundBlock{tape.param(b.ln1_g), tape.param(b.ln1_b), tape.param(b.wq), tape.param(b.wk),
                      tape.param(b.wv),    tape.param(b.wo),    tape.param(b.ln2_g), tape.param(b.ln2_b),
                      tape.param(b.w1),    tape.param(b.b1),    tape.param(b.w2),  tape.param(b.b2)};
}

// Keys/values of earlier rows, kept so later rows can attend to them.
struct AttentionPrefix {
    Var k, v;
};

// Causal self-attention block over all rows of x. When `prefix_out` is set
// it receives this block's keys and values.
Var block_causal(const BoundBlock &b, Var x, std::size_t heads, AttentionPrefix *prefix_out = nullptr);

// Each row of x is an independent final position appended after the prefix:
// it attends to all prefix rows and to itself. Equivalent to running
// block_causal on [prefix_rows; row] and keeping the last row.
Var block_prefixed(const BoundBlock &b, Var x, const AttentionPrefix &prefix, std::size_t heads);

// Cross-attention: rows of `queries` attend over rows of `memory`.
Var cross_attention(Var queries, Var memory, Var wq, Var wk, Var wv, Var wo, std::size_t heads);

// Sinusoidal position table for positions [start, start + rows).
Tensor sinusoidal_positions(std::size_t rows, std::size_t d_model, std::size_t start = 0);

} // namespace streamgate
