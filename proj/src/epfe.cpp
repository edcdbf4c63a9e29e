#include "streamgate/epfe.hpp"

#include <algorithm>
#include <cmath>

#include "streamgate/error.hpp"

namespace streamgate {

std::string to_string(SsmMode m) { return m == SsmMode::lti ? "lti" : "selective"; }

SsmMode parse_ssm_mode(const std::string &s) {
    if (s == "lti") return SsmMode::lti;
    if (s == "selective") return SsmMode::selective;
    throw ConfigError("unknown EPFE mode '" + s + "' (expected lti or selective)");
}

ParameterList SsmParams::parameters() {
    if (config.mode == SsmMode::lti) return {&input_proj, &A, &B, &C};
    return {&input_proj, &A, &B, &C, &dt_proj, &dt_bias, &b_proj, &b_bias, &c_proj, &c_bias};
}

ConstParameterList SsmParams::parameters() const {
    auto list = const_cast<SsmParams *>(this)->parameters();
    return {list.begin(), list.end()};
}

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Gram-Schmidt on a Gaussian matrix; rows come out orthonormal.
Tensor random_orthogonal(std::size_t n, Rng &rng) {
    Tensor q(Shape{n, n});
    for (auto &v : q.data) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += q.at(i, j) * q.at(k, j);
            for (std::size_t j = 0; j < n; ++j) q.at(i, j) -= dot * q.at(k, j);
        }
        double norm = 0.0;
        for (std::size_t j = 0; j < n; ++j) norm += q.at(i, j) * q.at(i, j);
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < n; ++j) q.at(i, j) /= norm;
    }
    return q;
}

// y = W x for W (rows x cols) stored row-major
void matvec(const Tensor &w, const double *x, double *y) {
    const std::size_t rows = w.shape[0], cols = w.shape[1];
    for (std::size_t i = 0; i < rows; ++i) {
        const double *wi = w.data.data() + i * cols;
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += wi[j] * x[j];
        y[i] = s;
    }
}

} // namespace

SsmParams make_ssm_params(const EpfeConfig &config) {
    if (config.d_spat == 0 || config.d_in == 0 || config.d_state == 0 || config.d_out == 0)
        throw ConfigError("EPFE dimensions must be positive");
    Rng rng(config.seed);
    SsmParams p;
    p.config = config;
    const auto ds = config.d_state, di = config.d_in;
    p.input_proj = Parameter("epfe.input_proj", uniform_init({di, config.d_spat}, config.d_spat, rng));
    p.B = Parameter("epfe.B", uniform_init({ds, di}, di, rng));
    p.C = Parameter("epfe.C", uniform_init({config.d_out, ds}, ds, rng));
    if (config.mode == SsmMode::lti) {
        Tensor a = random_orthogonal(ds, rng);
        for (auto &v : a.data) v *= 0.99;
        p.A = Parameter("epfe.A", std::move(a));
        return p;
    }
    Tensor a(Shape{ds});
    for (std::size_t i = 0; i < ds; ++i) {
        const double decay = ds == 1 ? 0.5 : 0.05 + 0.9 * static_cast<double>(i) / static_cast<double>(ds - 1);
        a.data[i] = std::log(1.0 / decay - 1.0);
    }
    p.A = Parameter("epfe.A", std::move(a));
    auto small = [&](Shape s) {
        Tensor t = uniform_init(s, di, rng);
        for (auto &v : t.data) v *= 0.1;
        return t;
    };
    p.dt_proj = Parameter("epfe.dt_proj", small({ds, di}));
    p.dt_bias = Parameter("epfe.dt_bias", Tensor(Shape{ds}, std::log(std::exp(1.0) - 1.0)));
    p.b_proj = Parameter("epfe.b_proj", uniform_init({ds, di}, di, rng));
    p.b_bias = Parameter("epfe.b_bias", Tensor(Shape{ds}, 2.0));
    p.c_proj = Parameter("epfe.c_proj", uniform_init({ds, di}, di, rng));
    p.c_bias = Parameter("epfe.c_bias", Tensor(Shape{ds}, 2.0));
    return p;
}

SsmParams ssm_params_from(const EpfeConfig &config, std::span<const Parameter> tensors) {
    SsmParams p = make_ssm_params(config);
    load_into(p.parameters(), tensors);
    return p;
}

SsmState initial_state(const SsmParams &params) { return SsmState{std::vector<double>(params.config.d_state, 0.0), 0}; }

SsmState epfe_reset(const SsmState &state) { return SsmState{std::vector<double>(state.h.size(), 0.0), 0}; }

std::pair<PerceptionToken, SsmState> epfe_step(const SsmParams &params, const SsmState &state,
                                               const FeatureFrame &frame) {
    const auto &cfg = params.config;
    if (frame.features.size() != cfg.d_spat)
        throw DimensionError("frame " + std::to_string(frame.frame_index) + " has " +
                             std::to_string(frame.features.size()) + " features, EPFE expects " +
                             std::to_string(cfg.d_spat));
    if (state.h.size() != cfg.d_state) throw DimensionError("EPFE state has wrong dimension");
    const std::size_t ds = cfg.d_state;
    std::vector<double> x(cfg.d_in), u(ds);
    matvec(params.input_proj.value, frame.features.data(), x.data());
    matvec(params.B.value, x.data(), u.data());

    SsmState next;
    next.h.resize(ds);
    next.frames_seen = state.frames_seen + 1;
    std::vector<double> readout(ds);
    if (cfg.mode == SsmMode::lti) {
        matvec(params.A.value, state.h.data(), next.h.data());
        for (std::size_t i = 0; i < ds; ++i) next.h[i] += u[i];
        readout = next.h;
    } else {
        std::vector<double> dt(ds), bg(ds), cg(ds);
        matvec(params.dt_proj.value, x.data(), dt.data());
        matvec(params.b_proj.value, x.data(), bg.data());
        matvec(params.c_proj.value, x.data(), cg.data());
        for (std::size_t i = 0; i < ds; ++i) {
            const double step = softplus(dt[i] + params.dt_bias.value.data[i]);
            const double decay = std::exp(-(step * softplus(params.A.value.data[i])));
            const double gate_b = sigmoid(bg[i] + params.b_bias.value.data[i]);
            const double gate_c = sigmoid(cg[i] + params.c_bias.value.data[i]);
            next.h[i] = decay * state.h[i] + (1.0 - decay) * (gate_b * u[i]);
            readout[i] = gate_c * next.h[i];
        }
    }
    for (double v : next.h)
        if (!std::isfinite(v))
            throw NumericalError("EPFE state diverged at frame " + std::to_string(frame.frame_index));
    PerceptionToken tok;
    tok.frame_index = frame.frame_index;
    tok.vector.resize(cfg.d_out);
    matvec(params.C.value, readout.data(), tok.vector.data());
    return {std::move(tok), std::move(next)};
}

std::vector<PerceptionToken> epfe_run(const SsmParams &params, std::span<const FeatureFrame> frames, SsmState *state) {
    SsmState local = state ? *state : initial_state(params);
    std::vector<PerceptionToken> out;
    out.reserve(frames.size());
    for (const auto &f : frames) {
        auto [tok, next] = epfe_step(params, local, f);
        out.push_back(std::move(tok));
        local = std::move(next);
    }
    if (state) *state = std::move(local);
    return out;
}

namespace {

template <class Params>
std::vector<Var> forward_impl(Tape &tape, Params &params, std::span<const FeatureFrame> frames) {
    const auto &cfg = params.config;
    const std::size_t ds = cfg.d_state;
    Var P = tape.param(params.input_proj);
    Var A = tape.param(params.A);
    Var B = tape.param(params.B);
    Var C = tape.param(params.C);
    Var h = tape.constant(Tensor(Shape{1, ds}));
    std::vector<Var> tokens;
    tokens.reserve(frames.size());

    if (cfg.mode == SsmMode::lti) {
        for (const auto &f : frames) {
            if (f.features.size() != cfg.d_spat) throw DimensionError("frame feature width mismatch");
            Var fr = tape.constant(Tensor(Shape{1, cfg.d_spat}, f.features));
            Var x = matmul_nt(fr, P);
            h = add(matmul_nt(h, A), matmul_nt(x, B));
            tokens.push_back(matmul_nt(h, C));
        }
        return tokens;
    }

    Var rate = reshape(softplus(A), Shape{1, ds});
    Var Wdt = tape.param(params.dt_proj), bdt = tape.param(params.dt_bias);
    Var Wb = tape.param(params.b_proj), bb = tape.param(params.b_bias);
    Var Wc = tape.param(params.c_proj), bc = tape.param(params.c_bias);
    for (const auto &f : frames) {
        if (f.features.size() != cfg.d_spat) throw DimensionError("frame feature width mismatch");
        Var fr = tape.constant(Tensor(Shape{1, cfg.d_spat}, f.features));
        Var x = matmul_nt(fr, P);
        Var u = matmul_nt(x, B);
        Var step = softplus(add_row(matmul_nt(x, Wdt), bdt));
        Var decay = exp(scale(mul(step, rate), -1.0));
        Var gate_b = sigmoid(add_row(matmul_nt(x, Wb), bb));
        Var gate_c = sigmoid(add_row(matmul_nt(x, Wc), bc));
        h = add(mul(decay, h), mul(affine(decay, -1.0, 1.0), mul(gate_b, u)));
        tokens.push_back(matmul_nt(mul(gate_c, h), C));
    }
    return tokens;
}

} // namespace

std::vector<Var> epfe_forward(Tape &tape, SsmParams &params, std::span<const FeatureFrame> frames) {
    return forward_impl(tape, params, frames);
}

std::vector<Var> epfe_forward(Tape &tape, const SsmParams &params, std::span<const FeatureFrame> frames) {
    return forward_impl(tape, params, frames);
}

Tensor token_similarity_matrix(std::span<const PerceptionToken> tokens) {
    const std::size_t n = tokens.size();
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (tokens[i].vector.size() != tokens[0].vector.size())
            throw DimensionError("token for frame " + std::to_string(tokens[i].frame_index) + " has a different dimension");
        double s = 0.0;
        for (double v : tokens[i].vector) s += v * v;
        if (s == 0.0)
            throw NumericalError("similarity undefined: zero-norm token at frame " +
                                 std::to_string(tokens[i].frame_index));
        norms[i] = std::sqrt(s);
    }
    Tensor sim(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) {
        sim.at(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < tokens[i].vector.size(); ++k) dot += tokens[i].vector[k] * tokens[j].vector[k];
            const double c = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
            sim.at(i, j) = c;
            sim.at(j, i) = c;
        }
    }
    return sim;
}

std::uint64_t epfe_step_flops(const EpfeConfig &c) {
    const std::uint64_t proj = 2ull * c.d_in * c.d_spat + 2ull * c.d_state * c.d_in + 2ull * c.d_out * c.d_state;
    if (c.mode == SsmMode::lti) return proj + 2ull * c.d_state * c.d_state + c.d_state;
    return proj + 3ull * 2ull * c.d_state * c.d_in + 16ull * c.d_state;
}

} // namespace streamgate
