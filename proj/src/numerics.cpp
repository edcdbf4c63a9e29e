#include "streamgate/numerics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>

#include "streamgate/binary_io.hpp"

namespace streamgate {

std::string shape_string(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_size(const Shape &shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_size(shape) != data.size())
        throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
}

Tensor Tensor::vector(std::vector<double> values) {
    const auto n = values.size();
    return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
    if (rank() == 2) return shape[0];
    if (rank() <= 1) return 1;
    throw DimensionError("rows() on tensor of shape " + shape_string(shape));
}

std::size_t Tensor::cols() const {
    if (rank() == 2) return shape[1];
    if (rank() == 1) return shape[0];
    if (rank() == 0) return 1;
    throw DimensionError("cols() on tensor of shape " + shape_string(shape));
}

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape));
    return data[0];
}

void Tensor::validate() const {
    if (shape_size(shape) != data.size())
        throw DimensionError("tensor shape " + shape_string(shape) + " holds " +
                             std::to_string(data.size()) + " values");
    if (grad && grad->size() != data.size())
        throw DimensionError("gradient buffer size differs from tensor shape " + shape_string(shape));
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

// ---- Rng ---------------------------------------------------------------------

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal(double mean, double stddev) {
    if (has_spare_) {
        has_spare_ = false;
        return mean + stddev * spare_;
    }
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + stddev * r * std::cos(theta);
}

std::size_t Rng::below(std::size_t n) {
    if (n == 0) return 0;
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

Tensor uniform_init(const Shape &shape, std::size_t fan_in, Rng &rng) {
    Tensor t(shape);
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    for (auto &v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

// ---- Tape --------------------------------------------------------------------

const Tensor &Var::value() const { return tape->value(id); }

const Tensor &Tape::value(std::size_t id) const {
    const auto &n = nodes_[id];
    return n.external ? *n.external : n.own;
}

std::vector<double> &Tape::grad(std::size_t id) {
    auto &n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
    return n.grad;
}

Var Tape::constant(Tensor t) {
    Node n;
    n.own = std::move(t);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::param(Parameter &p) {
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.needs_grad = grad_enabled_;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::param(const Parameter &p) {
    Node n;
    n.external = &p.value;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, const std::vector<Var> &inputs, BackwardFn fn, std::uint64_t flops) {
    flops_ += flops;
    Node n;
    n.own = std::move(value);
    if (grad_enabled_) {
        for (const auto &in : inputs) {
            if (in.tape != this) throw Error("tape", "operation mixes variables from different tapes");
            if (nodes_[in.id].needs_grad) n.needs_grad = true;
        }
        if (n.needs_grad) n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw Error("tape", "backward() on a variable from another tape");
    if (value(loss.id).size() != 1)
        throw DimensionError("backward() needs a scalar, got shape " + shape_string(value(loss.id).shape));
    if (!nodes_[loss.id].needs_grad) return;
    grad(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        auto &n = nodes_[i];
        if (!n.needs_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, i);
        if (n.param) {
            auto &g = n.param->value.grad;
            if (!g) g.emplace(n.param->value.size(), 0.0);
            for (std::size_t k = 0; k < n.grad.size(); ++k) (*g)[k] += n.grad[k];
        }
    }
}

// ---- operations --------------------------------------------------------------

namespace {

void require_rank2(const Tensor &t, const char *op) {
    if (t.rank() != 2)
        throw DimensionError(std::string(op) + " expects a matrix, got shape " + shape_string(t.shape));
}

void require_same(const Tensor &a, const Tensor &b, const char *op) {
    if (a.shape != b.shape)
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape) + " vs " +
                             shape_string(b.shape));
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double *a, const double *b, double *c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double *ci = c + i * n;
        const double *ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double *bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m x n] += a[m x k] * b[n x k]^T. b is transposed once so the inner loop
// runs over contiguous rows; every output element is accumulated in the same
// order whatever m is.
void gemm_nt(const double *a, const double *b, double *c, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_nn(a, bt.data(), c, m, k, n);
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double *a, const double *b, double *c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double *ai = a + i * k;
        const double *bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            double *cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

template <class Fwd, class Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv, std::uint64_t flops_per_elem) {
    const Tensor &x = a.value();
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = fwd(x.data[i]);
    const auto id = a.id;
    return a.tape->push(
        std::move(out), {a},
        [id, deriv](Tape &t, std::size_t self) {
            if (!t.needs_grad(id)) return;
            const auto &x = t.value(id).data;
            const auto &y = t.value(self).data;
            const auto &g = t.grad(self);
            auto &gx = t.grad(id);
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * deriv(x[i], y[i]);
        },
        flops_per_elem * x.size());
}

} // namespace

Var matmul(Var a, Var b) {
    const Tensor &A = a.value();
    const Tensor &B = b.value();
    require_rank2(A, "matmul");
    require_rank2(B, "matmul");
    if (A.shape[1] != B.shape[0])
        throw DimensionError("matmul: inner dimensions differ, " + shape_string(A.shape) + " x " +
                             shape_string(B.shape));
    const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    Tensor out(Shape{m, n});
    gemm_nn(A.data.data(), B.data.data(), out.data.data(), m, k, n);
    const auto ia = a.id, ib = b.id;
    return a.tape->push(
        std::move(out), {a, b},
        [ia, ib, m, k, n](Tape &t, std::size_t self) {
            const auto &g = t.grad(self);
            if (t.needs_grad(ia)) gemm_nt(g.data(), t.value(ib).data.data(), t.grad(ia).data(), m, n, k);
            if (t.needs_grad(ib)) gemm_tn(t.value(ia).data.data(), g.data(), t.grad(ib).data(), m, k, n);
        },
        2ull * m * k * n);
}

Var matmul_nt(Var a, Var b) {
    const Tensor &A = a.value();
    const Tensor &B = b.value();
    require_rank2(A, "matmul_nt");
    require_rank2(B, "matmul_nt");
    if (A.shape[1] != B.shape[1])
        throw DimensionError("matmul_nt: inner dimensions differ, " + shape_string(A.shape) + " x " +
                             shape_string(B.shape) + "^T");
    const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[0];
    Tensor out(Shape{m, n});
    gemm_nt(A.data.data(), B.data.data(), out.data.data(), m, k, n);
    const auto ia = a.id, ib = b.id;
    return a.tape->push(
        std::move(out), {a, b},
        [ia, ib, m, k, n](Tape &t, std::size_t self) {
            const auto &g = t.grad(self); // m x n
            if (t.needs_grad(ia)) gemm_nn(g.data(), t.value(ib).data.data(), t.grad(ia).data(), m, n, k);
            if (t.needs_grad(ib)) gemm_tn(g.data(), t.value(ia).data.data(), t.grad(ib).data(), m, n, k);
        },
        2ull * m * k * n);
}

Var add(Var a, Var b) {
    require_same(a.value(), b.value(), "add");
    Tensor out = a.value();
    const std::size_t n = out.size();
    out.requires_grad = false;
    out.grad.reset();
    const auto &bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
    const auto ia = a.id, ib = b.id;
    return a.tape->push(
        std::move(out), {a, b},
        [ia, ib](Tape &t, std::size_t self) {
            const auto &g = t.grad(self);
            for (auto id : {ia, ib}) {
                if (!t.needs_grad(id)) continue;
                auto &gx = t.grad(id);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
        },
        n);
}

Var sub(Var a, Var b) {
    require_same(a.value(), b.value(), "sub");
    Tensor out(a.value().shape);
    const std::size_t n = out.size();
    const auto &av = a.value().data;
    const auto &bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = av[i] - bv[i];
    const auto ia = a.id, ib = b.id;
    return a.tape->push(
        std::move(out), {a, b},
        [ia, ib](Tape &t, std::size_t self) {
            const auto &g = t.grad(self);
            if (t.needs_grad(ia)) {
                auto &gx = t.grad(ia);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (t.needs_grad(ib)) {
                auto &gx = t.grad(ib);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
            }
        },
        n);
}

Var mul(Var a, Var b) {
    require_same(a.value(), b.value(), "mul");
    Tensor out(a.value().shape);
    const std::size_t n = out.size();
    const auto &av = a.value().data;
    const auto &bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = av[i] * bv[i];
    const auto ia = a.id, ib = b.id;
    return a.tape->push(
        std::move(out), {a, b},
        [ia, ib](Tape &t, std::size_t self) {
            const auto &g = t.grad(self);
            const auto &av = t.value(ia).data;
            const auto &bv = t.value(ib).data;
            if (t.needs_grad(ia)) {
                auto &gx = t.grad(ia);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * bv[i];
            }
            if (t.needs_grad(ib)) {
                auto &gx = t.grad(ib);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * av[i];
            }
        },
        n);
}

Var add_row(Var a, Var row) {
    const Tensor &A = a.value();
    const Tensor &R = row.value();
    const std::size_t m = A.rows(), n = A.cols();
    if (R.size() != n)
        throw DimensionError("add_row: row " + shape_string(R.shape) + " does not broadcast over " +
                             shape_string(A.shape));
    Tensor out(A.shape);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] = A.data[i * n + j] + R.data[j];
    const auto ia = a.id, ir = row.id;
    return a.tape->push(
        std::move(out), {a, row},
        [ia, ir, m, n](Tape &t, std::size_t self) {
            const auto &g = t.grad(self);
            if (t.needs_grad(ia)) {
                auto &gx = t.grad(ia);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (t.needs_grad(ir)) {
                auto &gr = t.grad(ir);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
            }
        },
        m * n);
}

Var mul_col(Var a, Var col) {
    const Tensor &A = a.value();
    const Tensor &C = col.value();
    require_rank2(A, "mul_col");
    const std::size_t m = A.shape[0], n = A.shape[1];
    if (C.size() != m)
        throw DimensionError("mul_col: column " + shape_string(C.shape) + " does not broadcast over " +
                             shape_string(A.shape));
    Tensor out(A.shape);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] = A.data[i * n + j] * C.data[i];
    const auto ia = a.id, ic = col.id;
    return a.tape->push(
        std::move(out), {a, col},
        [ia, ic, m, n](Tape &t, std::size_t self) {
            const auto &g = t.grad(self);
            const auto &av = t.value(ia).data;
            const auto &cv = t.value(ic).data;
            if (t.needs_grad(ia)) {
                auto &gx = t.grad(ia);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * cv[i];
            }
            if (t.needs_grad(ic)) {
                auto &gc = t.grad(ic);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gc[i] += g[i * n + j] * av[i * n + j];
            }
        },
        m * n);
}

Var scale(Var a, double s) { return affine(a, s, 0.0); }

Var affine(Var a, double alpha, double beta) {
    return unary(
        a, [alpha, beta](double x) { return alpha * x + beta; },
        [alpha](double, double) { return alpha; }, 2);
}

Var relu(Var a) {
    return unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; },
        1);
}

Var gelu(Var a) {
    constexpr double c = 0.7978845608028654; // sqrt(2/pi)
    return unary(
        a,
        [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x))); },
        [](double x, double) {
            const double u = c * (x + 0.044715 * x * x * x);
            const double th = std::tanh(u);
            const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
            return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
        },
        12);
}

Var tanh(Var a) {
    return unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; }, 4);
}

namespace {
double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
double stable_softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
} // namespace

Var sigmoid(Var a) {
    return unary(
        a, [](double x) { return stable_sigmoid(x); }, [](double, double y) { return y * (1.0 - y); }, 4);
}

Var softplus(Var a) {
    return unary(
        a, [](double x) { return stable_softplus(x); }, [](double x, double) { return stable_sigmoid(x); },
        4);
}

Var exp(Var a) {
    return unary(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, 4);
}

Var reshape(Var a, Shape shape) {
    const Tensor &x = a.value();
    if (shape_size(shape) != x.size())
        throw DimensionError("reshape: " + shape_string(x.shape) + " -> " + shape_string(shape));
    Tensor out(std::move(shape), x.data);
    const auto ia = a.id;
    return a.tape->push(
        std::move(out), {a},
        [ia](Tape &t, std::size_t self) {
            if (!t.needs_grad(ia)) return;
            const auto &g = t.grad(self);
            auto &gx = t.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        },
        0);
}

Var sum(Var a) {
    const Tensor &x = a.value();
    double s = 0.0;
    for (double v : x.data) s += v;
    const auto ia = a.id;
    return a.tape->push(
        Tensor::scalar(s), {a},
        [ia](Tape &t, std::size_t self) {
            if (!t.needs_grad(ia)) return;
            const double g = t.grad(self)[0];
            for (auto &v : t.grad(ia)) v += g;
        },
        x.size());
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Tensor &X = x.value();
    const std::size_t m = X.rows(), n = X.cols();
    if (gamma.value().size() != n || beta.value().size() != n)
        throw DimensionError("layer_norm: gain/bias do not match row width " + std::to_string(n));
    Tensor out(X.shape);
    // normalized values and inverse std are needed for backward
    auto xhat = std::make_shared<std::vector<double>>(m * n);
    auto inv = std::make_shared<std::vector<double>>(m);
    const auto &gv = gamma.value().data;
    const auto &bv = beta.value().data;
    for (std::size_t i = 0; i < m; ++i) {
        const double *row = X.data.data() + i * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv)[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (row[j] - mean) * is;
            (*xhat)[i * n + j] = h;
            out.data[i * n + j] = h * gv[j] + bv[j];
        }
    }
    const auto ix = x.id, ig = gamma.id, ib = beta.id;
    return x.tape->push(
        std::move(out), {x, gamma, beta},
        [ix, ig, ib, m, n, xhat, inv](Tape &t, std::size_t self) {
            const auto &g = t.grad(self);
            const auto &gv = t.value(ig).data;
            if (t.needs_grad(ig)) {
                auto &gg = t.grad(ig);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * (*xhat)[i * n + j];
            }
            if (t.needs_grad(ib)) {
                auto &gb = t.grad(ib);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
            if (t.needs_grad(ix)) {
                auto &gx = t.grad(ix);
                const double nn = static_cast<double>(n);
                for (std::size_t i = 0; i < m; ++i) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double dh = g[i * n + j] * gv[j];
                        s1 += dh;
                        s2 += dh * (*xhat)[i * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        const double dh = g[i * n + j] * gv[j];
                        gx[i * n + j] += (*inv)[i] * (dh - s1 / nn - (*xhat)[i * n + j] * s2 / nn);
                    }
                }
            }
        },
        8ull * m * n);
}

namespace {

Var masked_softmax(Var scores, bool causal) {
    const Tensor &S = scores.value();
    require_rank2(S, "softmax");
    const std::size_t m = S.shape[0], n = S.shape[1];
    if (causal && n < m)
        throw DimensionError("causal_softmax needs cols >= rows, got " + shape_string(S.shape));
    const std::size_t offset = causal ? n - m : 0;
    Tensor out(S.shape);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t limit = causal ? i + offset + 1 : n;
        const double *row = S.data.data() + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j < limit; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
            const double e = std::exp(row[j] - mx);
            out.data[i * n + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < limit; ++j) out.data[i * n + j] /= z;
    }
    const auto is = scores.id;
    return scores.tape->push(
        std::move(out), {scores},
        [is, m, n, offset, causal](Tape &t, std::size_t self) {
            if (!t.needs_grad(is)) return;
            const auto &g = t.grad(self);
            const auto &y = t.value(self).data;
            auto &gs = t.grad(is);
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t limit = causal ? i + offset + 1 : n;
                double dot = 0.0;
                for (std::size_t j = 0; j < limit; ++j) dot += g[i * n + j] * y[i * n + j];
                for (std::size_t j = 0; j < limit; ++j) gs[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
            }
        },
        5ull * m * n);
}

} // namespace

Var causal_softmax(Var scores) { return masked_softmax(scores, true); }
Var softmax_rows(Var scores) { return masked_softmax(scores, false); }

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    const Tensor &A = a.value();
    require_rank2(A, "slice_rows");
    const std::size_t m = A.shape[0], n = A.shape[1];
    if (begin > end || end > m)
        throw IndexError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_string(A.shape));
    Tensor out(Shape{end - begin, n},
               std::vector<double>(A.data.begin() + static_cast<std::ptrdiff_t>(begin * n),
                                   A.data.begin() + static_cast<std::ptrdiff_t>(end * n)));
    const auto ia = a.id;
    return a.tape->push(
        std::move(out), {a},
        [ia, begin, n](Tape &t, std::size_t self) {
            if (!t.needs_grad(ia)) return;
            const auto &g = t.grad(self);
            auto &gx = t.grad(ia);
            for (std::size_t k = 0; k < g.size(); ++k) gx[begin * n + k] += g[k];
        },
        0);
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    const Tensor &A = a.value();
    require_rank2(A, "slice_cols");
    const std::size_t m = A.shape[0], n = A.shape[1];
    if (begin > end || end > n)
        throw IndexError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_string(A.shape));
    const std::size_t w = end - begin;
    Tensor out(Shape{m, w});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out.data[i * w + j] = A.data[i * n + begin + j];
    const auto ia = a.id;
    return a.tape->push(
        std::move(out), {a},
        [ia, begin, m, n, w](Tape &t, std::size_t self) {
            if (!t.needs_grad(ia)) return;
            const auto &g = t.grad(self);
            auto &gx = t.grad(ia);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) gx[i * n + begin + j] += g[i * w + j];
        },
        0);
}

Var concat_rows(const std::vector<Var> &parts) {
    if (parts.empty()) throw DimensionError("concat_rows of nothing");
    const std::size_t n = parts[0].value().cols();
    std::size_t m = 0;
    for (const auto &p : parts) {
        if (p.value().cols() != n)
            throw DimensionError("concat_rows: width mismatch " + shape_string(parts[0].shape()) + " vs " +
                                 shape_string(p.shape()));
        m += p.value().rows();
    }
    Tensor out(Shape{m, n});
    std::vector<std::pair<std::size_t, std::size_t>> spans; // (id, offset)
    std::size_t off = 0;
    for (const auto &p : parts) {
        std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
        spans.emplace_back(p.id, off);
        off += p.value().size();
    }
    return parts[0].tape->push(
        std::move(out), parts,
        [spans](Tape &t, std::size_t self) {
            const auto &g = t.grad(self);
            for (const auto &[id, o] : spans) {
                if (!t.needs_grad(id)) continue;
                auto &gx = t.grad(id);
                for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += g[o + k];
            }
        },
        0);
}

Var concat_cols(const std::vector<Var> &parts) {
    if (parts.empty()) throw DimensionError("concat_cols of nothing");
    const std::size_t m = parts[0].value().rows();
    std::size_t n = 0;
    for (const auto &p : parts) {
        if (p.value().rows() != m)
            throw DimensionError("concat_cols: height mismatch " + shape_string(parts[0].shape()) + " vs " +
                                 shape_string(p.shape()));
        n += p.value().cols();
    }
    Tensor out(Shape{m, n});
    std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> spans; // (id, col offset, width)
    std::size_t off = 0;
    for (const auto &p : parts) {
        const std::size_t w = p.value().cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out.data[i * n + off + j] = p.value().data[i * w + j];
        spans.emplace_back(p.id, off, w);
        off += w;
    }
    return parts[0].tape->push(
        std::move(out), parts,
        [spans, m, n](Tape &t, std::size_t self) {
            const auto &g = t.grad(self);
            for (const auto &[id, o, w] : spans) {
                if (!t.needs_grad(id)) continue;
                auto &gx = t.grad(id);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) gx[i * w + j] += g[i * n + o + j];
            }
        },
        0);
}

Var gather_rows(Var table, std::span<const int> ids) {
    const Tensor &T = table.value();
    require_rank2(T, "gather_rows");
    const std::size_t v = T.shape[0], n = T.shape[1];
    std::vector<int> idx(ids.begin(), ids.end());
    Tensor out(Shape{idx.size(), n});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= v)
            throw IndexError("gather_rows: id " + std::to_string(idx[i]) + " outside table of " +
                             std::to_string(v) + " rows");
        std::copy_n(T.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * n), n,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    const auto it = table.id;
    return table.tape->push(
        std::move(out), {table},
        [it, idx, n](Tape &t, std::size_t self) {
            if (!t.needs_grad(it)) return;
            const auto &g = t.grad(self);
            auto &gt = t.grad(it);
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < n; ++j) gt[static_cast<std::size_t>(idx[i]) * n + j] += g[i * n + j];
        },
        0);
}

Var rowdot(Var a, Var b) {
    require_same(a.value(), b.value(), "rowdot");
    const Tensor &A = a.value();
    require_rank2(A, "rowdot");
    const std::size_t m = A.shape[0], n = A.shape[1];
    const auto &bv = b.value().data;
    Tensor out(Shape{m, 1});
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += A.data[i * n + j] * bv[i * n + j];
        out.data[i] = s;
    }
    const auto ia = a.id, ib = b.id;
    return a.tape->push(
        std::move(out), {a, b},
        [ia, ib, m, n](Tape &t, std::size_t self) {
            const auto &g = t.grad(self);
            const auto &av = t.value(ia).data;
            const auto &bv = t.value(ib).data;
            if (t.needs_grad(ia)) {
                auto &gx = t.grad(ia);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i] * bv[i * n + j];
            }
            if (t.needs_grad(ib)) {
                auto &gx = t.grad(ib);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i] * av[i * n + j];
            }
        },
        2ull * m * n);
}

Var softmax_cross_entropy(Var logits, std::size_t target_index, std::optional<std::span<const double>> class_weights) {
    const Tensor &L = logits.value();
    if (L.rank() > 2 || L.rows() != 1)
        throw DimensionError("softmax_cross_entropy expects rank-1 logits, got " + shape_string(L.shape));
    const std::size_t n = L.size();
    if (target_index >= n)
        throw IndexError("target index " + std::to_string(target_index) + " out of range for " +
                         std::to_string(n) + " classes");
    double w = 1.0;
    if (class_weights) {
        if (class_weights->size() != n)
            throw DimensionError("class weights: " + std::to_string(class_weights->size()) + " for " +
                                 std::to_string(n) + " classes");
        for (double cw : *class_weights)
            if (!(cw > 0.0)) throw InputError("class weights must be positive");
        w = (*class_weights)[target_index];
    }
    double mx = L.data[0];
    for (double v : L.data) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : L.data) z += std::exp(v - mx);
    const double logz = mx + std::log(z);
    const double loss = w * (logz - L.data[target_index]);
    const auto il = logits.id;
    return logits.tape->push(
        Tensor::scalar(loss), {logits},
        [il, target_index, w, logz](Tape &t, std::size_t self) {
            if (!t.needs_grad(il)) return;
            const double g = t.grad(self)[0];
            const auto &x = t.value(il).data;
            auto &gx = t.grad(il);
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double p = std::exp(x[j] - logz);
                gx[j] += g * w * (p - (j == target_index ? 1.0 : 0.0));
            }
        },
        4ull * n);
}

Var cross_entropy_rows(Var logits, std::span<const int> targets,
                       std::optional<std::span<const double>> class_weights) {
    const Tensor &L = logits.value();
    require_rank2(L, "cross_entropy_rows");
    const std::size_t m = L.shape[0], n = L.shape[1];
    if (targets.size() != m)
        throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(m) + " rows");
    std::vector<double> cw(n, 1.0);
    if (class_weights) {
        if (class_weights->size() != n)
            throw DimensionError("class weights: " + std::to_string(class_weights->size()) + " for " +
                                 std::to_string(n) + " classes");
        for (std::size_t j = 0; j < n; ++j) {
            if (!((*class_weights)[j] > 0.0)) throw InputError("class weights must be positive");
            cw[j] = (*class_weights)[j];
        }
    }
    std::vector<int> tg(targets.begin(), targets.end());
    auto logz = std::make_shared<std::vector<double>>(m, 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (tg[i] < 0) continue;
        if (static_cast<std::size_t>(tg[i]) >= n)
            throw IndexError("target " + std::to_string(tg[i]) + " out of range for " + std::to_string(n) +
                             " classes");
        const double *row = L.data.data() + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        (*logz)[i] = mx + std::log(z);
        loss += cw[tg[i]] * ((*logz)[i] - row[tg[i]]);
    }
    const auto il = logits.id;
    return logits.tape->push(
        Tensor::scalar(loss), {logits},
        [il, tg, cw, logz, m, n](Tape &t, std::size_t self) {
            if (!t.needs_grad(il)) return;
            const double g = t.grad(self)[0];
            const auto &x = t.value(il).data;
            auto &gx = t.grad(il);
            for (std::size_t i = 0; i < m; ++i) {
                if (tg[i] < 0) continue;
                const double gw = g * cw[tg[i]];
                for (std::size_t j = 0; j < n; ++j) {
                    const double p = std::exp(x[i * n + j] - (*logz)[i]);
                    gx[i * n + j] += gw * (p - (static_cast<int>(j) == tg[i] ? 1.0 : 0.0));
                }
            }
        },
        4ull * m * n);
}

Tensor matmul(const Tensor &a, const Tensor &b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.shape[1] != b.shape[0])
        throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape) + " x " +
                             shape_string(b.shape));
    Tensor out(Shape{a.shape[0], b.shape[1]});
    gemm_nn(a.data.data(), b.data.data(), out.data.data(), a.shape[0], a.shape[1], b.shape[1]);
    return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("cosine_similarity: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw NumericalError("cosine similarity of a zero vector");
    return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

// ---- optimization --------------------------------------------------------------

void sgd_step(const ParameterList &params, double learning_rate) {
    for (const auto *p : params)
        if (!p->value.grad) throw TrainingError("parameter '" + p->name + "' has no gradient");
    for (auto *p : params) {
        auto &g = *p->value.grad;
        for (std::size_t i = 0; i < g.size(); ++i) p->value.data[i] -= learning_rate * g[i];
        p->value.grad.reset();
    }
}

void Adam::step(const ParameterList &params, double learning_rate) {
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (auto *p : params) {
        if (!p->value.grad) continue;
        auto &st = state_[p->name];
        if (st.m.empty()) {
            st.m.assign(p->value.size(), 0.0);
            st.v.assign(p->value.size(), 0.0);
        }
        const auto &g = *p->value.grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g[i];
            st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g[i] * g[i];
            p->value.data[i] -= learning_rate * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + eps_);
        }
        p->value.grad.reset();
    }
}

void zero_grad(const ParameterList &params) {
    for (auto *p : params) p->value.grad.reset();
}

double clip_grad_norm(const ParameterList &params, double max_norm) {
    double sq = 0.0;
    for (const auto *p : params)
        if (p->value.grad)
            for (double g : *p->value.grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto *p : params)
            if (p->value.grad)
                for (double &g : *p->value.grad) g *= s;
    }
    return norm;
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps, bool enabled) {
    if (!enabled || total_steps <= 1) return base_lr;
    const double frac = static_cast<double>(std::min(step, total_steps - 1)) / static_cast<double>(total_steps - 1);
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * frac));
}

// ---- checkpoints ----------------------------------------------------------------

std::uint64_t parameter_checksum(const ConstParameterList &params) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void *p, std::size_t n) {
        const auto *b = static_cast<const unsigned char *>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto *p : params) {
        mix(p->name.data(), p->name.size());
        for (auto d : p->value.shape) {
            const auto d64 = static_cast<std::uint64_t>(d);
            mix(&d64, sizeof d64);
        }
        mix(p->value.data.data(), p->value.data.size() * sizeof(double));
    }
    return h;
}

void check_unique_names(const ConstParameterList &params) {
    std::set<std::string> seen;
    for (const auto *p : params)
        if (!seen.insert(p->name).second) throw ConfigError("duplicate parameter name '" + p->name + "'");
}

void load_into(const ParameterList &params, std::span<const Parameter> tensors) {
    std::map<std::string, const Tensor *> by_name;
    for (const auto &t : tensors) by_name[t.name] = &t.value;
    for (auto *param : params) {
        auto it = by_name.find(param->name);
        if (it == by_name.end()) throw FormatError("checkpoint lacks '" + param->name + "'");
        if (it->second->shape != param->value.shape)
            throw FormatError("checkpoint tensor '" + param->name + "' has shape " + shape_string(it->second->shape) +
                              ", expected " + shape_string(param->value.shape));
        param->value.data = it->second->data;
        param->value.grad.reset();
    }
}

void save_checkpoint(const std::string &path, const ConstParameterList &params) {
    check_unique_names(params);
    BinaryWriter w;
    w.bytes("SGT1");
    for (const auto *p : params) {
        w.u32(static_cast<std::uint32_t>(p->name.size()));
        w.bytes(p->name);
        w.u32(static_cast<std::uint32_t>(p->value.rank()));
        for (auto d : p->value.shape) w.u64(d);
        for (double v : p->value.data) w.f64(v);
    }
    w.save(path);
}

std::vector<Parameter> load_checkpoint(const std::string &path) {
    BinaryReader r = BinaryReader::from_file(path);
    if (r.bytes(4) != "SGT1") throw FormatError(path + ": bad magic at byte offset 0");
    std::vector<Parameter> out;
    std::set<std::string> seen;
    while (!r.at_end()) {
        const auto record_offset = r.offset();
        const auto name_len = r.u32();
        std::string name = r.bytes(name_len);
        const auto rank = r.u32();
        if (rank > 8) throw FormatError(path + ": implausible rank " + std::to_string(rank) + " at byte offset " +
                                        std::to_string(record_offset));
        Shape shape(rank);
        for (auto &d : shape) d = r.u64();
        const auto n = shape_size(shape);
        if (n * 8 > r.remaining())
            throw FormatError(path + ": truncated payload for '" + name + "' at byte offset " +
                              std::to_string(r.offset()));
        std::vector<double> data(n);
        for (auto &v : data) v = r.f64();
        if (!seen.insert(name).second)
            throw FormatError(path + ": duplicate parameter '" + name + "' at byte offset " +
                              std::to_string(record_offset));
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return out;
}

} // namespace streamgate
