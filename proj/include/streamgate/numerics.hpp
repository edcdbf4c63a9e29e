#pragma once

// Dense float64 tensors with reverse-mode gradients recorded on an explicit
// tape. Just enough machinery to train the perception extractor, the gate
// and the toy decoder; everything is row-major and at most rank 2.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "streamgate/error.hpp"

namespace streamgate {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape &shape);
std::size_t shape_size(const Shape &shape);

struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::optional<std::vector<double>> grad;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0);
    Tensor(Shape s, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t size() const noexcept { return data.size(); }
    std::size_t rank() const noexcept { return shape.size(); }
    // A rank-1 tensor is viewed as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    double &at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    double item() const;

    // Throws DimensionError when shape/data/grad disagree.
    void validate() const;
    bool all_finite() const noexcept;
};

struct Parameter {
    std::string name;
    Tensor value;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        value.requires_grad = true;
    }
};

using ParameterList = std::vector<Parameter *>;
using ConstParameterList = std::vector<const Parameter *>;

// Deterministic generator with its own uniform/normal transforms so streams
// are reproducible across standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform(); // [0, 1)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal(double mean = 0.0, double stddev = 1.0);
    std::size_t below(std::size_t n);
    std::uint64_t next() { return engine_(); }

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Uniform in +-1/sqrt(fan_in).
Tensor uniform_init(const Shape &shape, std::size_t fan_in, Rng &rng);

class Tape;

// Handle to a node on a tape.
struct Var {
    Tape *tape = nullptr;
    std::size_t id = 0;

    const Tensor &value() const;
    const Shape &shape() const { return value().shape; }
};

class Tape {
  public:
    using BackwardFn = std::function<void(Tape &, std::size_t self)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    Var constant(Tensor t);
    // Leaf bound to `p`; backward() accumulates into p.value.grad.
    Var param(Parameter &p);
    // Read-only leaf; never receives gradient.
    Var param(const Parameter &p);

    const Tensor &value(std::size_t id) const;
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    std::vector<double> &grad(std::size_t id);
    bool grad_enabled() const noexcept { return grad_enabled_; }

    Var push(Tensor value, const std::vector<Var> &inputs, BackwardFn fn, std::uint64_t flops);

    // Seeds d(loss)/d(loss) = 1 and propagates in reverse recording order.
    void backward(Var loss);

    std::uint64_t flops() const noexcept { return flops_; }
    std::size_t size() const noexcept { return nodes_.size(); }

  private:
    struct Node {
        Tensor own;
        const Tensor *external = nullptr;
        std::vector<double> grad;
        BackwardFn backward;
        Parameter *param = nullptr;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
    bool grad_enabled_;
    std::uint64_t flops_ = 0;
};

// ---- differentiable operations ---------------------------------------------

Var matmul(Var a, Var b);          // (m x k)(k x n)
Var matmul_nt(Var a, Var b);       // a * b^T: (m x k)(n x k)^T
Var add(Var a, Var b);             // same shape
Var sub(Var a, Var b);
Var mul(Var a, Var b);             // Hadamard
Var add_row(Var a, Var row);       // broadcast a row vector over every row of a
Var mul_col(Var a, Var col);       // broadcast an (m x 1) column over the columns of a
Var scale(Var a, double s);
Var affine(Var a, double alpha, double beta); // alpha * a + beta
Var relu(Var a);
Var gelu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var exp(Var a);
Var reshape(Var a, Shape shape);
Var sum(Var a);                    // -> scalar
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
// Row softmax where row i may see columns j <= i + (cols - rows).
Var causal_softmax(Var scores);
Var softmax_rows(Var scores);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_rows(const std::vector<Var> &parts);
Var concat_cols(const std::vector<Var> &parts);
Var gather_rows(Var table, std::span<const int> ids);
Var rowdot(Var a, Var b);          // (m x n),(m x n) -> (m x 1)

// w[target] * -log softmax(logits)[target]; logits rank-1 (or a single row).
Var softmax_cross_entropy(Var logits, std::size_t target_index,
                          std::optional<std::span<const double>> class_weights = std::nullopt);
// Summed NLL over rows of (n x V) logits, each row scaled by the weight of
// its target class; targets[i] < 0 are skipped.
Var cross_entropy_rows(Var logits, std::span<const int> targets,
                       std::optional<std::span<const double>> class_weights = std::nullopt);

// ---- plain (non-tape) helpers ----------------------------------------------

// Standard matrix product, used by inference paths that skip the tape.
Tensor matmul(const Tensor &a, const Tensor &b);
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// ---- optimization ----------------------------------------------------------

// value <- value - lr * grad; grads cleared. Throws TrainingError naming any
// parameter without a populated grad.
void sgd_step(const ParameterList &params, double learning_rate);

class Adam {
  public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}
    // Parameters without a grad are skipped. Grads are cleared afterwards.
    void step(const ParameterList &params, double learning_rate);

  private:
    struct Moments {
        std::vector<double> m, v;
    };
    double beta1_, beta2_, eps_;
    long step_ = 0;
    std::map<std::string, Moments> state_;
};

void zero_grad(const ParameterList &params);
// Rescales all grads so their joint L2 norm is at most max_norm. Returns the
// pre-clip norm.
double clip_grad_norm(const ParameterList &params, double max_norm);
double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps, bool enabled);

// ---- checkpoints -----------------------------------------------------------

// FNV-1a over names, shapes and payload bytes.
std::uint64_t parameter_checksum(const ConstParameterList &params);

void save_checkpoint(const std::string &path, const ConstParameterList &params);
// Returns parameters in file order; duplicate names are a FormatError.
std::vector<Parameter> load_checkpoint(const std::string &path);

// Copies tensors into `params` by name; missing names or shape mismatches are
// a FormatError. Extra tensors are ignored.
void load_into(const ParameterList &params, std::span<const Parameter> tensors);

// Throws ConfigError if two parameters share a name.
void check_unique_names(const ConstParameterList &params);

} // namespace streamgate
