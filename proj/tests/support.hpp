#pragma once

// Shared helpers for the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "streamgate/numerics.hpp"

namespace streamgate::testing {

struct GradCheckResult {
    double worst_rel = 0.0;
    std::string worst_name;
    std::size_t checked = 0;
};

// Central finite differences against the tape gradient. At most
// `per_tensor` entries of each parameter are probed (all when 0). An entry
// passes when |analytic - numeric| <= rel * max(|analytic|, |numeric|) + abs_floor;
// worst_rel reports the largest excess ratio, so <= 1 means every entry passed.
inline GradCheckResult gradient_check(const ParameterList &params, const std::function<Var(Tape &)> &loss_fn,
                                      std::uint64_t seed, std::size_t per_tensor = 0, double step = 1e-5,
                                      double rel = 1e-4, double abs_floor = 1e-8) {
    zero_grad(params);
    {
        Tape tape(true);
        tape.backward(loss_fn(tape));
    }
    std::vector<std::vector<double>> analytic;
    for (auto *p : params) analytic.push_back(p->value.grad ? *p->value.grad : std::vector<double>(p->value.size(), 0.0));
    zero_grad(params);

    auto eval = [&] {
        Tape tape(false);
        return loss_fn(tape).value().item();
    };
    Rng rng(seed);
    GradCheckResult out;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto &v = params[pi]->value.data;
        std::vector<std::size_t> idx;
        if (per_tensor == 0 || per_tensor >= v.size()) {
            for (std::size_t i = 0; i < v.size(); ++i) idx.push_back(i);
        } else {
            for (std::size_t i = 0; i < per_tensor; ++i) idx.push_back(rng.below(v.size()));
        }
        for (std::size_t i : idx) {
            const double orig = v[i];
            v[i] = orig + step;
            const double up = eval();
            v[i] = orig - step;
            const double down = eval();
            v[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[pi][i];
            const double ratio = std::abs(a - numeric) / (rel * std::max(std::abs(a), std::abs(numeric)) + abs_floor);
            ++out.checked;
            if (ratio > out.worst_rel) {
                out.worst_rel = ratio;
                out.worst_name = params[pi]->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return out;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string &tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("streamgate_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;
    std::string file(const std::string &name) const { return (path_ / name).string(); }
    const std::filesystem::path &path() const { return path_; }

  private:
    std::filesystem::path path_;
};

inline Tensor random_tensor(Shape shape, Rng &rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto &x : t.data) x = rng.uniform(lo, hi);
    return t;
}

inline Parameter random_param(const std::string &name, Shape shape, Rng &rng) {
    return Parameter(name, random_tensor(std::move(shape), rng));
}

} // namespace streamgate::testing
