#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "laconv/tensor.hpp"

// Central finite-difference oracle for reverse-mode gradients. The forward
// functor must rebuild the scalar loss from the captured input tensors; it
// receives a tape only on the analytic pass.
namespace gradcheck {

using laconv::Tape;
using laconv::Tensor;

struct Result {
    double max_rel_err = 0;
    double worst_analytic = 0;
    double worst_numeric = 0;
};

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

template <typename Fwd>
Result check(const std::vector<Tensor<double>*>& inputs, Fwd forward, double step = 1e-3) {
    for (auto* t : inputs) {
        t->set_requires_grad(true);
        t->zero_grad();
    }
    Tape<double> tape;
    Tensor<double> loss = forward(&tape);
    if (loss.numel() != 1) throw laconv::DimError("grad check loss must be scalar");
    loss.grad()[0] = 1.0;
    tape.backward();

    std::vector<std::vector<double>> analytic;
    for (auto* t : inputs) analytic.emplace_back(t->grad().begin(), t->grad().end());

    Result res;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor<double>& t = *inputs[ti];
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            const double saved = t.data()[i];
            t.data()[i] = saved + step;
            const double fp = forward(static_cast<Tape<double>*>(nullptr)).data()[0];
            t.data()[i] = saved - step;
            const double fm = forward(static_cast<Tape<double>*>(nullptr)).data()[0];
            t.data()[i] = saved;
            const double numeric = (fp - fm) / (2 * step);
            const double a = analytic[ti][static_cast<std::size_t>(i)];
            const double e = rel_err(a, numeric);
            if (e > res.max_rel_err) {
                res.max_rel_err = e;
                res.worst_analytic = a;
                res.worst_numeric = numeric;
            }
        }
    }
    return res;
}

}  // namespace gradcheck
