#pragma once

#include "hdn/nn/ops.hpp"

#include <cmath>
#include <functional>
#include <random>

namespace hdn::testing {

using nn::Tensor;
using nn::Var;

inline Tensor<double> random_tensor(nn::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.vec()) v = dist(rng);
    return t;
}

// Reduces a tensor to a scalar through a fixed random projection so every output
// element contributes to the checked gradient.
inline Var<double> project(const Var<double>& y, const Tensor<double>& weights) {
    return nn::external_objective(y, [&weights](const Tensor<double>& v) {
        double s = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * weights[i];
        return std::pair<double, Tensor<double>>{s, weights};
    });
}

// Largest relative error between analytic and central-difference gradients over all
// inputs, with relative error |a-n| / max(1, |a|, |n|).
inline double gradcheck(const std::function<Var<double>(const std::vector<Var<double>>&)>& fn,
                        std::vector<Tensor<double>> inputs, std::mt19937_64& rng, double h = 1e-6) {
    std::vector<Var<double>> vars;
    for (auto& in : inputs) vars.push_back(nn::parameter(in));
    const Var<double> y0 = fn(vars);
    const Tensor<double> weights = random_tensor(y0.shape(), rng);
    project(y0, weights).backward();

    const auto eval = [&](const std::vector<Tensor<double>>& xs) {
        std::vector<Var<double>> cs;
        for (const auto& x : xs) cs.push_back(nn::constant(x));
        const Var<double> y = fn(cs);
        double s = 0.0;
        for (std::size_t i = 0; i < y.value().size(); ++i) s += y.value()[i] * weights[i];
        return s;
    };

    double worst = 0.0;
    for (std::size_t a = 0; a < inputs.size(); ++a) {
        for (std::size_t i = 0; i < inputs[a].size(); ++i) {
            auto plus = inputs;
            auto minus = inputs;
            plus[a][i] += h;
            minus[a][i] -= h;
            const double numeric = (eval(plus) - eval(minus)) / (2 * h);
            const double analytic = vars[a].grad().empty() ? 0.0 : vars[a].grad()[i];
            const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace hdn::testing
