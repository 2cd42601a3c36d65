#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "selftrain/errors.hpp"
#include "selftrain/numerics/autograd.hpp"

namespace selftrain::numerics {

struct GradCheckOptions {
    double eps = 1e-5;
    // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
    double magnitude_floor = 1e-3;
};

// Compares backward() against central differences for every element of every
// input tensor and returns the worst relative error. `fn` maps the input
// variables to a scalar loss and must be deterministic.
template <class Fn>
double finite_diff_check(Fn&& fn, const std::vector<Tensor<double>>& point, GradCheckOptions options = {}) {
    auto evaluate = [&](const std::vector<Tensor<double>>& at) {
        NoGradGuard guard;
        std::vector<Variable<double>> inputs;
        for (const auto& t : at) inputs.push_back(constant(t));
        Variable<double> out = fn(inputs);
        if (out.value().numel() != 1) throw ContractError("finite_diff_check: function must be scalar-valued");
        return out.item();
    };

    const double base = evaluate(point);
    if (evaluate(point) != base) {
        throw ContractError("finite_diff_check: function is not deterministic (is dropout active?)");
    }

    std::vector<Variable<double>> leaves;
    for (const auto& t : point) leaves.push_back(parameter(t));
    Variable<double> loss = fn(leaves);
    backward(loss);

    double worst = 0.0;
    std::vector<Tensor<double>> probe = point;
    for (std::size_t t = 0; t < point.size(); ++t) {
        for (std::size_t i = 0; i < point[t].numel(); ++i) {
            const double original = point[t][i];
            probe[t][i] = original + options.eps;
            const double plus = evaluate(probe);
            probe[t][i] = original - options.eps;
            const double minus = evaluate(probe);
            probe[t][i] = original;
            const double numeric = (plus - minus) / (2.0 * options.eps);
            const double analytic = leaves[t].grad()[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), options.magnitude_floor});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace selftrain::numerics
