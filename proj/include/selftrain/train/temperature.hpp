#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "selftrain/data/dataset.hpp"
#include "selftrain/errors.hpp"
#include "selftrain/nn/network.hpp"

namespace selftrain::train {

// 0.80, 0.81, ..., 2.00 (1.00 included exactly).
inline std::vector<double> default_temperature_grid() {
    std::vector<double> grid;
    for (int i = 80; i <= 200; ++i) grid.push_back(static_cast<double>(i) / 100.0);
    return grid;
}

// Mean negative log-likelihood of softmax(logits / T) at the true labels, in double.
template <class Real>
double temperature_nll(const numerics::Tensor<Real>& logits, std::span<const int> labels, double temperature) {
    numerics::detail::require_temperature(temperature);
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) throw DimensionError("temperature_nll: shape mismatch");
    if (labels.empty()) throw ContractError("temperature_nll needs at least one sample");
    const std::size_t cols = logits.dim(1);
    double total = 0.0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= cols) throw ContractError("label out of range");
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cols; ++c) peak = std::max(peak, static_cast<double>(logits.at(r, c)) / temperature);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += std::exp(static_cast<double>(logits.at(r, c)) / temperature - peak);
        total += peak + std::log(z) - static_cast<double>(logits.at(r, static_cast<std::size_t>(labels[r]))) / temperature;
    }
    return total / static_cast<double>(labels.size());
}

struct TemperatureFit {
    double temperature = 1.0;
    double nll = 0.0;
    double nll_at_one = 0.0;
};

// Grid search for the temperature minimizing validation NLL. T = 1 is always a
// candidate, so the fitted NLL never exceeds the NLL at T = 1. Ties keep the
// earlier grid point.
template <class Real>
TemperatureFit fit_temperature(const numerics::Tensor<Real>& logits, std::span<const int> labels,
                               std::vector<double> grid = default_temperature_grid()) {
    if (std::find(grid.begin(), grid.end(), 1.0) == grid.end()) grid.push_back(1.0);
    TemperatureFit out;
    out.nll_at_one = temperature_nll(logits, labels, 1.0);
    out.nll = std::numeric_limits<double>::infinity();
    for (double t : grid) {
        const double nll = t == 1.0 ? out.nll_at_one : temperature_nll(logits, labels, t);
        if (nll < out.nll) {
            out.nll = nll;
            out.temperature = t;
        }
    }
    return out;
}

inline TemperatureFit fit_temperature(const nn::Network<float>& net, const data::Dataset& validation,
                                      std::vector<double> grid = default_temperature_grid()) {
    if (validation.empty() || !validation.fully_labeled()) {
        throw ContractError("temperature fitting needs a non-empty, fully labeled validation set");
    }
    return fit_temperature(net.predict_logits(validation.inputs), validation.labels, std::move(grid));
}

}  // namespace selftrain::train
