#pragma once

#include <cmath>
#include <span>
#include <string>

#include "selftrain/errors.hpp"
#include "selftrain/numerics/autograd.hpp"

namespace selftrain::nn {

using numerics::Tensor;
using numerics::Variable;

inline constexpr double kLogClamp = 1e-12;

template <class Real>
Tensor<Real> softmax_with_temperature(const Tensor<Real>& logits, double temperature) {
    numerics::detail::require_temperature(temperature);
    if (logits.rank() != 2) throw DimensionError("softmax expects [N,C] logits, got " + numerics::shape_string(logits.shape()));
    Tensor<Real> out(logits.shape());
    numerics::detail::softmax_rows(logits, static_cast<Real>(temperature), out);
    return out;
}

namespace detail {
// Rows with zero weight are not checked: they carry no loss.
template <class Real>
void require_distribution_rows(const Tensor<Real>& target, std::span<const Real> weights = {}) {
    if (target.rank() != 2) throw DimensionError("targets must be [N,C], got " + numerics::shape_string(target.shape()));
    for (std::size_t r = 0; r < target.dim(0); ++r) {
        if (!weights.empty() && weights[r] == Real(0)) continue;
        double total = 0.0;
        for (std::size_t c = 0; c < target.dim(1); ++c) {
            const double v = target.at(r, c);
            if (v < 0.0) throw ContractError("target row " + std::to_string(r) + " has a negative entry");
            total += v;
        }
        if (std::abs(total - 1.0) > 1e-4) {
            throw ContractError("target row " + std::to_string(r) + " sums to " + std::to_string(total) +
                                ", not a distribution");
        }
    }
}
}  // namespace detail

// Mean over the batch of -sum_c target * log(max(prediction, 1e-12)).
template <class Real>
Variable<Real> cross_entropy(const Variable<Real>& probabilities, const Tensor<Real>& target) {
    numerics::detail::require_same_shape("cross_entropy", probabilities.value(), target);
    detail::require_distribution_rows(target);
    const auto n = static_cast<Real>(target.dim(0));
    auto logp = numerics::log_clamped(probabilities, static_cast<Real>(kLogClamp));
    return numerics::scale(numerics::sum(numerics::mul(logp, numerics::constant(target))), Real(-1) / n);
}

// Cross-entropy of softmax(logits / T) against soft targets, computed through
// log-softmax. With `row_weights`, returns sum_n w_n CE_n / sum_n w_n; an all-zero
// weight vector yields a constant zero.
template <class Real>
Variable<Real> cross_entropy_with_logits(const Variable<Real>& logits, const Tensor<Real>& target,
                                         Real temperature = Real(1), std::span<const Real> row_weights = {}) {
    numerics::detail::require_same_shape("cross_entropy_with_logits", logits.value(), target);
    if (!row_weights.empty() && row_weights.size() != target.dim(0)) {
        throw DimensionError("row weight count does not match batch size");
    }
    detail::require_distribution_rows(target, row_weights);
    Tensor<Real> weighted = target;
    Real total = static_cast<Real>(target.dim(0));
    if (!row_weights.empty()) {
        total = 0;
        const std::size_t cols = target.dim(1);
        for (std::size_t r = 0; r < target.dim(0); ++r) {
            total += row_weights[r];
            for (std::size_t c = 0; c < cols; ++c) weighted.at(r, c) *= row_weights[r];
        }
        if (total == Real(0)) return numerics::constant(Tensor<Real>::scalar(Real(0)));
    }
    auto logp = numerics::log_softmax(logits, temperature);
    return numerics::scale(numerics::sum(numerics::mul(logp, numerics::constant(std::move(weighted)))),
                           Real(-1) / total);
}

template <class Real>
Tensor<Real> one_hot(std::span<const int> labels, std::size_t num_classes) {
    Tensor<Real> out(numerics::Shape{labels.size(), num_classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw ContractError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(num_classes) + ")");
        }
        out.at(i, static_cast<std::size_t>(labels[i])) = Real(1);
    }
    return out;
}

template <class Real>
std::vector<int> argmax_rows(const Tensor<Real>& m) {
    std::vector<int> out(m.dim(0));
    for (std::size_t r = 0; r < m.dim(0); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < m.dim(1); ++c)
            if (m.at(r, c) > m.at(r, best)) best = c;
        out[r] = static_cast<int>(best);
    }
    return out;
}

}  // namespace selftrain::nn
