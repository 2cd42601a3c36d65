#pragma once

#include <cmath>

#include "selftrain/errors.hpp"
#include "selftrain/nn/loss.hpp"
#include "selftrain/numerics/autograd.hpp"

namespace selftrain::train {

using numerics::Tensor;
using numerics::Variable;

// Mean over rows of -sum_c p log p.
template <class Real>
Variable<Real> conditional_entropy(const Variable<Real>& probabilities) {
    numerics::detail::require_rank("conditional_entropy", probabilities.value(), 2);
    const auto n = static_cast<Real>(probabilities.dim(0));
    auto logp = numerics::log_clamped(probabilities, static_cast<Real>(nn::kLogClamp));
    return numerics::scale(numerics::sum(numerics::mul(probabilities, logp)), Real(-1) / n);
}

// KL(uniform || mean prediction) = sum_c (1/C) ln((1/C) / pbar_c), pbar clamped at 1e-12.
template <class Real>
Variable<Real> class_balance_loss(const Variable<Real>& probabilities) {
    numerics::detail::require_rank("class_balance_loss", probabilities.value(), 2);
    const auto classes = static_cast<Real>(probabilities.dim(1));
    auto log_mean = numerics::log_clamped(numerics::column_mean(probabilities), static_cast<Real>(nn::kLogClamp));
    return numerics::add_scalar(numerics::scale(numerics::sum(log_mean), Real(-1) / classes), -std::log(classes));
}

template <class Real>
double conditional_entropy(const Tensor<Real>& probabilities) {
    return static_cast<double>(conditional_entropy(numerics::constant(probabilities)).item());
}

template <class Real>
double class_balance_loss(const Tensor<Real>& probabilities) {
    return static_cast<double>(class_balance_loss(numerics::constant(probabilities)).item());
}

}  // namespace selftrain::train
