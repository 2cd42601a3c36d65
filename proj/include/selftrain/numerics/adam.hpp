#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "selftrain/errors.hpp"
#include "selftrain/numerics/autograd.hpp"

namespace selftrain::numerics {

// Piecewise-constant decay: base_lr * decay_factor^floor(step / decay_every).
struct LrSchedule {
    double base_lr = 1e-4;
    double decay_factor = 0.5;
    long decay_every = 10'000;

    void validate() const {
        if (!(base_lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (!(decay_factor > 0.0) || decay_factor > 1.0) throw ConfigError("lr decay factor must be in (0, 1]");
        if (decay_every <= 0) throw ConfigError("lr decay interval must be positive");
    }
};

inline double lr_at(const LrSchedule& schedule, long step) {
    if (step < 0) throw ContractError("lr_at: negative step");
    return schedule.base_lr * std::pow(schedule.decay_factor, static_cast<double>(step / schedule.decay_every));
}

template <class Real>
struct AdamState {
    std::vector<Tensor<Real>> first_moment;
    std::vector<Tensor<Real>> second_moment;
    long step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// One bias-corrected Adam update over `params` using their accumulated gradients.
// A parameter without a gradient buffer is treated as having zero gradient.
// Non-finite gradients abort before anything is modified.
template <class Real>
void adam_step(std::span<Variable<Real>> params, AdamState<Real>& state, double lr) {
    if (!(lr > 0.0)) throw ContractError("adam_step: learning rate must be positive");
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.shape());
            state.second_moment.emplace_back(p.shape());
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                             " tensors, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.first_moment[i].shape() != params[i].shape()) {
            throw DimensionError("adam_step: moment shape " + shape_string(state.first_moment[i].shape()) +
                                 " does not match parameter " + shape_string(params[i].shape()));
        }
        if (params[i].has_grad() && !params[i].grad().all_finite()) {
            throw PoisonedGradientError("non-finite gradient in parameter " + std::to_string(i), state.step_count + 1);
        }
    }

    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const Real b1 = static_cast<Real>(state.beta1);
    const Real b2 = static_cast<Real>(state.beta2);
    const Real c1 = static_cast<Real>(1.0 - std::pow(state.beta1, t));
    const Real c2 = static_cast<Real>(1.0 - std::pow(state.beta2, t));
    const Real eps = static_cast<Real>(state.epsilon);
    const Real rate = static_cast<Real>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params[i].mutable_value();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        const bool has = params[i].has_grad();
        for (std::size_t j = 0; j < w.numel(); ++j) {
            const Real g = has ? params[i].grad()[j] : Real(0);
            m[j] = b1 * m[j] + (Real(1) - b1) * g;
            v[j] = b2 * v[j] + (Real(1) - b2) * g * g;
            const Real mhat = m[j] / c1;
            const Real vhat = v[j] / c2;
            w[j] -= rate * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace selftrain::numerics
