#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "selftrain/errors.hpp"
#include "selftrain/numerics/rng.hpp"
#include "selftrain/numerics/tensor.hpp"

namespace selftrain::data {

using numerics::RngStream;
using numerics::Tensor;

inline constexpr double kDefaultMixupAlpha = 0.2;

struct MixedBatch {
    Tensor<float> inputs;
    Tensor<float> labels;
    double lambda = 1.0;
};

// out_i = lambda * x_i + (1 - lambda) * x_{partner[i]}, labels likewise.
inline MixedBatch mix_pairs(const Tensor<float>& inputs, const Tensor<float>& labels, double lambda,
                            std::span<const std::size_t> partner) {
    const std::size_t n = inputs.dim(0);
    if (labels.dim(0) != n || partner.size() != n) throw DimensionError("mixup: batch sizes disagree");
    MixedBatch out{Tensor<float>(inputs.shape()), Tensor<float>(labels.shape()), lambda};
    const auto l = static_cast<float>(lambda);
    auto blend = [&](const Tensor<float>& src, Tensor<float>& dst) {
        const std::size_t stride = src.row_size();
        for (std::size_t i = 0; i < n; ++i) {
            const float* a = src.data() + i * stride;
            const float* b = src.data() + partner[i] * stride;
            float* d = dst.data() + i * stride;
            for (std::size_t j = 0; j < stride; ++j) d[j] = l * a[j] + (1.0f - l) * b[j];
        }
    };
    blend(inputs, out.inputs);
    blend(labels, out.labels);
    return out;
}

// Draws lambda ~ Beta(alpha, alpha) and a random partner permutation.
inline MixedBatch mixup(const Tensor<float>& inputs, const Tensor<float>& labels, double alpha, RngStream& rng) {
    if (!(alpha > 0.0)) throw ConfigError("mixup alpha must be positive, got " + std::to_string(alpha));
    if (inputs.rank() == 0 || inputs.dim(0) < 2) throw ContractError("mixup needs a batch of at least 2");
    const double lambda = rng.beta(alpha, alpha);
    const auto partner = rng.permutation(inputs.dim(0));
    return mix_pairs(inputs, labels, lambda, partner);
}

}  // namespace selftrain::data
