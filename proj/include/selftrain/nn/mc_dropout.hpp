#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "selftrain/errors.hpp"
#include "selftrain/nn/loss.hpp"
#include "selftrain/nn/network.hpp"

namespace selftrain::nn {

inline constexpr std::size_t kDefaultMcPasses = 10;

template <class Real>
struct McDropoutResult {
    Tensor<Real> mean;    // [N,C] mean probabilities over passes
    Tensor<Real> stddev;  // [N,C] population standard deviation over passes
    std::vector<double> uncertainty;  // stddev of each sample's argmax-of-mean class
};

// Monte Carlo dropout: eval-mode batchnorm with dropout forced on. Only the
// dropout mask varies between passes, so the convolutional trunk runs once and
// each pass re-samples the mask in front of the head. Pass p draws from
// rng.derive(p); passes are reduced in index order.
template <class Real>
McDropoutResult<Real> mc_dropout_predict(const Network<Real>& net, const Tensor<Real>& inputs, std::size_t passes,
                                         const RngStream& rng) {
    if (passes < 2) throw ConfigError("mc dropout needs at least 2 passes, got " + std::to_string(passes));
    numerics::NoGradGuard guard;
    const Tensor<Real> feats = net.predict_features(inputs);
    const std::size_t n = feats.dim(0);
    const std::size_t c = net.config().num_classes;

    // Welford accumulation: identical passes give exactly zero spread.
    std::vector<double> mean(n * c, 0.0), m2(n * c, 0.0);
    for (std::size_t p = 0; p < passes; ++p) {
        RngStream stream = rng.derive(p);
        auto logits = net.head(numerics::constant(feats), true, &stream).value();
        auto probs = softmax_with_temperature(logits, 1.0);
        const double count = static_cast<double>(p + 1);
        for (std::size_t i = 0; i < n * c; ++i) {
            const double x = probs[i];
            const double delta = x - mean[i];
            mean[i] += delta / count;
            m2[i] += delta * (x - mean[i]);
        }
    }

    McDropoutResult<Real> out{Tensor<Real>(numerics::Shape{n, c}), Tensor<Real>(numerics::Shape{n, c}), {}};
    const double k = static_cast<double>(passes);
    for (std::size_t i = 0; i < n * c; ++i) {
        out.mean[i] = static_cast<Real>(mean[i]);
        out.stddev[i] = static_cast<Real>(std::sqrt(std::max(0.0, m2[i] / k)));
    }
    const auto top = argmax_rows(out.mean);
    out.uncertainty.resize(n);
    for (std::size_t r = 0; r < n; ++r) out.uncertainty[r] = out.stddev.at(r, static_cast<std::size_t>(top[r]));
    return out;
}

}  // namespace selftrain::nn
