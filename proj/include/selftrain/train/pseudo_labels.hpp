#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "selftrain/errors.hpp"
#include "selftrain/log.hpp"
#include "selftrain/nn/loss.hpp"
#include "selftrain/nn/mc_dropout.hpp"
#include "selftrain/nn/network.hpp"
#include "selftrain/train/config.hpp"

namespace selftrain::train {

using numerics::Shape;
using numerics::Tensor;

// Teacher predictions on unlabeled inputs. `targets` rows are distributions:
// softened probabilities, or one-hot argmax when hard labels are requested.
struct PseudoLabelSet {
    Tensor<float> inputs;   // [M, C, H, W]
    Tensor<float> targets;  // [M, K]
    std::vector<double> confidence;
    std::vector<std::size_t> source_index;  // row in the unlabeled pool
    double temperature = 1.0;

    std::size_t size() const noexcept { return confidence.size(); }
    bool empty() const noexcept { return confidence.empty(); }

    // Keeps the listed rows, in the given order.
    PseudoLabelSet select(const std::vector<std::size_t>& rows) const {
        PseudoLabelSet out;
        out.temperature = temperature;
        if (rows.empty()) {
            out.inputs = Tensor<float>(empty_shape(inputs));
            out.targets = Tensor<float>(empty_shape(targets));
            return out;
        }
        out.inputs = numerics::gather_rows(inputs, rows);
        out.targets = numerics::gather_rows(targets, rows);
        for (auto r : rows) {
            out.confidence.push_back(confidence[r]);
            out.source_index.push_back(source_index[r]);
        }
        return out;
    }

private:
    static Shape empty_shape(const Tensor<float>& t) {
        Shape s = t.shape();
        if (!s.empty()) s[0] = 0;
        return s;
    }
};

// One entry per input. Confidence is the largest softened probability.
inline PseudoLabelSet generate_pseudo_labels(const nn::Network<float>& teacher, const Tensor<float>& inputs,
                                             double temperature, bool soft_labels = true) {
    numerics::detail::require_temperature(temperature);
    PseudoLabelSet out;
    out.temperature = temperature;
    const std::size_t classes = teacher.config().num_classes;
    const std::size_t n = inputs.rank() ? inputs.dim(0) : 0;
    out.inputs = inputs;
    if (n == 0) {
        out.targets = Tensor<float>(Shape{0, classes});
        return out;
    }
    auto probs = nn::softmax_with_temperature(teacher.predict_logits(inputs), temperature);
    out.confidence.resize(n);
    out.source_index.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        float best = probs.at(i, 0);
        std::size_t arg = 0;
        for (std::size_t c = 1; c < classes; ++c) {
            if (probs.at(i, c) > best) {
                best = probs.at(i, c);
                arg = c;
            }
        }
        out.confidence[i] = best;
        out.source_index[i] = i;
        if (!soft_labels) {
            for (std::size_t c = 0; c < classes; ++c) probs.at(i, c) = c == arg ? 1.0f : 0.0f;
        }
    }
    out.targets = std::move(probs);
    return out;
}

inline PseudoLabelSet generate_pseudo_labels(const nn::Network<float>& teacher, const data::UnlabeledSet& pool,
                                             double temperature, bool soft_labels = true) {
    return generate_pseudo_labels(teacher, pool.inputs(), temperature, soft_labels);
}

// Keeps entries whose confidence is at least k, preserving order.
inline PseudoLabelSet filter_confidence(const PseudoLabelSet& pls, double k) {
    if (!(k >= 0.0 && k <= 1.0)) throw DomainError("confidence threshold must be in [0, 1], got " + std::to_string(k));
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < pls.size(); ++i)
        if (pls.confidence[i] >= k) keep.push_back(i);
    return pls.select(keep);
}

// Keeps entries whose MC-dropout uncertainty (temperature 1) is at most the threshold.
inline PseudoLabelSet filter_ups(const nn::Network<float>& teacher, const PseudoLabelSet& pls,
                                 double uncertainty_threshold, std::size_t passes, const numerics::RngStream& rng) {
    if (passes < 2) throw ConfigError("UPS needs at least 2 MC dropout passes, got " + std::to_string(passes));
    if (!(uncertainty_threshold >= 0.0)) throw DomainError("uncertainty threshold must be >= 0");
    if (teacher.config().dropout_rate == 0.0 &&
        uncertainty_threshold < std::numeric_limits<double>::infinity()) {
        warn("teacher has dropout rate 0: every MC dropout uncertainty is 0 and the UPS filter keeps everything");
    }
    if (pls.empty()) return pls;
    const auto mc = nn::mc_dropout_predict(teacher, pls.inputs, passes, rng);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < pls.size(); ++i)
        if (mc.uncertainty[i] <= uncertainty_threshold) keep.push_back(i);
    return pls.select(keep);
}

inline PseudoLabelSet apply_filter(const nn::Network<float>& teacher, const PseudoLabelSet& pls,
                                   const FilterConfig& filter, const numerics::RngStream& rng) {
    filter.validate();
    switch (filter.mode) {
        case FilterMode::confidence: return filter_confidence(pls, filter.confidence_threshold);
        case FilterMode::ups: return filter_ups(teacher, pls, filter.uncertainty_threshold, filter.mc_passes, rng);
        case FilterMode::both:
            return filter_ups(teacher, filter_confidence(pls, filter.confidence_threshold),
                              filter.uncertainty_threshold, filter.mc_passes, rng);
    }
    return pls;
}

}  // namespace selftrain::train
