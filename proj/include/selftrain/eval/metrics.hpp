#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "selftrain/errors.hpp"

namespace selftrain::eval {

// counts[true][predicted]
struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(std::size_t classes = 0) : num_classes(classes), counts(classes * classes, 0) {}

    std::uint64_t& at(std::size_t truth, std::size_t predicted) { return counts[truth * num_classes + predicted]; }
    std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * num_classes + predicted]; }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto c : counts) t += c;
        return t;
    }

    std::uint64_t support(std::size_t cls) const {
        std::uint64_t t = 0;
        for (std::size_t p = 0; p < num_classes; ++p) t += at(cls, p);
        return t;
    }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels,
                                 std::size_t num_classes) {
    if (predictions.size() != labels.size()) {
        throw ContractError("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                            std::to_string(labels.size()) + " labels");
    }
    ConfusionMatrix m(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int t = labels[i], p = predictions[i];
        if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= num_classes || static_cast<std::size_t>(p) >= num_classes) {
            throw ContractError("confusion: class index outside [0, " + std::to_string(num_classes) + ") at sample " +
                                std::to_string(i));
        }
        ++m.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
    }
    return m;
}

// F1 = 2PR / (P + R), 0 when P + R = 0.
inline std::vector<double> per_class_f1(const ConfusionMatrix& m) {
    std::vector<double> f1(m.num_classes, 0.0);
    for (std::size_t c = 0; c < m.num_classes; ++c) {
        double predicted = 0.0;
        for (std::size_t t = 0; t < m.num_classes; ++t) predicted += static_cast<double>(m.at(t, c));
        const double tp = static_cast<double>(m.at(c, c));
        const double actual = static_cast<double>(m.support(c));
        const double precision = predicted > 0 ? tp / predicted : 0.0;
        const double recall = actual > 0 ? tp / actual : 0.0;
        f1[c] = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    return f1;
}

// Unweighted mean of per-class F1 over the classes that occur in the ground
// truth; classes with zero support are left out of the mean.
inline double macro_f1(const ConfusionMatrix& m) {
    const auto f1 = per_class_f1(m);
    double total = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < m.num_classes; ++c) {
        if (m.support(c) == 0) continue;
        total += f1[c];
        ++present;
    }
    if (present == 0) throw UndefinedMetricError("macro F1 is undefined: no class has ground-truth samples");
    return total / static_cast<double>(present);
}

inline double macro_f1(std::span<const int> predictions, std::span<const int> labels, std::size_t num_classes) {
    return macro_f1(confusion(predictions, labels, num_classes));
}

}  // namespace selftrain::eval
