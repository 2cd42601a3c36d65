#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "selftrain/errors.hpp"
#include "selftrain/eval/metrics.hpp"
#include "selftrain/numerics/rng.hpp"

namespace selftrain::eval {

enum class ResampleUnit { sample, group };

struct BootstrapOptions {
    std::size_t resamples = 1000;
    double level = 0.95;
    std::uint64_t seed = 0;
    ResampleUnit unit = ResampleUnit::sample;
};

struct BootstrapInterval {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t skipped = 0;  // resamples where macro F1 was undefined
};

// Linear interpolation between order statistics.
inline double percentile(std::vector<double> sorted, double q) {
    std::sort(sorted.begin(), sorted.end());
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Percentile bootstrap interval for macro F1. Resample b draws from the stream
// derived from (seed, b). With unit == group, whole groups are resampled.
inline BootstrapInterval bootstrap_ci(std::span<const int> predictions, std::span<const int> labels,
                                      std::size_t num_classes, const BootstrapOptions& options,
                                      std::span<const std::int64_t> groups = {}) {
    if (options.resamples < 100) throw ContractError("bootstrap needs at least 100 resamples");
    if (!(options.level > 0.0 && options.level < 1.0)) throw ContractError("confidence level must be in (0, 1)");
    if (predictions.size() != labels.size()) throw ContractError("bootstrap: predictions and labels differ in length");
    const std::size_t n = labels.size();

    std::vector<std::vector<std::size_t>> clusters;
    if (options.unit == ResampleUnit::group) {
        if (groups.size() != n) throw ContractError("group resampling needs one group id per sample");
        std::map<std::int64_t, std::size_t> index;
        for (std::size_t i = 0; i < n; ++i) {
            auto [it, inserted] = index.emplace(groups[i], clusters.size());
            if (inserted) clusters.emplace_back();
            clusters[it->second].push_back(i);
        }
    }

    std::vector<double> stats;
    stats.reserve(options.resamples);
    BootstrapInterval out;
    const numerics::RngStream root(options.seed, 0xB007);
    for (std::size_t b = 0; b < options.resamples; ++b) {
        numerics::RngStream rng = root.derive(b);
        ConfusionMatrix m(num_classes);
        auto add = [&](std::size_t i) {
            const int t = labels[i], p = predictions[i];
            if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= num_classes ||
                static_cast<std::size_t>(p) >= num_classes) {
                throw ContractError("bootstrap: class index out of range");
            }
            ++m.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
        };
        if (options.unit == ResampleUnit::group) {
            for (std::size_t k = 0; k < clusters.size(); ++k)
                for (auto i : clusters[rng.uniform_index(clusters.size())]) add(i);
        } else {
            for (std::size_t k = 0; k < n; ++k) add(rng.uniform_index(n));
        }
        try {
            stats.push_back(macro_f1(m));
        } catch (const UndefinedMetricError&) {
            ++out.skipped;
        }
    }
    if (stats.empty()) throw UndefinedMetricError("macro F1 undefined in every bootstrap resample");
    const double tail = (1.0 - options.level) / 2.0;
    out.lower = percentile(stats, tail);
    out.upper = percentile(stats, 1.0 - tail);
    return out;
}

}  // namespace selftrain::eval
