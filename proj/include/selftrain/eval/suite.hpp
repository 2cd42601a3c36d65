#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "selftrain/data/dataset.hpp"
#include "selftrain/errors.hpp"
#include "selftrain/eval/bootstrap.hpp"
#include "selftrain/eval/metrics.hpp"
#include "selftrain/nn/loss.hpp"
#include "selftrain/nn/network.hpp"

namespace selftrain::eval {

using data::Dataset;
using data::SplitTag;

// Report row order for model tags.
inline constexpr std::array<const char*, 9> kModelTags = {"Teacher", "SS+UL", "SS+FT", "NST",   "NST+T",
                                                          "NST+T+U", "MPL",   "MPL+T", "Oracle"};

inline std::string canonical_model_tag(const std::string& name) {
    std::string upper;
    for (char ch : name) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
    if (upper == "ST+FT") upper = "SS+FT";
    for (const char* tag : kModelTags) {
        std::string t(tag);
        std::string tu;
        for (char ch : t) tu.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
        if (tu == upper) return t;
    }
    std::string valid;
    for (const char* tag : kModelTags) valid += std::string(valid.empty() ? "" : ", ") + tag;
    throw ConfigError("unknown model tag '" + name + "'; valid tags: " + valid + " (ST+FT is accepted for SS+FT)");
}

// Position in the report ordering.
inline std::size_t model_rank(const std::string& tag) {
    const auto canonical = canonical_model_tag(tag);
    for (std::size_t i = 0; i < kModelTags.size(); ++i)
        if (canonical == kModelTags[i]) return i;
    return kModelTags.size();
}

struct SplitMetrics {
    SplitTag split = SplitTag::id_test;
    double macro_f1 = 0.0;
    std::vector<double> per_class_f1;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    std::size_t n = 0;
    std::size_t skipped_resamples = 0;
};

struct MetricReport {
    std::string model;
    std::vector<SplitMetrics> splits;

    const SplitMetrics& at(SplitTag tag) const {
        for (const auto& s : splits)
            if (s.split == tag) return s;
        throw ContractError("report for " + model + " has no split " + data::to_string(tag));
    }
};

struct EvalOptions {
    std::size_t resamples = 1000;
    double level = 0.95;
    std::uint64_t seed = 0;
    ResampleUnit unit = ResampleUnit::sample;
};

inline std::vector<int> predict_classes(const nn::Network<float>& net, const numerics::Tensor<float>& inputs) {
    return nn::argmax_rows(net.predict_logits(inputs));
}

// Eval-mode macro F1 on one labeled split.
inline double macro_f1_on(const nn::Network<float>& net, const Dataset& ds) {
    if (!ds.fully_labeled()) throw ContractError("split " + data::to_string(ds.split) + " has unlabeled samples");
    return macro_f1(predict_classes(net, ds.inputs), ds.labels, ds.num_classes);
}

// Scores `net` on every split with a bootstrap interval per split. Eval mode,
// no augmentation; the network is only read.
inline MetricReport evaluate_suite(const nn::Network<float>& net, const std::map<SplitTag, Dataset>& splits,
                                   const EvalOptions& options, const std::string& model) {
    MetricReport report;
    report.model = canonical_model_tag(model);
    for (const auto& [tag, ds] : splits) {
        if (!ds.fully_labeled()) {
            throw ContractError("cannot evaluate on split " + data::to_string(tag) + ": it has unlabeled samples");
        }
        const auto preds = predict_classes(net, ds.inputs);
        const auto m = confusion(preds, ds.labels, ds.num_classes);
        SplitMetrics s;
        s.split = tag;
        s.macro_f1 = macro_f1(m);
        s.per_class_f1 = per_class_f1(m);
        s.n = ds.size();
        BootstrapOptions b{options.resamples, options.level,
                           numerics::splitmix64(options.seed ^ (0x51u + static_cast<std::uint64_t>(tag))), options.unit};
        const auto ci = bootstrap_ci(preds, ds.labels, ds.num_classes, b, ds.groups);
        s.ci_lower = ci.lower;
        s.ci_upper = ci.upper;
        s.skipped_resamples = ci.skipped;
        report.splits.push_back(std::move(s));
    }
    return report;
}

}  // namespace selftrain::eval
