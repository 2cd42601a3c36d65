#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "selftrain/errors.hpp"
#include "selftrain/numerics/rng.hpp"
#include "selftrain/numerics/tensor.hpp"

namespace selftrain::data {

using numerics::RngStream;
using numerics::Shape;
using numerics::Tensor;

enum class SplitTag { train, val, id_test, shift_a, shift_b, shift_c };

inline constexpr SplitTag kAllSplits[] = {SplitTag::train,   SplitTag::val,     SplitTag::id_test,
                                          SplitTag::shift_a, SplitTag::shift_b, SplitTag::shift_c};

inline std::string to_string(SplitTag tag) {
    switch (tag) {
        case SplitTag::train: return "train";
        case SplitTag::val: return "val";
        case SplitTag::id_test: return "id_test";
        case SplitTag::shift_a: return "shift_a";
        case SplitTag::shift_b: return "shift_b";
        case SplitTag::shift_c: return "shift_c";
    }
    return "unknown";
}

inline SplitTag parse_split(const std::string& name) {
    for (SplitTag t : kAllSplits)
        if (to_string(t) == name) return t;
    throw DataError("unknown split '" + name + "'");
}

inline bool is_test_split(SplitTag t) { return t != SplitTag::train && t != SplitTag::val; }

// Samples stored contiguously: inputs [N, channels, height, width], a label per
// sample (kNoLabel when absent) and a group id standing in for the patient.
struct Dataset {
    static constexpr int kNoLabel = -1;

    Tensor<float> inputs;
    std::vector<int> labels;
    std::vector<std::int64_t> groups;
    std::size_t num_classes = 0;
    SplitTag split = SplitTag::train;

    std::size_t size() const { return labels.size(); }
    bool empty() const { return labels.empty(); }
    Shape sample_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }

    bool fully_labeled() const {
        return std::none_of(labels.begin(), labels.end(), [](int l) { return l == kNoLabel; });
    }

    std::set<std::int64_t> group_ids() const { return {groups.begin(), groups.end()}; }

    void validate() const {
        if (inputs.rank() != 4 || inputs.dim(0) != labels.size() || groups.size() != labels.size()) {
            throw DataError("dataset arrays disagree on sample count");
        }
        for (int l : labels) {
            if (l != kNoLabel && (l < 0 || static_cast<std::size_t>(l) >= num_classes)) {
                throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
            }
        }
    }

    Dataset subset(std::span<const std::size_t> rows) const {
        Dataset out;
        out.inputs = numerics::gather_rows(inputs, rows);
        out.num_classes = num_classes;
        out.split = split;
        for (auto r : rows) {
            out.labels.push_back(labels.at(r));
            out.groups.push_back(groups.at(r));
        }
        return out;
    }

    std::vector<int> labels_at(std::span<const std::size_t> rows) const {
        std::vector<int> out;
        out.reserve(rows.size());
        for (auto r : rows) out.push_back(labels[r]);
        return out;
    }
};

// Unlabeled pool D_U. Training code sees inputs and groups only; the original
// labels are kept for post-hoc analysis and reachable solely via
// audit_hidden_labels().
class UnlabeledSet {
public:
    UnlabeledSet() = default;

    static UnlabeledSet strip_labels(Dataset source) {
        UnlabeledSet out;
        out.inputs_ = std::move(source.inputs);
        out.groups_ = std::move(source.groups);
        out.hidden_labels_ = std::move(source.labels);
        out.num_classes_ = source.num_classes;
        return out;
    }

    const Tensor<float>& inputs() const noexcept { return inputs_; }
    const std::vector<std::int64_t>& groups() const noexcept { return groups_; }
    std::size_t size() const noexcept { return groups_.size(); }
    bool empty() const noexcept { return groups_.empty(); }
    std::size_t num_classes() const noexcept { return num_classes_; }

    friend std::vector<int> audit_hidden_labels(const UnlabeledSet& set);
    friend UnlabeledSet with_hidden_labels(UnlabeledSet set, std::vector<int> labels);

private:
    Tensor<float> inputs_;
    std::vector<std::int64_t> groups_;
    std::vector<int> hidden_labels_;
    std::size_t num_classes_ = 0;
};

// Analysis-only access to the labels removed from D_U.
inline std::vector<int> audit_hidden_labels(const UnlabeledSet& set) { return set.hidden_labels_; }

// Replaces the hidden labels (used to audit that training never reads them).
inline UnlabeledSet with_hidden_labels(UnlabeledSet set, std::vector<int> labels) {
    if (labels.size() != set.size()) throw DataError("hidden label count mismatch");
    set.hidden_labels_ = std::move(labels);
    return set;
}

// Group-level split of a labeled training set into D_L and D_U. Groups are
// shuffled with `seed` and the first round(fraction * groups) become labeled.
inline std::pair<Dataset, UnlabeledSet> split_labeled_unlabeled(const Dataset& train, double labeled_fraction,
                                                                std::uint64_t seed) {
    if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
        throw SplitError("labeled fraction must be in (0, 1], got " + std::to_string(labeled_fraction));
    }
    const auto ids = train.group_ids();
    std::vector<std::int64_t> groups(ids.begin(), ids.end());
    const auto labeled_groups = static_cast<std::size_t>(
        std::llround(labeled_fraction * static_cast<double>(groups.size())));
    if (labeled_groups == 0) {
        throw SplitError("labeled fraction " + std::to_string(labeled_fraction) + " of " +
                         std::to_string(groups.size()) + " groups leaves no labeled group");
    }
    RngStream rng(seed, 0x5B1D);
    const auto order = rng.permutation(groups.size());
    std::set<std::int64_t> labeled;
    for (std::size_t i = 0; i < labeled_groups; ++i) labeled.insert(groups[order[i]]);

    std::vector<std::size_t> lrows, urows;
    for (std::size_t i = 0; i < train.size(); ++i) (labeled.count(train.groups[i]) ? lrows : urows).push_back(i);
    return {train.subset(lrows), UnlabeledSet::strip_labels(train.subset(urows))};
}

// Reshuffled-epoch index stream: each epoch is a fresh permutation; batches
// continue across epoch boundaries.
class BatchSampler {
public:
    BatchSampler(std::size_t dataset_size, std::size_t batch_size, RngStream rng)
        : size_(dataset_size), batch_(batch_size), rng_(std::move(rng)) {
        if (batch_size == 0) throw ConfigError("batch size must be positive");
        if (dataset_size == 0) throw DataError("cannot sample batches from an empty dataset");
    }

    std::vector<std::size_t> next() {
        std::vector<std::size_t> out;
        out.reserve(batch_);
        while (out.size() < batch_) {
            if (pos_ == order_.size()) {
                order_ = rng_.permutation(size_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

    std::size_t batch_size() const noexcept { return batch_; }

private:
    std::size_t size_;
    std::size_t batch_;
    RngStream rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

}  // namespace selftrain::data
