#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "selftrain/data/augment.hpp"
#include "selftrain/data/dataset.hpp"
#include "selftrain/data/mixup.hpp"
#include "selftrain/errors.hpp"
#include "selftrain/eval/suite.hpp"
#include "selftrain/nn/loss.hpp"
#include "selftrain/nn/network.hpp"
#include "selftrain/numerics/adam.hpp"
#include "selftrain/train/config.hpp"
#include "selftrain/train/run_log.hpp"

namespace selftrain::train {

using data::Dataset;
using nn::Network;
using numerics::RngStream;

// Stream tags under a run's root stream. Teacher and student share the labeled
// and dropout tags so a student with no pseudo labels replays teacher training.
namespace streams {
inline constexpr std::uint64_t kRoot = 0x7EAC;
inline constexpr std::uint64_t kLabeled = 0x100;
inline constexpr std::uint64_t kPseudo = 0x200;
inline constexpr std::uint64_t kUnlabeled = 0x300;
inline constexpr std::uint64_t kDropout = 0x400;
inline constexpr std::uint64_t kStudentDropout = 0x500;
inline constexpr std::uint64_t kFilter = 0x600;
}  // namespace streams

inline RngStream run_stream(std::uint64_t seed) { return RngStream(seed, streams::kRoot); }

inline Network<float> make_network(const TrainConfig& cfg, std::uint64_t seed) {
    return Network<float>(cfg.network_config(), numerics::splitmix64(seed ^ 0x1417ULL));
}

// Seed for generation g of an iterated strategy.
inline std::uint64_t generation_seed(std::uint64_t seed, std::size_t generation) {
    return numerics::splitmix64(seed ^ numerics::splitmix64(0x6E57ULL + generation));
}

struct TrainResult {
    Network<float> network;
    RunLog log;
};

namespace detail {

struct Batch {
    std::vector<std::size_t> rows;
    Tensor<float> inputs;   // noised
    Tensor<float> targets;  // mixed alongside the inputs; empty for unlabeled sources
};

// Batches from one sample pool with their own sampler, augmentation and mixup streams.
class Source {
public:
    Source(const Tensor<float>& inputs, Tensor<float> targets, std::size_t batch, const RngStream& root,
           std::uint64_t tag)
        : inputs_(&inputs),
          targets_(std::move(targets)),
          sampler_(inputs.dim(0), batch, root.derive(tag)),
          augment_rng_(root.derive(tag + 1)),
          mixup_rng_(root.derive(tag + 2)) {}

    std::vector<std::size_t> next_rows() { return sampler_.next(); }

    Tensor<float> clean(const std::vector<std::size_t>& rows) const { return numerics::gather_rows(*inputs_, rows); }

    Batch draw(const TrainConfig& cfg, bool allow_mixup = true) {
        Batch b;
        b.rows = next_rows();
        b.inputs = clean(b.rows);
        data::augment_batch(b.inputs, cfg.augment, augment_rng_);
        if (targets_.rank() == 2) {
            b.targets = numerics::gather_rows(targets_, b.rows);
            if (allow_mixup && cfg.mixup_alpha > 0.0 && b.rows.size() >= 2) {
                auto mixed = data::mixup(b.inputs, b.targets, cfg.mixup_alpha, mixup_rng_);
                b.inputs = std::move(mixed.inputs);
                b.targets = std::move(mixed.labels);
            }
        }
        return b;
    }

    const Tensor<float>& targets() const noexcept { return targets_; }

private:
    const Tensor<float>* inputs_;
    Tensor<float> targets_;
    data::BatchSampler sampler_;
    RngStream augment_rng_;
    RngStream mixup_rng_;
};

inline void require_labeled(const Dataset& ds, const char* what) {
    if (ds.empty()) throw DataError(std::string(what) + " is empty");
    if (!ds.fully_labeled()) throw DataError(std::string(what) + " contains unlabeled samples");
}

inline void require_finite(double loss, long step) {
    if (!std::isfinite(loss)) throw DivergenceError("training diverged: loss is " + std::to_string(loss), step);
}

// Validation cadence, best-checkpoint snapshot, early stopping and the run log.
class Tracker {
public:
    Tracker(std::string strategy, const TrainConfig& cfg, const Dataset* val, std::uint64_t seed,
            const std::string& config_text, long total_steps, long step_offset = 0)
        : cfg_(cfg), val_(val), total_steps_(total_steps), offset_(step_offset) {
        if (val_ != nullptr) require_labeled(*val_, "validation set");
        log.strategy = std::move(strategy);
        log.seed = seed;
        log.config_hash = fnv1a_hex(config_text);
        log.steps.reserve(static_cast<std::size_t>(total_steps));
    }

    void record(long step, double lr, double loss, double aux = std::numeric_limits<double>::quiet_NaN()) {
        require_finite(loss, offset_ + step);
        log.steps.push_back({offset_ + step, lr, loss, aux});
    }

    // Call after step `step` (0-based); returns true when training should stop.
    bool after_step(long step, const Network<float>& net) {
        const long done = offset_ + step + 1;
        if (val_ == nullptr) return false;
        if (done % cfg_.eval_every != 0 && step + 1 != total_steps_) return false;
        const double f1 = eval::macro_f1_on(net, *val_);
        log.val_curve.emplace_back(done, f1);
        if (!best_ || f1 > log.best_val_f1) {
            best_.emplace(net);
            log.best_val_f1 = f1;
            log.best_step = done;
            stale_ = 0;
        } else {
            ++stale_;
        }
        return cfg_.patience > 0 && stale_ >= cfg_.patience;
    }

    Network<float> finish(Network<float> last, long steps_done) {
        if (best_) return std::move(*best_);
        log.best_step = offset_ + steps_done;
        return last;
    }

    RunLog log;

private:
    const TrainConfig& cfg_;
    const Dataset* val_;
    long total_steps_;
    long offset_;
    std::optional<Network<float>> best_;
    long stale_ = 0;
};

// Sum over parts of CE(logits_part, targets_part) after one train-mode pass over
// the concatenated inputs.
inline numerics::Variable<float> summed_ce(Network<float>& net, const std::vector<const Batch*>& parts,
                                           RngStream& dropout_rng) {
    Tensor<float> x = parts[0]->inputs;
    for (std::size_t i = 1; i < parts.size(); ++i) x = numerics::concat_rows(x, parts[i]->inputs);
    auto logits = net.logits(x, nn::Mode::train, true, &dropout_rng);
    if (parts.size() == 1) return nn::cross_entropy_with_logits(logits, parts[0]->targets);
    numerics::Variable<float> loss;
    std::size_t offset = 0;
    for (const Batch* p : parts) {
        const std::size_t n = p->inputs.dim(0);
        auto ce = nn::cross_entropy_with_logits(numerics::slice_rows(logits, offset, offset + n), p->targets);
        loss = loss.defined() ? numerics::add(loss, ce) : ce;
        offset += n;
    }
    return loss;
}

inline void descend(const numerics::Variable<float>& loss, std::vector<numerics::Variable<float>>& params,
                    numerics::AdamState<float>& adam, double lr, long step) {
    require_finite(static_cast<double>(loss.item()), step);
    numerics::backward(loss);
    try {
        numerics::adam_step(std::span<numerics::Variable<float>>(params), adam, lr);
    } catch (const PoisonedGradientError& e) {
        throw PoisonedGradientError(e.what(), step);
    }
}

// Supervised loop on a labeled source, optionally joined by a pseudo-labeled one.
inline TrainResult fit(Network<float> net, const std::string& strategy, const Dataset* labeled,
                       std::size_t labeled_batch, const Tensor<float>* pseudo_inputs, const Tensor<float>* pseudo_targets,
                       std::size_t pseudo_batch, const Dataset* val, const TrainConfig& cfg, std::uint64_t seed,
                       long steps, const std::string& config_text, long step_offset = 0) {
    const RngStream root = run_stream(seed);
    std::optional<Source> lsrc, psrc;
    if (labeled != nullptr) {
        lsrc.emplace(labeled->inputs, nn::one_hot<float>(labeled->labels, labeled->num_classes), labeled_batch, root,
                     streams::kLabeled);
    }
    if (pseudo_inputs != nullptr && pseudo_inputs->dim(0) > 0) {
        psrc.emplace(*pseudo_inputs, *pseudo_targets, pseudo_batch, root, streams::kPseudo);
    }
    if (!lsrc && !psrc) throw ContractError(strategy + ": nothing to train on");
    RngStream dropout_rng = root.derive(streams::kDropout);
    auto params = net.parameters();
    numerics::AdamState<float> adam;
    Tracker tracker(strategy, cfg, val, seed, config_text, steps, step_offset);
    long step = 0;
    for (; step < steps; ++step) {
        std::vector<Batch> batches;
        if (lsrc) batches.push_back(lsrc->draw(cfg));
        if (psrc) batches.push_back(psrc->draw(cfg));
        std::vector<const Batch*> parts;
        for (const auto& b : batches) parts.push_back(&b);
        const double lr = numerics::lr_at(cfg.schedule, step_offset + step);
        net.zero_grad();
        auto loss = summed_ce(net, parts, dropout_rng);
        tracker.record(step, lr, loss.item());
        descend(loss, params, adam, lr, step_offset + step);
        if (tracker.after_step(step, net)) {
            ++step;
            break;
        }
    }
    auto best = tracker.finish(std::move(net), step);
    return {std::move(best), std::move(tracker.log)};
}

}  // namespace detail
}  // namespace selftrain::train
