#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "selftrain/data/dataset.hpp"
#include "selftrain/errors.hpp"
#include "selftrain/log.hpp"
#include "selftrain/nn/loss.hpp"
#include "selftrain/train/config.hpp"
#include "selftrain/train/loop.hpp"
#include "selftrain/train/losses.hpp"
#include "selftrain/train/pseudo_labels.hpp"

namespace selftrain::train {

using data::UnlabeledSet;

// Supervised training on D_L with augmentation, mixup and dropout; returns the
// best-validation checkpoint (the last one when `val` is null).
inline TrainResult train_teacher(const Dataset& labeled, const Dataset* val, const TrainConfig& cfg,
                                 std::uint64_t seed) {
    cfg.validate();
    detail::require_labeled(labeled, "labeled set");
    return detail::fit(make_network(cfg, seed), "teacher", &labeled, cfg.teacher_batch, nullptr, nullptr, 0, val, cfg,
                       seed, cfg.max_steps, describe(cfg));
}

// Fresh student on D_L plus filtered pseudo labels: each step draws a labeled and
// a pseudo-labeled batch, noises both, and sums the two cross-entropies.
inline TrainResult train_student(const Dataset& labeled, const PseudoLabelSet& pseudo, const Dataset* val,
                                 const TrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    detail::require_labeled(labeled, "labeled set");
    return detail::fit(make_network(cfg, seed), "student", &labeled, cfg.student_labeled_batch,
                       pseudo.empty() ? nullptr : &pseudo.inputs, &pseudo.targets, cfg.student_unlabeled_batch, val,
                       cfg, seed, cfg.max_steps, describe(cfg));
}

struct NstResult {
    Network<float> student;
    std::vector<Network<float>> students;  // one per generation
    std::vector<RunLog> logs;
    GenerationLog generations;
};

// Noisy-student iterations: pseudo-label D_U with the current teacher, filter,
// train a fresh noised student, promote it to teacher.
inline NstResult train_nst(const Network<float>& teacher, const Dataset& labeled, const UnlabeledSet& pool,
                           const Dataset* val, const TrainConfig& cfg, const FilterConfig& filter,
                           std::size_t generations, std::uint64_t seed) {
    cfg.validate();
    filter.validate();
    if (generations == 0) throw ConfigError("NST needs at least one generation");
    NstResult out{teacher, {}, {}, {generations, {}}};
    const Network<float>* current = &teacher;
    for (std::size_t g = 1; g <= generations; ++g) {
        const auto gseed = generation_seed(seed, g);
        auto pls = generate_pseudo_labels(*current, pool, filter.temperature, filter.soft_labels);
        auto kept = apply_filter(*current, pls, filter, RngStream(gseed, streams::kFilter));
        if (kept.empty()) {
            warn("NST generation " + std::to_string(g) +
                 ": no pseudo labels survived filtering; the student trains on labeled data only");
        }
        auto result = train_student(labeled, kept, val, cfg, gseed);
        result.log.strategy = "nst.generation" + std::to_string(g);
        GenerationRecord rec;
        rec.generation = g;
        rec.teacher_ref = g == 1 ? "teacher" : "generation" + std::to_string(g - 1);
        rec.pool_size = pool.size();
        rec.pseudo_labels = kept.size();
        rec.val_macro_f1 = val != nullptr ? eval::macro_f1_on(result.network, *val) : rec.val_macro_f1;
        out.generations.records.push_back(rec);
        out.students.push_back(std::move(result.network));
        out.logs.push_back(std::move(result.log));
        current = &out.students.back();
    }
    out.student = out.students.back();
    return out;
}

struct MplOptions {
    // Multipliers on the scheduled learning rate; 0 freezes that network.
    double student_lr_scale = 1.0;
    double teacher_lr_scale = 1.0;
    // Start the student from teacher_init's weights; false gives a fresh network.
    bool student_from_teacher = true;
};

struct MplResult {
    Network<float> student;
    Network<float> teacher;
    RunLog log;
    RunLog finetune_log;  // empty when the fine-tune phase is disabled
};

namespace detail {
inline double labeled_ce(const Network<float>& net, const Tensor<float>& x, const Tensor<float>& y) {
    numerics::NoGradGuard guard;
    return nn::cross_entropy_with_logits(numerics::constant(net.predict_logits(x)), y).item();
}
}  // namespace detail

// Teacher and student trained together. Per step: the teacher soft-labels an
// unlabeled batch; the student takes one step on those labels; h is the drop in
// the student's labeled loss; the teacher steps on h * CE(T(x_u), sg(yhat)) plus
// its own labeled loss. The last mpl_finetune_fraction of the step budget
// fine-tunes the student on D_L alone. Returns the best-validation student over
// both phases and the last teacher.
inline MplResult train_mpl(const Network<float>& teacher_init, const Dataset& labeled, const UnlabeledSet& pool,
                           const Dataset* val, const TrainConfig& cfg, const FilterConfig& filter, std::uint64_t seed,
                           const MplOptions& options = {}) {
    cfg.validate();
    filter.validate();
    detail::require_labeled(labeled, "labeled set");
    if (pool.empty()) throw DataError("MPL needs a non-empty unlabeled pool");
    if (options.student_lr_scale < 0 || options.teacher_lr_scale < 0) throw ConfigError("lr scales must be >= 0");

    const RngStream root = run_stream(seed);
    Network<float> teacher = teacher_init;
    Network<float> student = options.student_from_teacher ? teacher_init : make_network(cfg, seed);
    const auto labeled_targets = nn::one_hot<float>(labeled.labels, labeled.num_classes);
    detail::Source lsrc(labeled.inputs, labeled_targets, cfg.student_labeled_batch, root, streams::kLabeled);
    detail::Source usrc(pool.inputs(), Tensor<float>(), cfg.student_unlabeled_batch, root, streams::kUnlabeled);
    RngStream teacher_dropout = root.derive(streams::kDropout);
    RngStream student_dropout = root.derive(streams::kStudentDropout);
    const RngStream filter_root = root.derive(streams::kFilter);
    auto teacher_params = teacher.parameters();
    auto student_params = student.parameters();
    numerics::AdamState<float> teacher_adam, student_adam;
    const float temperature = static_cast<float>(filter.temperature);
    const long finetune_steps = static_cast<long>(
        std::llround(cfg.mpl_finetune_fraction * static_cast<double>(cfg.max_steps)));
    const long co_steps = std::max(1L, cfg.max_steps - finetune_steps);
    const auto config_text = describe(cfg) + "|" + describe(filter);
    detail::Tracker tracker("mpl", cfg, val, seed, config_text, co_steps);

    long step = 0;
    for (; step < co_steps; ++step) {
        const double lr = numerics::lr_at(cfg.schedule, step);
        auto lbatch = lsrc.draw(cfg);
        const auto xl_clean = lsrc.clean(lbatch.rows);
        const auto yl = numerics::gather_rows(labeled_targets, lbatch.rows);
        auto ubatch = usrc.draw(cfg, false);
        const auto xu_clean = usrc.clean(ubatch.rows);

        // Pseudo labels from the current teacher on the clean unlabeled batch.
        auto pls = generate_pseudo_labels(teacher, xu_clean, filter.temperature, filter.soft_labels);
        std::vector<float> weights(pls.size(), 0.0f);
        {
            auto kept = apply_filter(teacher, pls, filter, filter_root.derive(static_cast<std::uint64_t>(step)));
            for (auto i : kept.source_index) weights[i] = 1.0f;
        }
        bool any_kept = false;
        for (float w : weights) any_kept = any_kept || w > 0.0f;

        double student_loss = 0.0, h = 0.0;
        if (options.student_lr_scale > 0.0 && any_kept) {
            const double before = detail::labeled_ce(student, xl_clean, yl);
            student.zero_grad();
            auto logits = student.logits(ubatch.inputs, nn::Mode::train, true, &student_dropout);
            auto loss = nn::cross_entropy_with_logits(logits, pls.targets, 1.0f, std::span<const float>(weights));
            student_loss = loss.item();
            detail::descend(loss, student_params, student_adam, lr * options.student_lr_scale, step);
            h = before - detail::labeled_ce(student, xl_clean, yl);
        }

        double teacher_loss = std::numeric_limits<double>::quiet_NaN();
        if (options.teacher_lr_scale > 0.0) {
            teacher.zero_grad();
            numerics::Variable<float> loss;
            if (h != 0.0 && any_kept) {
                auto logits = teacher.logits(numerics::concat_rows(xu_clean, lbatch.inputs), nn::Mode::train, true,
                                             &teacher_dropout);
                const std::size_t nu = xu_clean.dim(0), n = nu + lbatch.inputs.dim(0);
                auto feedback = nn::cross_entropy_with_logits(numerics::slice_rows(logits, 0, nu), pls.targets,
                                                              temperature, std::span<const float>(weights));
                auto supervised = nn::cross_entropy_with_logits(numerics::slice_rows(logits, nu, n), lbatch.targets);
                loss = numerics::add(numerics::scale(feedback, static_cast<float>(h)), supervised);
            } else {
                loss = nn::cross_entropy_with_logits(teacher.logits(lbatch.inputs, nn::Mode::train, true, &teacher_dropout),
                                                     lbatch.targets);
            }
            teacher_loss = loss.item();
            detail::descend(loss, teacher_params, teacher_adam, lr * options.teacher_lr_scale, step);
        }

        tracker.record(step, lr, options.student_lr_scale > 0.0 ? student_loss : teacher_loss, teacher_loss);
        if (tracker.after_step(step, student)) {
            ++step;
            break;
        }
    }
    const double co_best_f1 = tracker.log.best_val_f1;
    auto best = tracker.finish(std::move(student), step);
    MplResult out{std::move(best), std::move(teacher), std::move(tracker.log), {}};
    if (step == co_steps && cfg.max_steps - co_steps > 0) {
        auto tuned = detail::fit(out.student, "mpl.finetune", &labeled, cfg.teacher_batch, nullptr, nullptr, 0, val, cfg,
                                 generation_seed(seed, 1), cfg.max_steps - co_steps, config_text, co_steps);
        out.finetune_log = std::move(tuned.log);
        if (val == nullptr || !(out.finetune_log.best_val_f1 <= co_best_f1)) out.student = std::move(tuned.network);
    }
    return out;
}

// Supervised loss on D_L plus weighted conditional-entropy and class-balance
// terms on an unlabeled batch passed through the same network.
inline TrainResult train_ss_ul(const Dataset& labeled, const UnlabeledSet& pool, const Dataset* val,
                               const TrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    detail::require_labeled(labeled, "labeled set");
    const bool unlabeled_terms = (cfg.entropy_weight > 0.0 || cfg.balance_weight > 0.0) && !pool.empty();
    const RngStream root = run_stream(seed);
    Network<float> net = make_network(cfg, seed);
    detail::Source lsrc(labeled.inputs, nn::one_hot<float>(labeled.labels, labeled.num_classes), cfg.teacher_batch,
                        root, streams::kLabeled);
    std::optional<detail::Source> usrc;
    if (unlabeled_terms) usrc.emplace(pool.inputs(), Tensor<float>(), cfg.student_unlabeled_batch, root, streams::kUnlabeled);
    RngStream dropout_rng = root.derive(streams::kDropout);
    auto params = net.parameters();
    numerics::AdamState<float> adam;
    detail::Tracker tracker("ss_ul", cfg, val, seed, describe(cfg), cfg.max_steps);

    long step = 0;
    for (; step < cfg.max_steps; ++step) {
        const double lr = numerics::lr_at(cfg.schedule, step);
        auto lbatch = lsrc.draw(cfg);
        net.zero_grad();
        numerics::Variable<float> loss;
        double aux = std::numeric_limits<double>::quiet_NaN();
        if (!usrc) {
            loss = nn::cross_entropy_with_logits(net.logits(lbatch.inputs, nn::Mode::train, true, &dropout_rng),
                                                 lbatch.targets);
        } else {
            auto ubatch = usrc->draw(cfg, false);
            const std::size_t nl = lbatch.inputs.dim(0), n = nl + ubatch.inputs.dim(0);
            auto logits = net.logits(numerics::concat_rows(lbatch.inputs, ubatch.inputs), nn::Mode::train, true,
                                     &dropout_rng);
            auto ce = nn::cross_entropy_with_logits(numerics::slice_rows(logits, 0, nl), lbatch.targets);
            auto probs = numerics::softmax(numerics::slice_rows(logits, nl, n));
            auto unl = numerics::add(
                numerics::scale(conditional_entropy(probs), static_cast<float>(cfg.entropy_weight)),
                numerics::scale(class_balance_loss(probs), static_cast<float>(cfg.balance_weight)));
            aux = unl.item();
            loss = numerics::add(ce, unl);
        }
        tracker.record(step, lr, loss.item(), aux);
        detail::descend(loss, params, adam, lr, step);
        if (tracker.after_step(step, net)) {
            ++step;
            break;
        }
    }
    auto best = tracker.finish(std::move(net), step);
    return {std::move(best), std::move(tracker.log)};
}

struct SsFtResult {
    Network<float> network;
    std::optional<Network<float>> pretrained;  // after phase 1; absent when phase 1 was skipped
    RunLog pretrain_log;
    RunLog finetune_log;
};

// Phase 1: fresh student on filtered pseudo labels only. Phase 2: continue on D_L.
inline SsFtResult train_ss_ft(const Network<float>& teacher, const Dataset& labeled, const UnlabeledSet& pool,
                              const Dataset* val, const TrainConfig& cfg, const FilterConfig& filter,
                              std::uint64_t seed) {
    cfg.validate();
    filter.validate();
    detail::require_labeled(labeled, "labeled set");
    const long pretrain_steps =
        std::min(cfg.max_steps, static_cast<long>(std::llround(cfg.ss_ft_pretrain_fraction * static_cast<double>(cfg.max_steps))));
    const long finetune_steps = cfg.max_steps - pretrain_steps;
    const auto text = describe(cfg) + "|" + describe(filter);

    SsFtResult out{make_network(cfg, seed), std::nullopt, {}, {}};
    if (pretrain_steps > 0) {
        const auto pseudo_seed = generation_seed(seed, 1);
        auto pls = generate_pseudo_labels(teacher, pool, filter.temperature, filter.soft_labels);
        auto kept = apply_filter(teacher, pls, filter, RngStream(pseudo_seed, streams::kFilter));
        if (kept.empty()) {
            warn("SS+FT: no pseudo labels survived filtering; skipping the pre-training phase");
        } else {
            auto phase1 = detail::fit(std::move(out.network), "ss_ft.pretrain", nullptr, 0, &kept.inputs,
                                      &kept.targets, cfg.teacher_batch, val, cfg, pseudo_seed, pretrain_steps, text);
            out.network = std::move(phase1.network);
            out.pretrained = out.network;
            out.pretrain_log = std::move(phase1.log);
        }
    }
    if (finetune_steps > 0) {
        auto phase2 = detail::fit(std::move(out.network), "ss_ft.finetune", &labeled, cfg.teacher_batch, nullptr,
                                  nullptr, 0, val, cfg, seed, finetune_steps, text);
        out.network = std::move(phase2.network);
        out.finetune_log = std::move(phase2.log);
    }
    return out;
}

}  // namespace selftrain::train
