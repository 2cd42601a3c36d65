#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "test_support.hpp"

using namespace selftrain;
using namespace selftrain::train;
using data::Dataset;
using data::SplitTag;
using numerics::RngStream;
using numerics::Shape;
using numerics::Tensor;

namespace {

struct Fixture {
    data::Benchmark bench;
    Dataset labeled;
    data::UnlabeledSet pool;
};

Fixture tiny_fixture(std::uint64_t seed = 0) {
    Fixture f;
    f.bench = data::generate_shifted_benchmark(selftrain::testing::tiny_spec(seed));
    auto [dl, du] = data::split_labeled_unlabeled(f.bench.at(SplitTag::train), 0.5, seed);
    f.labeled = std::move(dl);
    f.pool = std::move(du);
    return f;
}

// Three classes, each lighting up one channel; separable by the channel means.
Dataset separable_toy(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> noise(0.0, 0.3);
    Dataset ds;
    ds.num_classes = 3;
    ds.inputs = Tensor<float>(Shape{n, 3, 5, 5});
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % 3);
        ds.labels.push_back(c);
        ds.groups.push_back(static_cast<std::int64_t>(i));
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t j = 0; j < 25; ++j)
                ds.inputs[(i * 3 + ch) * 25 + j] = static_cast<float>((ch == static_cast<std::size_t>(c) ? 2.0 : 0.0) + noise(gen));
    }
    return ds;
}

struct WarningCapture {
    WarningCapture() : saved(selftrain::warning_sink()) {
        selftrain::warning_sink() = [this](const std::string& m) { messages.push_back(m); };
    }
    ~WarningCapture() { selftrain::warning_sink() = saved; }
    std::function<void(const std::string&)> saved;
    std::vector<std::string> messages;
};

PseudoLabelSet manual_set(const std::vector<double>& confidences) {
    PseudoLabelSet s;
    const std::size_t n = confidences.size();
    s.inputs = Tensor<float>(Shape{n, 3, 5, 5});
    s.targets = Tensor<float>(Shape{n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        s.targets.at(i, 0) = static_cast<float>(confidences[i]);
        s.targets.at(i, 1) = static_cast<float>(1.0 - confidences[i]);
        s.confidence.push_back(confidences[i]);
        s.source_index.push_back(i);
    }
    return s;
}

}  // namespace

TEST(Teacher, SeparableToyReachesNearPerfectF1) {
    const auto toy = separable_toy(500, 1);
    auto cfg = selftrain::testing::tiny_train_config(3, 600);
    cfg.eval_every = 100;
    const auto r = train_teacher(toy, &toy, cfg, 0);
    EXPECT_GE(eval::macro_f1_on(r.network, toy), 0.99);
    EXPECT_LE(r.log.best_step, 2000);
}

TEST(Teacher, InitialLossNearLogC) {
    auto cfg = selftrain::testing::tiny_train_config(13, 1);
    auto spec = data::default_shift_spec(0);
    for (auto& s : spec.splits) s.groups = 2;
    const auto bench = data::generate_shifted_benchmark(spec);
    const auto r = train_teacher(bench.at(SplitTag::train), nullptr, cfg, 0);
    EXPECT_GE(r.log.steps.front().loss, 2.3);
    EXPECT_LE(r.log.steps.front().loss, 2.9);
}

TEST(Teacher, DeterministicCheckpoint) {
    auto f = tiny_fixture();
    const auto cfg = selftrain::testing::tiny_train_config();
    const auto a = train_teacher(f.labeled, &f.bench.at(SplitTag::val), cfg, 3);
    const auto b = train_teacher(f.labeled, &f.bench.at(SplitTag::val), cfg, 3);
    EXPECT_EQ(numerics::encode_checkpoint(a.network.state()), numerics::encode_checkpoint(b.network.state()));
    EXPECT_EQ(a.log.steps_csv(), b.log.steps_csv());
}

TEST(Teacher, RunLogCarriesReplayFields) {
    auto f = tiny_fixture();
    const auto cfg = selftrain::testing::tiny_train_config();
    const auto r = train_teacher(f.labeled, &f.bench.at(SplitTag::val), cfg, 5);
    EXPECT_EQ(r.log.seed, 5u);
    EXPECT_EQ(r.log.config_hash, fnv1a_hex(describe(cfg)));
    EXPECT_EQ(r.log.steps.size(), 20u);
    EXPECT_EQ(r.log.val_curve.size(), 2u);
    EXPECT_GE(r.log.best_step, 1);
    const auto summary = r.log.summary();
    EXPECT_NE(summary.find("seed"), std::string::npos);
    EXPECT_NE(summary.find(r.log.config_hash), std::string::npos);
}

TEST(Teacher, UnlabeledInputRejected) {
    auto f = tiny_fixture();
    auto bad = f.labeled;
    bad.labels[0] = Dataset::kNoLabel;
    EXPECT_THROW(train_teacher(bad, nullptr, selftrain::testing::tiny_train_config(), 0), DataError);
}

TEST(Teacher, DivergenceReportsStep) {
    auto f = tiny_fixture();
    auto bad = f.labeled;
    bad.inputs[0] = std::numeric_limits<float>::infinity();
    auto cfg = selftrain::testing::tiny_train_config();
    cfg.augment = data::AugmentPolicy::identity();
    cfg.mixup_alpha = 0.0;
    cfg.teacher_batch = bad.size();
    try {
        train_teacher(bad, nullptr, cfg, 0);
        FAIL();
    } catch (const DivergenceError& e) {
        EXPECT_EQ(e.step(), 0);
    }
}

TEST(PseudoLabels, TemperatureKeepsArgmaxChangesValues) {
    auto f = tiny_fixture();
    const auto teacher = train_teacher(f.labeled, nullptr, selftrain::testing::tiny_train_config(), 0).network;
    const auto a = generate_pseudo_labels(teacher, f.pool, 1.0);
    const auto b = generate_pseudo_labels(teacher, f.pool, 1.05);
    EXPECT_EQ(a.size(), f.pool.size());
    EXPECT_EQ(nn::argmax_rows(a.targets), nn::argmax_rows(b.targets));
    EXPECT_NE(a.targets, b.targets);
    for (std::size_t r = 0; r < a.size(); ++r) {
        double s = 0, mx = 0;
        for (std::size_t c = 0; c < 4; ++c) {
            s += b.targets.at(r, c);
            mx = std::max(mx, static_cast<double>(b.targets.at(r, c)));
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
        EXPECT_DOUBLE_EQ(b.confidence[r], mx);
    }
}

TEST(PseudoLabels, EmptyPoolGivesEmptySet) {
    Network<float> net(selftrain::testing::tiny_train_config().network_config(), 0);
    const auto s = generate_pseudo_labels(net, Tensor<float>(Shape{0, 3, 5, 5}), 1.0);
    EXPECT_TRUE(s.empty());
}

TEST(PseudoLabels, HardLabelsAreOneHot) {
    auto f = tiny_fixture();
    Network<float> net(selftrain::testing::tiny_train_config().network_config(), 0);
    const auto s = generate_pseudo_labels(net, f.pool, 1.0, false);
    for (std::size_t r = 0; r < s.size(); ++r) {
        float total = 0;
        for (std::size_t c = 0; c < 4; ++c) {
            const float v = s.targets.at(r, c);
            EXPECT_TRUE(v == 0.0f || v == 1.0f);
            total += v;
        }
        EXPECT_EQ(total, 1.0f);
    }
}

TEST(FilterConfidence, HandExample) {
    const auto kept = filter_confidence(manual_set({0.9, 0.55, 0.7}), 0.6);
    ASSERT_EQ(kept.size(), 2u);
    EXPECT_DOUBLE_EQ(kept.confidence[0], 0.9);
    EXPECT_DOUBLE_EQ(kept.confidence[1], 0.7);
    EXPECT_EQ(kept.source_index, (std::vector<std::size_t>{0, 2}));
}

TEST(FilterConfidence, ZeroKeepsAllAndRangeChecked) {
    const auto s = manual_set({0.5, 0.51, 0.99});
    EXPECT_EQ(filter_confidence(s, 0.0).size(), 3u);
    EXPECT_THROW(filter_confidence(s, 1.5), DomainError);
    EXPECT_THROW(filter_confidence(s, -0.1), DomainError);
}

TEST(FilterConfidence, Monotone) {
    std::mt19937_64 gen(2);
    std::uniform_real_distribution<double> u(0.5, 1.0), k(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> conf(30);
        for (auto& c : conf) c = u(gen);
        const auto s = manual_set(conf);
        double k1 = k(gen), k2 = k(gen);
        if (k1 > k2) std::swap(k1, k2);
        const auto a = filter_confidence(s, k1).source_index, b = filter_confidence(s, k2).source_index;
        EXPECT_TRUE(std::includes(a.begin(), a.end(), b.begin(), b.end()));
    }
}

TEST(FilterUps, ZeroDropoutKeepsAllAndWarns) {
    auto f = tiny_fixture();
    auto cfg = selftrain::testing::tiny_train_config();
    cfg.dropout = 0.0;
    Network<float> net(cfg.network_config(), 0);
    const auto s = generate_pseudo_labels(net, f.pool, 1.0);
    WarningCapture capture;
    const auto kept = filter_ups(net, s, 0.0, 10, RngStream(1));
    EXPECT_EQ(kept.size(), s.size());
    EXPECT_EQ(capture.messages.size(), 1u);
}

TEST(FilterUps, MonotoneAndPassesChecked) {
    auto f = tiny_fixture();
    Network<float> net(selftrain::testing::tiny_train_config().network_config(), 0);
    const auto s = generate_pseudo_labels(net, f.pool, 1.0);
    EXPECT_THROW(filter_ups(net, s, 0.1, 1, RngStream(1)), ConfigError);
    std::vector<std::size_t> previous;
    for (double t : {0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 1.0}) {
        const auto kept = filter_ups(net, s, t, 10, RngStream(4)).source_index;
        EXPECT_TRUE(std::includes(kept.begin(), kept.end(), previous.begin(), previous.end()));
        previous = kept;
    }
    EXPECT_EQ(previous.size(), s.size());
}

TEST(FilterConfig, Defaults) {
    const auto nst = FilterConfig::nst();
    EXPECT_EQ(nst.mode, FilterMode::confidence);
    EXPECT_DOUBLE_EQ(nst.confidence_threshold, 0.4);
    EXPECT_DOUBLE_EQ(nst.temperature, 1.05);
    EXPECT_DOUBLE_EQ(nst.uncertainty_threshold, 0.10);
    EXPECT_EQ(nst.mc_passes, 10u);
    EXPECT_TRUE(nst.soft_labels);
    const auto mpl = FilterConfig::mpl();
    EXPECT_DOUBLE_EQ(mpl.confidence_threshold, 0.2);
    EXPECT_DOUBLE_EQ(mpl.temperature, 1.10);
    EXPECT_EQ(kDefaultGenerations, 2u);
    EXPECT_THROW(parse_filter_mode("median"), ConfigError);
    EXPECT_EQ(parse_filter_mode("both"), FilterMode::both);
}

TEST(TrainConfig, ValidationRejectsOutOfRange) {
    TrainConfig c;
    c.dropout = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.entropy_weight = -0.1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.student_unlabeled_batch = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.schedule.base_lr = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    FilterConfig f;
    f.temperature = 0.0;
    EXPECT_THROW(f.validate(), ConfigError);
}

TEST(Student, EmptyPseudoSetReplaysTeacher) {
    auto f = tiny_fixture();
    auto cfg = selftrain::testing::tiny_train_config(4, 30);
    cfg.teacher_batch = cfg.student_labeled_batch;
    const auto teacher = train_teacher(f.labeled, nullptr, cfg, 9);
    const auto student = train_student(f.labeled, PseudoLabelSet{}, nullptr, cfg, 9);
    ASSERT_EQ(teacher.log.steps.size(), student.log.steps.size());
    for (std::size_t i = 0; i < teacher.log.steps.size(); ++i) {
        EXPECT_NEAR(teacher.log.steps[i].loss, student.log.steps[i].loss, 1e-7) << "step " << i;
    }
}

TEST(Student, DistillationAgreesWithTeacher) {
    auto spec = selftrain::testing::tiny_spec(0);
    for (auto& s : spec.splits) s.groups *= 4;
    const auto bench = data::generate_shifted_benchmark(spec);
    auto [labeled, pool] = data::split_labeled_unlabeled(bench.at(SplitTag::train), 0.5, 0);
    auto cfg = selftrain::testing::tiny_train_config(4, 2000);
    cfg.eval_every = 100;
    const auto teacher = train_teacher(labeled, &bench.at(SplitTag::val), cfg, 1).network;
    // Soft labels only: no labeled source at all.
    const auto pls = generate_pseudo_labels(teacher, bench.at(SplitTag::train).inputs, 1.0);
    const auto student = detail::fit(make_network(cfg, 2), "student", nullptr, 0, &pls.inputs, &pls.targets, 32,
                                     nullptr, cfg, 2, cfg.max_steps, describe(cfg))
                             .network;
    const auto& held_out = bench.at(SplitTag::id_test);
    const auto a = eval::predict_classes(teacher, held_out.inputs), b = eval::predict_classes(student, held_out.inputs);
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
    EXPECT_GE(static_cast<double>(same) / static_cast<double>(a.size()), 0.90);
}

TEST(Student, Deterministic) {
    auto f = tiny_fixture();
    const auto cfg = selftrain::testing::tiny_train_config();
    Network<float> net(cfg.network_config(), 0);
    const auto pls = generate_pseudo_labels(net, f.pool, 1.0);
    const auto a = train_student(f.labeled, pls, nullptr, cfg, 4);
    const auto b = train_student(f.labeled, pls, nullptr, cfg, 4);
    EXPECT_EQ(a.network.state(), b.network.state());
}

TEST(Nst, OneGenerationTrainsOneStudent) {
    auto f = tiny_fixture();
    const auto cfg = selftrain::testing::tiny_train_config();
    const auto teacher = train_teacher(f.labeled, nullptr, cfg, 0).network;
    const auto r = train_nst(teacher, f.labeled, f.pool, &f.bench.at(SplitTag::val), cfg, FilterConfig::nst(), 1, 0);
    EXPECT_EQ(r.students.size(), 1u);
    EXPECT_EQ(r.generations.records.size(), 1u);
    EXPECT_EQ(r.generations.records[0].teacher_ref, "teacher");
    EXPECT_EQ(r.generations.records[0].pool_size, f.pool.size());
    EXPECT_THROW(train_nst(teacher, f.labeled, f.pool, nullptr, cfg, FilterConfig::nst(), 0, 0), ConfigError);
}

TEST(Nst, EmptyFilteredSetWarnsAndProceeds) {
    auto f = tiny_fixture();
    const auto cfg = selftrain::testing::tiny_train_config();
    const auto teacher = train_teacher(f.labeled, nullptr, cfg, 0).network;
    auto filter = FilterConfig::nst();
    filter.confidence_threshold = 1.0;
    WarningCapture capture;
    const auto r = train_nst(teacher, f.labeled, f.pool, nullptr, cfg, filter, 2, 0);
    EXPECT_EQ(r.students.size(), 2u);
    EXPECT_EQ(r.generations.records[1].pseudo_labels, 0u);
    EXPECT_EQ(r.generations.records[1].teacher_ref, "generation1");
    EXPECT_EQ(capture.messages.size(), 2u);
}

TEST(Nst, HiddenLabelsNeverRead) {
    auto f = tiny_fixture();
    const auto cfg = selftrain::testing::tiny_train_config();
    std::vector<int> scrambled(f.pool.size());
    std::mt19937_64 gen(5);
    for (auto& l : scrambled) l = static_cast<int>(gen() % 4);
    const auto other = data::with_hidden_labels(f.pool, scrambled);
    ASSERT_NE(data::audit_hidden_labels(other), data::audit_hidden_labels(f.pool));
    const auto teacher = train_teacher(f.labeled, nullptr, cfg, 0).network;
    const auto a = train_nst(teacher, f.labeled, f.pool, nullptr, cfg, FilterConfig::nst(), 1, 0);
    const auto b = train_nst(teacher, f.labeled, other, nullptr, cfg, FilterConfig::nst(), 1, 0);
    EXPECT_EQ(a.student.state(), b.student.state());
    const auto ma = train_mpl(teacher, f.labeled, f.pool, nullptr, cfg, FilterConfig::mpl(), 0);
    const auto mb = train_mpl(teacher, f.labeled, other, nullptr, cfg, FilterConfig::mpl(), 0);
    EXPECT_EQ(ma.student.state(), mb.student.state());
    const auto sa = train_ss_ul(f.labeled, f.pool, nullptr, cfg, 0);
    const auto sb = train_ss_ul(f.labeled, other, nullptr, cfg, 0);
    EXPECT_EQ(sa.network.state(), sb.network.state());
}

TEST(Mpl, FrozenStudentReplaysSupervisedTeacher) {
    auto f = tiny_fixture();
    auto cfg = selftrain::testing::tiny_train_config(4, 25);
    cfg.mpl_finetune_fraction = 0.0;
    cfg.teacher_batch = cfg.student_labeled_batch;
    const std::uint64_t seed = 6;
    const auto supervised = train_teacher(f.labeled, nullptr, cfg, seed);
    MplOptions opts;
    opts.student_lr_scale = 0.0;
    const auto mpl = train_mpl(make_network(cfg, seed), f.labeled, f.pool, nullptr, cfg, FilterConfig::mpl(), seed, opts);
    ASSERT_EQ(mpl.log.steps.size(), supervised.log.steps.size());
    for (std::size_t i = 0; i < mpl.log.steps.size(); ++i) {
        EXPECT_NEAR(mpl.log.steps[i].aux, supervised.log.steps[i].loss, 1e-7) << "step " << i;
    }
    EXPECT_EQ(mpl.teacher.state(), supervised.network.state());
}

// Reference loop for a frozen teacher: every step the fixed teacher labels a
// fresh unlabeled batch and the student takes one step on those labels.
TEST(Mpl, FrozenTeacherReducesToStudentOnRegeneratedLabels) {
    auto f = tiny_fixture();
    auto cfg = selftrain::testing::tiny_train_config(4, 15);
    cfg.mpl_finetune_fraction = 0.0;
    const std::uint64_t seed = 8;
    const auto filter = FilterConfig::mpl();
    const auto teacher = train_teacher(f.labeled, nullptr, cfg, 1).network;

    MplOptions opts;
    opts.teacher_lr_scale = 0.0;
    const auto mpl = train_mpl(teacher, f.labeled, f.pool, nullptr, cfg, filter, seed, opts);

    const RngStream root = run_stream(seed);
    Network<float> student = teacher;
    auto params = student.parameters();
    numerics::AdamState<float> adam;
    data::BatchSampler labeled_rows(f.labeled.size(), cfg.student_labeled_batch, root.derive(streams::kLabeled));
    RngStream labeled_aug = root.derive(streams::kLabeled + 1), labeled_mix = root.derive(streams::kLabeled + 2);
    data::BatchSampler pool_rows(f.pool.size(), cfg.student_unlabeled_batch, root.derive(streams::kUnlabeled));
    RngStream pool_aug = root.derive(streams::kUnlabeled + 1);
    RngStream dropout = root.derive(streams::kStudentDropout);
    const RngStream filter_root = root.derive(streams::kFilter);
    for (long step = 0; step < cfg.max_steps; ++step) {
        // The labeled stream advances exactly as in co-training (it only feeds h).
        auto lx = numerics::gather_rows(f.labeled.inputs, labeled_rows.next());
        data::augment_batch(lx, cfg.augment, labeled_aug);
        labeled_mix.beta(cfg.mixup_alpha, cfg.mixup_alpha);
        labeled_mix.permutation(lx.dim(0));

        const auto rows = pool_rows.next();
        const auto clean = numerics::gather_rows(f.pool.inputs(), rows);
        auto noisy = clean;
        data::augment_batch(noisy, cfg.augment, pool_aug);
        const auto pls = generate_pseudo_labels(teacher, clean, filter.temperature);
        const auto kept = apply_filter(teacher, pls, filter, filter_root.derive(static_cast<std::uint64_t>(step)));
        std::vector<float> w(pls.size(), 0.0f);
        for (auto i : kept.source_index) w[i] = 1.0f;
        student.zero_grad();
        auto loss = nn::cross_entropy_with_logits(student.logits(noisy, nn::Mode::train, true, &dropout), pls.targets,
                                                  1.0f, std::span<const float>(w));
        EXPECT_NEAR(loss.item(), mpl.log.steps[static_cast<std::size_t>(step)].loss, 1e-7) << "step " << step;
        numerics::backward(loss);
        numerics::adam_step(std::span<numerics::Variable<float>>(params), adam, numerics::lr_at(cfg.schedule, step));
    }
    EXPECT_EQ(student.state(), mpl.student.state());
    EXPECT_EQ(mpl.teacher.state(), teacher.state());
}

TEST(Mpl, FineTunePhaseLogged) {
    auto f = tiny_fixture();
    auto cfg = selftrain::testing::tiny_train_config(4, 20);
    cfg.mpl_finetune_fraction = 0.5;
    const auto teacher = train_teacher(f.labeled, nullptr, cfg, 0).network;
    const auto r = train_mpl(teacher, f.labeled, f.pool, &f.bench.at(SplitTag::val), cfg, FilterConfig::mpl(), 0);
    EXPECT_EQ(r.log.steps.size(), 10u);
    ASSERT_EQ(r.finetune_log.steps.size(), 10u);
    EXPECT_EQ(r.finetune_log.steps.front().step, 10);
    EXPECT_EQ(r.finetune_log.val_curve.back().first, 20);
}

TEST(Mpl, StudentInitOption) {
    auto f = tiny_fixture();
    auto cfg = selftrain::testing::tiny_train_config(4, 6);
    cfg.mpl_finetune_fraction = 0.0;
    const auto teacher = train_teacher(f.labeled, nullptr, cfg, 0).network;
    // Frozen student: its weights stay at the initial ones (running stats still move).
    auto weights = [](const Network<float>& net) {
        std::vector<Tensor<float>> out;
        for (const auto& p : net.named_parameters()) out.push_back(p.value.value());
        return out;
    };
    MplOptions frozen;
    frozen.student_lr_scale = 0.0;
    EXPECT_EQ(weights(train_mpl(teacher, f.labeled, f.pool, nullptr, cfg, FilterConfig::mpl(), 3, frozen).student),
              weights(teacher));
    frozen.student_from_teacher = false;
    EXPECT_EQ(weights(train_mpl(teacher, f.labeled, f.pool, nullptr, cfg, FilterConfig::mpl(), 3, frozen).student),
              weights(make_network(cfg, 3)));
}

TEST(SsUl, ZeroWeightsMatchSupervised) {
    auto f = tiny_fixture();
    auto cfg = selftrain::testing::tiny_train_config();
    cfg.entropy_weight = 0.0;
    cfg.balance_weight = 0.0;
    const auto a = train_ss_ul(f.labeled, f.pool, nullptr, cfg, 2);
    const auto b = train_teacher(f.labeled, nullptr, cfg, 2);
    EXPECT_EQ(a.network.state(), b.network.state());
}

TEST(SsUl, DefaultWeightsAddUnlabeledTerms) {
    auto f = tiny_fixture();
    const auto cfg = selftrain::testing::tiny_train_config();
    EXPECT_DOUBLE_EQ(TrainConfig{}.entropy_weight, 0.2);
    EXPECT_DOUBLE_EQ(TrainConfig{}.balance_weight, 0.2);
    const auto r = train_ss_ul(f.labeled, f.pool, nullptr, cfg, 2);
    for (const auto& s : r.log.steps) EXPECT_GE(s.aux, 0.0);
}

TEST(Losses, ConditionalEntropy) {
    EXPECT_NEAR(conditional_entropy(Tensor<double>::matrix({{0, 1, 0, 0}})), 0.0, 1e-12);
    EXPECT_NEAR(conditional_entropy(Tensor<double>(Shape{3, 4}, 0.25)), std::log(4.0), 1e-4);
}

TEST(Losses, ClassBalance) {
    EXPECT_NEAR(class_balance_loss(Tensor<double>(Shape{2, 5}, 0.2)), 0.0, 1e-12);
    const double expected = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
    EXPECT_NEAR(class_balance_loss(Tensor<double>::matrix({{1.0, 0.0}, {0.5, 0.5}})), expected, 1e-4);
    EXPECT_NEAR(expected, 0.1438, 1e-4);
    std::mt19937_64 gen(3);
    for (int i = 0; i < 50; ++i) {
        const auto p = nn::softmax_with_temperature(selftrain::testing::random_tensor({6, 4}, gen, 2.0), 1.0);
        EXPECT_GE(class_balance_loss(p), -1e-12);
    }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
    std::mt19937_64 gen(4);
    for (int which = 0; which < 2; ++which) {
        const double err = numerics::finite_diff_check(
            [&](const std::vector<numerics::Variable<double>>& v) {
                auto p = numerics::softmax(v[0]);
                return which == 0 ? conditional_entropy(p) : class_balance_loss(p);
            },
            {selftrain::testing::random_tensor({5, 3}, gen)});
        EXPECT_LT(err, 1e-5);
    }
}

TEST(SsFt, ZeroPretrainBudgetIsSupervised) {
    auto f = tiny_fixture();
    auto cfg = selftrain::testing::tiny_train_config();
    cfg.ss_ft_pretrain_fraction = 0.0;
    const auto teacher = train_teacher(f.labeled, nullptr, cfg, 3);
    const auto r = train_ss_ft(teacher.network, f.labeled, f.pool, nullptr, cfg, FilterConfig::nst(), 3);
    EXPECT_FALSE(r.pretrained.has_value());
    EXPECT_EQ(r.network.state(), teacher.network.state());
}

TEST(SsFt, BothPhasesRecorded) {
    auto f = tiny_fixture();
    const auto cfg = selftrain::testing::tiny_train_config();
    const auto teacher = train_teacher(f.labeled, nullptr, cfg, 3).network;
    auto filter = FilterConfig::nst();
    filter.confidence_threshold = 0.0;
    const auto r = train_ss_ft(teacher, f.labeled, f.pool, nullptr, cfg, filter, 3);
    ASSERT_TRUE(r.pretrained.has_value());
    EXPECT_EQ(r.pretrain_log.steps.size(), 10u);
    EXPECT_EQ(r.finetune_log.steps.size(), 10u);
    EXPECT_NE(r.pretrained->state(), r.network.state());
}

TEST(SsFt, EmptyFilteredSetSkipsPhaseOne) {
    auto f = tiny_fixture();
    const auto cfg = selftrain::testing::tiny_train_config();
    const auto teacher = train_teacher(f.labeled, nullptr, cfg, 3).network;
    auto filter = FilterConfig::nst();
    filter.confidence_threshold = 1.0;
    WarningCapture capture;
    const auto r = train_ss_ft(teacher, f.labeled, f.pool, nullptr, cfg, filter, 3);
    EXPECT_FALSE(r.pretrained.has_value());
    EXPECT_EQ(capture.messages.size(), 1u);
}

TEST(Temperature, CalibratedLogitsFitNearOne) {
    // Every sample predicts (0.7, 0.3) and exactly 70% carry label 0.
    Tensor<double> logits(Shape{100, 2});
    std::vector<int> labels(100);
    for (std::size_t i = 0; i < 100; ++i) {
        logits.at(i, 0) = std::log(0.7);
        logits.at(i, 1) = std::log(0.3);
        labels[i] = i < 70 ? 0 : 1;
    }
    const auto fit = fit_temperature(logits, labels);
    EXPECT_NEAR(fit.temperature, 1.0, 0.01 + 1e-12);
}

TEST(Temperature, NeverWorseThanOne) {
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 30; ++trial) {
        const auto logits = selftrain::testing::random_tensor({40, 5}, gen, 4.0);
        std::vector<int> labels(40);
        for (auto& l : labels) l = static_cast<int>(gen() % 5);
        const auto fit = fit_temperature(logits, labels, {0.5, 3.0});
        EXPECT_LE(fit.nll, fit.nll_at_one + 1e-9);
        EXPECT_EQ(nn::argmax_rows(nn::softmax_with_temperature(logits, fit.temperature)), nn::argmax_rows(logits));
    }
}

TEST(Temperature, DefaultGrid) {
    const auto grid = default_temperature_grid();
    EXPECT_EQ(grid.size(), 121u);
    EXPECT_DOUBLE_EQ(grid.front(), 0.8);
    EXPECT_DOUBLE_EQ(grid.back(), 2.0);
    EXPECT_NE(std::find(grid.begin(), grid.end(), 1.0), grid.end());
}
