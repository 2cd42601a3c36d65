#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "test_support.hpp"

using namespace selftrain;
using namespace selftrain::eval;
using data::SplitTag;

TEST(Confusion, PerfectPredictionsAreDiagonal) {
    const std::vector<int> y{0, 1, 2, 2, 1};
    const auto m = confusion(y, y, 3);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t p = 0; p < 3; ++p) EXPECT_EQ(m.at(t, p), t == p ? m.support(t) : 0u);
    EXPECT_EQ(m.total(), 5u);
}

TEST(Confusion, HandCount) {
    const auto m = confusion(std::vector<int>{0, 1, 1}, std::vector<int>{0, 0, 1}, 2);
    EXPECT_EQ(m.at(0, 0), 1u);
    EXPECT_EQ(m.at(0, 1), 1u);
    EXPECT_EQ(m.at(1, 0), 0u);
    EXPECT_EQ(m.at(1, 1), 1u);
}

TEST(Confusion, EmptyInputAndRangeErrors) {
    const auto m = confusion(std::vector<int>{}, std::vector<int>{}, 3);
    EXPECT_EQ(m.total(), 0u);
    EXPECT_THROW(confusion(std::vector<int>{3}, std::vector<int>{0}, 3), ContractError);
    EXPECT_THROW(confusion(std::vector<int>{0}, std::vector<int>{-1}, 3), ContractError);
    EXPECT_THROW(confusion(std::vector<int>{0, 1}, std::vector<int>{0}, 3), ContractError);
}

TEST(Confusion, SampleOrderInvariant) {
    std::vector<int> p{0, 2, 1, 1, 0, 2}, y{0, 1, 1, 2, 0, 2};
    const auto a = confusion(p, y, 3);
    std::vector<std::size_t> order{5, 3, 1, 0, 4, 2};
    std::vector<int> pp, yy;
    for (auto i : order) {
        pp.push_back(p[i]);
        yy.push_back(y[i]);
    }
    EXPECT_EQ(confusion(pp, yy, 3), a);
}

TEST(MacroF1, PerfectIsOne) {
    const std::vector<int> y{0, 1, 2, 2};
    EXPECT_DOUBLE_EQ(macro_f1(y, y, 3), 1.0);
}

TEST(MacroF1, HandComputed) {
    const auto m = confusion(std::vector<int>{0, 1, 1}, std::vector<int>{0, 0, 1}, 2);
    const auto f1 = per_class_f1(m);
    EXPECT_NEAR(f1[0], 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(f1[1], 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(macro_f1(m), 0.6667, 1e-4);
}

TEST(MacroF1, ZeroSupportExcludedAndAllZeroUndefined) {
    // Class 2 never occurs in the labels; its spurious prediction still hurts class 0 precision.
    const double v = macro_f1(std::vector<int>{0, 2, 1}, std::vector<int>{0, 0, 1}, 3);
    EXPECT_NEAR(v, (2.0 / 3.0 + 1.0) / 2.0, 1e-12);
    EXPECT_THROW(macro_f1(ConfusionMatrix(3)), UndefinedMetricError);
}

TEST(MacroF1, ClassRelabelingInvariant) {
    std::mt19937_64 gen(1);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> p(50), y(50);
        for (auto& v : p) v = static_cast<int>(gen() % 4);
        for (auto& v : y) v = static_cast<int>(gen() % 4);
        std::vector<int> perm{0, 1, 2, 3};
        std::shuffle(perm.begin(), perm.end(), gen);
        std::vector<int> pp, yy;
        for (auto v : p) pp.push_back(perm[static_cast<std::size_t>(v)]);
        for (auto v : y) yy.push_back(perm[static_cast<std::size_t>(v)]);
        const double a = macro_f1(p, y, 4);
        EXPECT_NEAR(a, macro_f1(pp, yy, 4), 1e-12);
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
    }
}

TEST(Bootstrap, AllCorrectGivesDegenerateInterval) {
    const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
    const auto ci = bootstrap_ci(y, y, 3, {});
    EXPECT_DOUBLE_EQ(ci.lower, 1.0);
    EXPECT_DOUBLE_EQ(ci.upper, 1.0);
}

TEST(Bootstrap, SameSeedSameInterval) {
    std::mt19937_64 gen(2);
    std::vector<int> p(120), y(120);
    for (auto& v : p) v = static_cast<int>(gen() % 3);
    for (auto& v : y) v = static_cast<int>(gen() % 3);
    BootstrapOptions o;
    o.seed = 5;
    const auto a = bootstrap_ci(p, y, 3, o), b = bootstrap_ci(p, y, 3, o);
    EXPECT_EQ(a.lower, b.lower);
    EXPECT_EQ(a.upper, b.upper);
    EXPECT_LE(a.lower, a.upper);
    EXPECT_GE(a.lower, 0.0);
    EXPECT_LE(a.upper, 1.0);
    o.seed = 6;
    const auto c = bootstrap_ci(p, y, 3, o);
    EXPECT_TRUE(c.lower != a.lower || c.upper != a.upper);
}

TEST(Bootstrap, PreconditionsChecked) {
    const std::vector<int> y{0, 1};
    BootstrapOptions o;
    o.resamples = 99;
    EXPECT_THROW(bootstrap_ci(y, y, 2, o), ContractError);
    o.resamples = 100;
    o.level = 1.0;
    EXPECT_THROW(bootstrap_ci(y, y, 2, o), ContractError);
    EXPECT_THROW(bootstrap_ci(std::vector<int>{}, std::vector<int>{}, 2, BootstrapOptions{}), UndefinedMetricError);
}

TEST(Bootstrap, WidthShrinksWithSampleSize) {
    auto width = [](std::size_t n, std::uint64_t seed) {
        std::mt19937_64 gen(seed);
        std::bernoulli_distribution hit(0.8);
        std::vector<int> y(n, 0), p(n);
        for (auto& v : p) v = hit(gen) ? 0 : 1;
        BootstrapOptions o;
        o.resamples = 200;
        o.seed = seed;
        const auto ci = bootstrap_ci(p, y, 2, o);
        return ci.upper - ci.lower;
    };
    std::vector<double> small, large;
    for (std::uint64_t s = 0; s < 11; ++s) {
        small.push_back(width(100, s));
        large.push_back(width(1000, s));
    }
    std::sort(small.begin(), small.end());
    std::sort(large.begin(), large.end());
    EXPECT_LT(large[5], small[5]);
}

TEST(Bootstrap, GroupUnitNeedsGroups) {
    const std::vector<int> y{0, 1, 0, 1};
    BootstrapOptions o;
    o.unit = ResampleUnit::group;
    EXPECT_THROW(bootstrap_ci(y, y, 2, o), ContractError);
    const std::vector<std::int64_t> g{1, 1, 2, 2};
    const auto ci = bootstrap_ci(y, y, 2, o, g);
    EXPECT_DOUBLE_EQ(ci.lower, 1.0);
}

TEST(Bootstrap, PercentileInterpolates) {
    EXPECT_DOUBLE_EQ(percentile({3, 1, 2, 4}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(percentile({1, 2, 3}, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(percentile({1, 2, 3}, 1.0), 3.0);
}

namespace {

nn::Network<float> tiny_net(std::size_t classes) {
    auto cfg = nn::desk_scale_config(classes);
    cfg.blocks = {{4, 1}};
    return nn::Network<float>(cfg, 1);
}

std::map<SplitTag, data::Dataset> tiny_tests() {
    auto bench = data::generate_shifted_benchmark(selftrain::testing::tiny_spec(1));
    std::map<SplitTag, data::Dataset> out;
    for (auto& [tag, ds] : bench)
        if (data::is_test_split(tag)) out.emplace(tag, std::move(ds));
    return out;
}

}  // namespace

TEST(Suite, RowsCoverSplitsAndAreDeterministic) {
    const auto net = tiny_net(4);
    const auto splits = tiny_tests();
    const auto before = numerics::encode_checkpoint(net.state());
    EvalOptions o;
    o.resamples = 200;
    const auto a = evaluate_suite(net, splits, o, "Teacher");
    const auto b = evaluate_suite(net, splits, o, "Teacher");
    EXPECT_EQ(numerics::encode_checkpoint(net.state()), before);
    ASSERT_EQ(a.splits.size(), splits.size());
    for (const auto& s : a.splits) EXPECT_EQ(s.n, splits.at(s.split).size());
    EXPECT_EQ(report_csv({a}), report_csv({b}));
}

TEST(Suite, UnlabeledSplitRejected) {
    auto splits = tiny_tests();
    splits.begin()->second.labels[0] = data::Dataset::kNoLabel;
    EXPECT_THROW(evaluate_suite(tiny_net(4), splits, {}, "Teacher"), ContractError);
}

TEST(Suite, ModelTags) {
    EXPECT_EQ(canonical_model_tag("oracle"), "Oracle");
    EXPECT_EQ(canonical_model_tag("ST+FT"), "SS+FT");
    EXPECT_EQ(canonical_model_tag("nst+t+u"), "NST+T+U");
    try {
        canonical_model_tag("FixMatch");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("MPL+T"), std::string::npos);
    }
}

namespace {

MetricReport fake_report(const std::string& model, std::vector<SplitTag> tags, double f1) {
    MetricReport r{model, {}};
    for (auto t : tags) {
        SplitMetrics s;
        s.split = t;
        s.macro_f1 = f1;
        s.ci_lower = f1 - 0.01;
        s.ci_upper = f1 + 0.01;
        s.n = 100;
        r.splits.push_back(s);
    }
    return r;
}

}  // namespace

TEST(Report, OneModelOneSplit) {
    const auto csv = report_csv({fake_report("Teacher", {SplitTag::id_test}, 0.5)});
    EXPECT_EQ(csv, std::string(kReportCsvHeader) + "\nTeacher,id_test,0.500000,0.490000,0.510000,100\n");
}

TEST(Report, BoundsFormattedLowerUpper) {
    const auto table = report_table({fake_report("NST", {SplitTag::shift_a}, 0.8)});
    EXPECT_NE(table.find("0.7900, 0.8100"), std::string::npos) << table;
    EXPECT_NE(table.find("Bounds"), std::string::npos);
}

TEST(Report, RowsOrderedByModelNotation) {
    const auto csv = report_csv({fake_report("Oracle", {SplitTag::id_test}, 0.9),
                                 fake_report("MPL", {SplitTag::id_test}, 0.8),
                                 fake_report("Teacher", {SplitTag::id_test}, 0.7),
                                 fake_report("SS+FT", {SplitTag::id_test}, 0.75)});
    const auto t = csv.find("\nTeacher"), s = csv.find("\nSS+FT"), m = csv.find("\nMPL"), o = csv.find("\nOracle");
    EXPECT_LT(t, s);
    EXPECT_LT(s, m);
    EXPECT_LT(m, o);
}

TEST(Report, TableWidthsStable) {
    const auto a = report_table({fake_report("Teacher", {SplitTag::id_test, SplitTag::shift_b}, 0.123456)});
    const auto b = report_table({fake_report("NST+T+U", {SplitTag::id_test, SplitTag::shift_b}, 0.9)});
    auto line_lengths = [](const std::string& s) {
        std::vector<std::size_t> out;
        std::size_t start = 0;
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s[i] == '\n') {
                out.push_back(i - start);
                start = i + 1;
            }
        return out;
    };
    EXPECT_EQ(line_lengths(a), line_lengths(b));
}

TEST(Report, EmitWritesBothFilesAndReadsBack) {
    const auto dir = selftrain::testing::temp_dir("report");
    const std::vector<MetricReport> reports{fake_report("Teacher", {SplitTag::id_test, SplitTag::shift_a}, 0.6),
                                            fake_report("MPL", {SplitTag::id_test}, 0.7)};
    const auto files = emit_report(reports, dir);
    EXPECT_TRUE(std::filesystem::exists(files.csv));
    EXPECT_TRUE(std::filesystem::exists(files.table));
    const auto back = read_report_csv(files.csv);
    EXPECT_EQ(report_csv(back), report_csv(reports));
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        EXPECT_EQ(e.path().extension() == ".tmp", false) << e.path();
    }
    EXPECT_THROW(emit_report({}, dir), ContractError);
}

TEST(Report, UnwritableDirectoryIsIoError) {
    const auto dir = selftrain::testing::temp_dir("report-blocked");
    numerics::write_file_atomic(dir / "file", "x");
    EXPECT_THROW(emit_report({fake_report("Teacher", {SplitTag::id_test}, 0.5)}, dir / "file" / "sub"), IoError);
}
