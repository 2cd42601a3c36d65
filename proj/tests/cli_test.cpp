#include <gtest/gtest.h>

#include <cstdlib>

#include "test_support.hpp"

using namespace selftrain;
using namespace selftrain::cli;

namespace {

json tiny_config_json() {
    return json::parse(R"({
        "schema_version": 1,
        "labeled_fraction": 0.5,
        "strategies": ["teacher"],
        "benchmark": {"samples_per_group": 6, "train_groups": 30, "val_groups": 4, "test_groups": 4},
        "model": {"blocks": [[4, 1], [6, 2]]},
        "train": {"max_steps": 12, "teacher_batch": 16, "student_labeled_batch": 8,
                  "student_unlabeled_batch": 8, "eval_every": 6, "lr": 0.003},
        "eval": {"resamples": 100}
    })");
}

struct EnvGuard {
    explicit EnvGuard(const char* value) {
        if (const char* old = std::getenv(kOutputRootEnv)) saved = old;
        if (value) ::setenv(kOutputRootEnv, value, 1);
        else ::unsetenv(kOutputRootEnv);
    }
    ~EnvGuard() {
        if (saved) ::setenv(kOutputRootEnv, saved->c_str(), 1);
        else ::unsetenv(kOutputRootEnv);
    }
    std::optional<std::string> saved;
};

}  // namespace

TEST(Config, MinimalConfigGetsDefaults) {
    const auto c = parse_experiment_config(json::parse(R"({"schema_version": 1})"));
    EXPECT_DOUBLE_EQ(c.train.schedule.base_lr, 1e-4);
    EXPECT_DOUBLE_EQ(c.train.schedule.decay_factor, 0.5);
    EXPECT_EQ(c.train.schedule.decay_every, 10000u);
    EXPECT_DOUBLE_EQ(c.train.dropout, 0.5);
    EXPECT_DOUBLE_EQ(c.train.mixup_alpha, 0.2);
    EXPECT_EQ(c.train.teacher_batch, 128u);
    EXPECT_EQ(c.train.student_labeled_batch, 64u);
    EXPECT_EQ(c.train.student_unlabeled_batch, 64u);
    EXPECT_DOUBLE_EQ(c.nst.filter.confidence_threshold, 0.4);
    EXPECT_DOUBLE_EQ(c.nst.filter.temperature, 1.05);
    EXPECT_EQ(c.nst.generations, 2u);
    EXPECT_DOUBLE_EQ(c.mpl.confidence_threshold, 0.2);
    EXPECT_DOUBLE_EQ(c.mpl.temperature, 1.10);
    EXPECT_EQ(c.mpl_student_init, "teacher");
    EXPECT_DOUBLE_EQ(c.nst.filter.uncertainty_threshold, 0.10);
    EXPECT_EQ(c.nst.filter.mc_passes, 10u);
    EXPECT_TRUE(c.nst.filter.soft_labels);
    EXPECT_DOUBLE_EQ(c.train.network.batchnorm_momentum, 0.6);
    EXPECT_EQ(c.strategies, (std::vector<std::string>{"Teacher", "NST", "MPL", "Oracle"}));
}

TEST(Config, UnknownKeysRejectedEverywhere) {
    for (const char* text : {R"({"schema_version": 1, "sedes": [1]})",
                             R"({"schema_version": 1, "train": {"max_step": 3}})",
                             R"({"schema_version": 1, "nst": {"keep": 0.3}})",
                             R"({"schema_version": 1, "eval": {"resample": 200}})",
                             R"({"schema_version": 1, "benchmark": {"noise_level": 1}})"}) {
        EXPECT_THROW(parse_experiment_config(json::parse(text)), ConfigError) << text;
    }
}

TEST(Config, SchemaVersionRequired) {
    EXPECT_THROW(parse_experiment_config(json::parse("{}")), ConfigError);
    EXPECT_THROW(parse_experiment_config(json::parse(R"({"schema_version": 2})")), ConfigError);
}

TEST(Config, RangesValidated) {
    for (const char* text : {R"({"schema_version": 1, "labeled_fraction": 0})",
                             R"({"schema_version": 1, "labeled_fraction": 1.5})",
                             R"({"schema_version": 1, "train": {"lr": -1}})",
                             R"({"schema_version": 1, "train": {"teacher_batch": 0}})",
                             R"({"schema_version": 1, "eval": {"resamples": 10}})",
                             R"({"schema_version": 1, "strategies": ["FixMatch"]})",
                             R"({"schema_version": 1, "strategies": ["NST", "nst"]})",
                             R"({"schema_version": 1, "model": {"preset": "huge"}})",
                             R"({"schema_version": 1, "mpl": {"student_init": "random"}})"}) {
        EXPECT_THROW(parse_experiment_config(json::parse(text)), ConfigError) << text;
    }
}

TEST(Config, FileErrorsAreConfigErrors) {
    const auto dir = selftrain::testing::temp_dir("cli-config");
    EXPECT_THROW(load_experiment_config(dir / "missing.json"), ConfigError);
    numerics::write_file_atomic(dir / "bad.json", "{ not json");
    EXPECT_THROW(load_experiment_config(dir / "bad.json"), ConfigError);
}

TEST(Config, SnapshotRoundTrips) {
    const auto c = parse_experiment_config(tiny_config_json());
    const auto again = parse_experiment_config(to_json(c));
    EXPECT_EQ(to_json(again).dump(), to_json(c).dump());
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(exit_code_for(ConfigError("x")), kExitConfig);
    EXPECT_EQ(exit_code_for(SplitError("x")), kExitData);
    EXPECT_EQ(exit_code_for(IoError("x")), kExitData);
    EXPECT_EQ(exit_code_for(DivergenceError("x", 3)), kExitDivergence);
    EXPECT_EQ(exit_code_for(std::runtime_error("x")), kExitOther);
}

TEST(Cli, OutputRootFromEnvironment) {
    {
        EnvGuard env("/tmp/somewhere");
        EXPECT_EQ(resolve_output_dir("runs/a"), std::filesystem::path("/tmp/somewhere/runs/a"));
        EXPECT_EQ(resolve_output_dir("/abs/b"), std::filesystem::path("/abs/b"));
    }
    EnvGuard unset(nullptr);
    EXPECT_EQ(resolve_output_dir("runs/a"), std::filesystem::path("runs/a"));
}

TEST(Cli, StrategySeedsDiffer) {
    EXPECT_NE(strategy_seed(0, "NST"), strategy_seed(0, "MPL"));
    EXPECT_EQ(strategy_seed(4, "NST"), strategy_seed(4, "NST"));
}

TEST(Run, TeacherOnlyWritesTeacherArtifacts) {
    const auto cfg = parse_experiment_config(tiny_config_json());
    const auto root = selftrain::testing::temp_dir("cli-teacher");
    const auto a = run_experiment(cfg, {3}, root);
    ASSERT_EQ(a.reports.size(), 1u);
    EXPECT_EQ(a.reports[0].model, "Teacher");
    EXPECT_TRUE(std::filesystem::exists(root / "report.csv"));
    EXPECT_TRUE(std::filesystem::exists(root / "seed-3" / "config.json"));
    EXPECT_TRUE(std::filesystem::exists(root / "seed-3" / "teacher" / "checkpoint.slt"));
    for (const auto& e : std::filesystem::directory_iterator(root / "seed-3")) {
        if (e.is_directory()) {
            EXPECT_EQ(e.path().filename(), "teacher");
        }
    }
    const auto net = checkpoint_roundtrip(root / "seed-3" / "teacher" / "checkpoint.slt");
    EXPECT_EQ(net.config().num_classes, 13u);
}

TEST(Run, ReportsByteIdenticalAcrossRuns) {
    auto j = tiny_config_json();
    j["strategies"] = {"Teacher", "NST", "MPL"};
    j["nst"] = {{"generations", 1}};
    const auto cfg = parse_experiment_config(j);
    const auto r1 = selftrain::testing::temp_dir("cli-det-1"), r2 = selftrain::testing::temp_dir("cli-det-2");
    run_experiment(cfg, {1, 2}, r1);
    run_experiment(cfg, {1, 2}, r2);
    EXPECT_EQ(numerics::read_file(r1 / "report.csv"), numerics::read_file(r2 / "report.csv"));
    EXPECT_EQ(numerics::read_file(r1 / "seed-1" / "report.csv"), numerics::read_file(r2 / "seed-1" / "report.csv"));
    EXPECT_EQ(numerics::read_file(r1 / "report.txt"), numerics::read_file(r2 / "report.txt"));
}

TEST(Run, MissingManifestIsIoError) {
    auto j = tiny_config_json();
    j["dataset_manifest"] = "/nonexistent/manifest.csv";
    const auto cfg = parse_experiment_config(j);
    try {
        run_experiment(cfg, {0}, selftrain::testing::temp_dir("cli-manifest"));
        FAIL();
    } catch (const IoError& e) {
        EXPECT_EQ(exit_code_for(e), kExitData);
    }
}

TEST(Run, ManifestBundleIsUsed) {
    auto j = tiny_config_json();
    const auto cfg0 = parse_experiment_config(j);
    const auto dir = selftrain::testing::temp_dir("cli-bundle");
    data::write_dataset_bundle(dir / "data", load_benchmark(cfg0, 9));
    j["dataset_manifest"] = (dir / "data" / "manifest.csv").string();
    const auto cfg = parse_experiment_config(j);
    const auto a = run_experiment(cfg, {9}, dir / "from-manifest");
    const auto b = run_experiment(cfg0, {9}, dir / "generated");
    EXPECT_EQ(eval::report_csv(a.reports), eval::report_csv(b.reports));
}

TEST(Checkpoint, RoundTripErrors) {
    const auto dir = selftrain::testing::temp_dir("cli-ckpt");
    EXPECT_THROW(checkpoint_roundtrip(dir / "missing.slt"), IoError);
    numerics::write_file_atomic(dir / "junk.slt", "not a checkpoint at all");
    EXPECT_THROW(checkpoint_roundtrip(dir / "junk.slt"), FormatError);
    nn::NetworkConfig c = nn::desk_scale_config(3);
    c.blocks = {{4, 1}};
    nn::save_network(dir / "ok.slt", nn::Network<float>(c, 1));
    auto bytes = numerics::read_file(dir / "ok.slt");
    numerics::write_file_atomic(dir / "cut.slt", bytes.substr(0, bytes.size() / 2));
    EXPECT_THROW(checkpoint_roundtrip(dir / "cut.slt"), IoError);
}
