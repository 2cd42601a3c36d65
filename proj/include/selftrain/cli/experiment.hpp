#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "selftrain/data/benchmark.hpp"
#include "selftrain/data/manifest.hpp"
#include "selftrain/errors.hpp"
#include "selftrain/eval/report.hpp"
#include "selftrain/eval/suite.hpp"
#include "selftrain/nn/network.hpp"
#include "selftrain/train/strategies.hpp"
#include "selftrain/train/temperature.hpp"

namespace selftrain::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kOutputRootEnv = "SELFTRAIN_OUTPUT_ROOT";

struct BenchmarkSection {
    std::optional<std::uint64_t> seed;  // defaults to the run seed
    double noise = 1.0;
    std::size_t modes_per_class = 2;
    double group_effect = 0.2;
    double template_scale = 1.0;
    bool dihedral = true;
    std::size_t samples_per_group = 50;
    std::size_t train_groups = 440;
    std::size_t val_groups = 20;
    std::size_t test_groups = 40;
};

struct NstSection {
    train::FilterConfig filter = train::FilterConfig::nst();
    std::size_t generations = train::kDefaultGenerations;
};

struct EvalSection {
    std::size_t resamples = 1000;
    double level = 0.95;
    std::string unit = "sample";
};

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    std::string output_dir = "runs/experiment";
    std::vector<std::uint64_t> seeds{0};
    double labeled_fraction = 40.0 / 440.0;
    std::vector<std::string> strategies{"Teacher", "NST", "MPL", "Oracle"};
    std::optional<std::string> dataset_manifest;
    BenchmarkSection benchmark;
    std::string model_preset = "desk";
    std::optional<std::vector<nn::BlockSpec>> blocks;
    train::TrainConfig train;
    NstSection nst;
    train::FilterConfig mpl = train::FilterConfig::mpl();
    std::string mpl_student_init = "teacher";  // or "fresh"
    train::FilterConfig ss_ft = train::FilterConfig::nst();
    EvalSection eval;
    bool fit_temperature = false;

    ExperimentConfig() { train.max_steps = train::kDeskMaxSteps; }
};

// Strategy names accepted in configs: the report vocabulary.
inline std::string canonical_strategy(const std::string& name) { return eval::canonical_model_tag(name); }

inline std::string strategy_slug(const std::string& tag) {
    std::string out;
    for (char ch : tag) {
        if (ch == '+') {
            out.push_back('_');
        } else {
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    return out;
}

namespace detail {

inline void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [k, v] : j.items()) {
        bool known = false;
        for (const char* key : keys) known = known || k == key;
        if (!known) throw ConfigError("unknown key '" + k + "' in config section '" + section + "'");
    }
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

inline void read_filter(const json& j, const std::string& section, train::FilterConfig& f) {
    reject_unknown(j, section,
                   {"mode", "confidence_threshold", "uncertainty_threshold", "mc_passes", "temperature", "soft_labels",
                    "generations"});
    if (j.contains("mode")) f.mode = train::parse_filter_mode(j.at("mode").get<std::string>());
    read(j, "confidence_threshold", f.confidence_threshold);
    read(j, "uncertainty_threshold", f.uncertainty_threshold);
    read(j, "mc_passes", f.mc_passes);
    read(j, "temperature", f.temperature);
    read(j, "soft_labels", f.soft_labels);
}

inline json filter_json(const train::FilterConfig& f) {
    return json{{"mode", train::to_string(f.mode)},
                {"confidence_threshold", f.confidence_threshold},
                {"uncertainty_threshold", f.uncertainty_threshold},
                {"mc_passes", f.mc_passes},
                {"temperature", f.temperature},
                {"soft_labels", f.soft_labels}};
}

}  // namespace detail

inline nn::NetworkConfig model_config(const ExperimentConfig& c, std::size_t classes, const numerics::Shape& input) {
    nn::NetworkConfig net;
    if (c.model_preset == "desk") {
        net = nn::desk_scale_config(classes, input);
    } else if (c.model_preset == "full") {
        net = nn::full_scale_config(classes);
        net.input_channels = input.at(0);
        net.input_height = input.at(1);
        net.input_width = input.at(2);
    } else {
        throw ConfigError("unknown model preset '" + c.model_preset + "' (desk, full)");
    }
    if (c.blocks) net.blocks = *c.blocks;
    net.batchnorm_momentum = c.train.network.batchnorm_momentum;
    return net;
}

inline void validate(const ExperimentConfig& c) {
    if (c.schema_version != kSchemaVersion) {
        throw ConfigError("unsupported config schema_version " + std::to_string(c.schema_version) + " (expected " +
                          std::to_string(kSchemaVersion) + ")");
    }
    if (c.seeds.empty()) throw ConfigError("config needs at least one seed");
    if (c.strategies.empty()) throw ConfigError("config needs at least one strategy");
    std::set<std::string> seen;
    for (const auto& s : c.strategies) {
        if (!seen.insert(canonical_strategy(s)).second) throw ConfigError("strategy '" + s + "' listed twice");
    }
    if (!(c.labeled_fraction > 0.0 && c.labeled_fraction <= 1.0)) throw ConfigError("labeled_fraction must be in (0, 1]");
    if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
    if (c.model_preset != "desk" && c.model_preset != "full") throw ConfigError("model preset must be desk or full");
    c.train.validate();
    c.nst.filter.validate();
    if (c.nst.generations == 0) throw ConfigError("nst.generations must be >= 1");
    c.mpl.validate();
    if (c.mpl_student_init != "teacher" && c.mpl_student_init != "fresh") {
        throw ConfigError("mpl.student_init must be teacher or fresh");
    }
    c.ss_ft.validate();
    if (c.eval.resamples < 100) throw ConfigError("eval.resamples must be >= 100");
    if (!(c.eval.level > 0.0 && c.eval.level < 1.0)) throw ConfigError("eval.level must be in (0, 1)");
    if (c.eval.unit != "sample" && c.eval.unit != "group") throw ConfigError("eval.unit must be sample or group");
    const auto& b = c.benchmark;
    if (!(b.noise >= 0.0) || !(b.group_effect >= 0.0) || !(b.template_scale > 0.0)) {
        throw ConfigError("benchmark scales must be non-negative");
    }
    if (b.modes_per_class == 0 || b.samples_per_group == 0 || b.train_groups == 0 || b.val_groups == 0 ||
        b.test_groups == 0) {
        throw ConfigError("benchmark sizes must be positive");
    }
}

inline ExperimentConfig parse_experiment_config(const json& j) {
    ExperimentConfig c;
    detail::reject_unknown(j, "root",
                           {"schema_version", "output_dir", "seeds", "labeled_fraction", "strategies", "dataset_manifest",
                            "benchmark", "model", "train", "nst", "mpl", "ss_ft", "eval", "fit_temperature"});
    if (!j.contains("schema_version")) throw ConfigError("config is missing schema_version");
    detail::read(j, "schema_version", c.schema_version);
    if (c.schema_version != kSchemaVersion) {
        throw ConfigError("unsupported config schema_version " + std::to_string(c.schema_version));
    }
    detail::read(j, "output_dir", c.output_dir);
    detail::read(j, "seeds", c.seeds);
    detail::read(j, "labeled_fraction", c.labeled_fraction);
    detail::read(j, "strategies", c.strategies);
    detail::read(j, "fit_temperature", c.fit_temperature);
    if (j.contains("dataset_manifest")) c.dataset_manifest = j.at("dataset_manifest").get<std::string>();
    if (j.contains("benchmark")) {
        const auto& b = j.at("benchmark");
        detail::reject_unknown(b, "benchmark",
                               {"seed", "noise", "modes_per_class", "group_effect", "template_scale", "dihedral",
                                "samples_per_group", "train_groups", "val_groups", "test_groups"});
        if (b.contains("seed")) c.benchmark.seed = b.at("seed").get<std::uint64_t>();
        detail::read(b, "noise", c.benchmark.noise);
        detail::read(b, "modes_per_class", c.benchmark.modes_per_class);
        detail::read(b, "group_effect", c.benchmark.group_effect);
        detail::read(b, "template_scale", c.benchmark.template_scale);
        detail::read(b, "dihedral", c.benchmark.dihedral);
        detail::read(b, "samples_per_group", c.benchmark.samples_per_group);
        detail::read(b, "train_groups", c.benchmark.train_groups);
        detail::read(b, "val_groups", c.benchmark.val_groups);
        detail::read(b, "test_groups", c.benchmark.test_groups);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::reject_unknown(m, "model", {"preset", "blocks", "batchnorm_momentum"});
        detail::read(m, "preset", c.model_preset);
        if (m.contains("blocks")) {
            std::vector<nn::BlockSpec> blocks;
            for (const auto& b : m.at("blocks")) {
                if (!b.is_array() || b.size() != 2) throw ConfigError("model.blocks entries must be [channels, stride]");
                blocks.push_back({b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>()});
            }
            c.blocks = std::move(blocks);
        }
        detail::read(m, "batchnorm_momentum", c.train.network.batchnorm_momentum);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::reject_unknown(t, "train",
                               {"max_steps", "lr", "lr_decay_factor", "lr_decay_every", "teacher_batch",
                                "student_labeled_batch", "student_unlabeled_batch", "dropout", "mixup_alpha", "augment",
                                "entropy_weight", "balance_weight", "eval_every", "patience", "ss_ft_pretrain_fraction",
                                "mpl_finetune_fraction"});
        auto& tc = c.train;
        detail::read(t, "max_steps", tc.max_steps);
        detail::read(t, "lr", tc.schedule.base_lr);
        detail::read(t, "lr_decay_factor", tc.schedule.decay_factor);
        detail::read(t, "lr_decay_every", tc.schedule.decay_every);
        detail::read(t, "teacher_batch", tc.teacher_batch);
        detail::read(t, "student_labeled_batch", tc.student_labeled_batch);
        detail::read(t, "student_unlabeled_batch", tc.student_unlabeled_batch);
        detail::read(t, "dropout", tc.dropout);
        detail::read(t, "mixup_alpha", tc.mixup_alpha);
        bool augment = true;
        detail::read(t, "augment", augment);
        if (!augment) tc.augment = data::AugmentPolicy::identity();
        detail::read(t, "entropy_weight", tc.entropy_weight);
        detail::read(t, "balance_weight", tc.balance_weight);
        detail::read(t, "eval_every", tc.eval_every);
        detail::read(t, "patience", tc.patience);
        detail::read(t, "ss_ft_pretrain_fraction", tc.ss_ft_pretrain_fraction);
        detail::read(t, "mpl_finetune_fraction", tc.mpl_finetune_fraction);
    }
    if (j.contains("nst")) {
        detail::read_filter(j.at("nst"), "nst", c.nst.filter);
        detail::read(j.at("nst"), "generations", c.nst.generations);
    }
    if (j.contains("mpl")) {
        auto m = j.at("mpl");
        if (m.is_object() && m.contains("student_init")) {
            detail::read(m, "student_init", c.mpl_student_init);
            m.erase("student_init");
        }
        detail::read_filter(m, "mpl", c.mpl);
    }
    if (j.contains("ss_ft")) detail::read_filter(j.at("ss_ft"), "ss_ft", c.ss_ft);
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        detail::reject_unknown(e, "eval", {"resamples", "level", "unit"});
        detail::read(e, "resamples", c.eval.resamples);
        detail::read(e, "level", c.eval.level);
        detail::read(e, "unit", c.eval.unit);
    }
    for (auto& s : c.strategies) s = canonical_strategy(s);
    validate(c);
    return c;
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    try {
        return parse_experiment_config(json::parse(numerics::read_file(path)));
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
}

// The fully resolved config, written next to every run.
inline json to_json(const ExperimentConfig& c) {
    json j;
    j["schema_version"] = c.schema_version;
    j["output_dir"] = c.output_dir;
    j["seeds"] = c.seeds;
    j["labeled_fraction"] = c.labeled_fraction;
    j["strategies"] = c.strategies;
    if (c.dataset_manifest) j["dataset_manifest"] = *c.dataset_manifest;
    json b{{"noise", c.benchmark.noise},
           {"modes_per_class", c.benchmark.modes_per_class},
           {"group_effect", c.benchmark.group_effect},
           {"template_scale", c.benchmark.template_scale},
           {"dihedral", c.benchmark.dihedral},
           {"samples_per_group", c.benchmark.samples_per_group},
           {"train_groups", c.benchmark.train_groups},
           {"val_groups", c.benchmark.val_groups},
           {"test_groups", c.benchmark.test_groups}};
    if (c.benchmark.seed) b["seed"] = *c.benchmark.seed;
    j["benchmark"] = b;
    json m{{"preset", c.model_preset}, {"batchnorm_momentum", c.train.network.batchnorm_momentum}};
    if (c.blocks) {
        json blocks = json::array();
        for (const auto& blk : *c.blocks) blocks.push_back({blk.channels, blk.stride});
        m["blocks"] = blocks;
    }
    j["model"] = m;
    const auto& t = c.train;
    j["train"] = json{{"max_steps", t.max_steps},
                      {"lr", t.schedule.base_lr},
                      {"lr_decay_factor", t.schedule.decay_factor},
                      {"lr_decay_every", t.schedule.decay_every},
                      {"teacher_batch", t.teacher_batch},
                      {"student_labeled_batch", t.student_labeled_batch},
                      {"student_unlabeled_batch", t.student_unlabeled_batch},
                      {"dropout", t.dropout},
                      {"mixup_alpha", t.mixup_alpha},
                      {"augment", !t.augment.is_identity()},
                      {"entropy_weight", t.entropy_weight},
                      {"balance_weight", t.balance_weight},
                      {"eval_every", t.eval_every},
                      {"patience", t.patience},
                      {"ss_ft_pretrain_fraction", t.ss_ft_pretrain_fraction},
                      {"mpl_finetune_fraction", t.mpl_finetune_fraction}};
    auto nst = detail::filter_json(c.nst.filter);
    nst["generations"] = c.nst.generations;
    j["nst"] = nst;
    j["mpl"] = detail::filter_json(c.mpl);
    j["mpl"]["student_init"] = c.mpl_student_init;
    j["ss_ft"] = detail::filter_json(c.ss_ft);
    j["eval"] = json{{"resamples", c.eval.resamples}, {"level", c.eval.level}, {"unit", c.eval.unit}};
    j["fit_temperature"] = c.fit_temperature;
    return j;
}

// Relative output paths resolve against $SELFTRAIN_OUTPUT_ROOT when it is set.
inline fs::path resolve_output_dir(const std::string& dir) {
    fs::path p(dir);
    if (p.is_relative()) {
        if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') return fs::path(root) / p;
    }
    return p;
}

inline data::ShiftSpec shift_spec_for(const ExperimentConfig& c, std::uint64_t run_seed) {
    auto spec = data::default_shift_spec(c.benchmark.seed.value_or(run_seed));
    spec.noise = c.benchmark.noise;
    spec.modes_per_class = c.benchmark.modes_per_class;
    spec.group_effect = c.benchmark.group_effect;
    spec.template_scale = c.benchmark.template_scale;
    spec.dihedral = c.benchmark.dihedral;
    for (auto& s : spec.splits) {
        s.samples_per_group = c.benchmark.samples_per_group;
        s.groups = s.tag == data::SplitTag::train ? c.benchmark.train_groups
                   : s.tag == data::SplitTag::val ? c.benchmark.val_groups
                                                  : c.benchmark.test_groups;
    }
    return spec;
}

inline data::Benchmark load_benchmark(const ExperimentConfig& c, std::uint64_t run_seed) {
    if (c.dataset_manifest) {
        if (!fs::exists(*c.dataset_manifest)) throw IoError("dataset manifest not found: " + *c.dataset_manifest);
        return data::read_dataset_manifest(*c.dataset_manifest);
    }
    return data::generate_shifted_benchmark(shift_spec_for(c, run_seed));
}

inline std::uint64_t strategy_seed(std::uint64_t seed, const std::string& tag) {
    return numerics::splitmix64(seed ^ std::stoull(train::fnv1a_hex(tag), nullptr, 16));
}

// Loads a checkpoint into a network, or fails without returning a partial one.
inline nn::Network<float> checkpoint_roundtrip(const fs::path& path) { return nn::load_network<float>(path); }

struct RunArtifacts {
    fs::path root;
    std::vector<fs::path> files;
    std::vector<eval::MetricReport> reports;
};

namespace detail {

class ArtifactWriter {
public:
    explicit ArtifactWriter(fs::path root) : root_(std::move(root)) {}

    fs::path text(const fs::path& rel, const std::string& content) {
        const auto p = prepare(rel);
        numerics::write_file_atomic(p, content);
        return p;
    }

    fs::path network(const fs::path& rel, const nn::Network<float>& net) {
        const auto p = prepare(rel);
        nn::save_network(p, net);
        return p;
    }

    void run_log(const fs::path& dir, const train::RunLog& log) {
        text(dir / "steps.csv", log.steps_csv());
        text(dir / "val_curve.csv", log.val_csv());
        text(dir / "run.txt", log.summary());
    }

    const fs::path& root() const { return root_; }
    std::vector<fs::path> files;

private:
    fs::path prepare(const fs::path& rel) {
        const auto p = root_ / rel;
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + p.parent_path().string() + ": " + ec.message());
        files.push_back(p);
        return p;
    }

    fs::path root_;
};

inline std::map<data::SplitTag, data::Dataset> test_splits(const data::Benchmark& bench) {
    std::map<data::SplitTag, data::Dataset> out;
    for (const auto& [tag, ds] : bench)
        if (data::is_test_split(tag)) out.emplace(tag, ds);
    return out;
}

inline const data::Dataset& split_or_throw(const data::Benchmark& bench, data::SplitTag tag) {
    auto it = bench.find(tag);
    if (it == bench.end()) throw DataError("dataset has no " + data::to_string(tag) + " split");
    return it->second;
}

}  // namespace detail

// Runs the configured strategies for one seed in dependency order and writes
// every artifact under `root`.
inline RunArtifacts run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& root) {
    validate(cfg);
    const auto bench = load_benchmark(cfg, seed);
    const auto& train_split = detail::split_or_throw(bench, data::SplitTag::train);
    const auto& val = detail::split_or_throw(bench, data::SplitTag::val);
    const auto tests = detail::test_splits(bench);
    if (tests.empty()) throw DataError("dataset has no test splits");

    train::TrainConfig tc = cfg.train;
    tc.network = model_config(cfg, train_split.num_classes, train_split.sample_shape());
    tc.validate();
    const auto [labeled, pool] = data::split_labeled_unlabeled(train_split, cfg.labeled_fraction, seed);

    detail::ArtifactWriter out(root);
    auto snapshot = to_json(cfg);
    snapshot["run_seed"] = seed;
    out.text("config.json", snapshot.dump(2) + "\n");

    const eval::EvalOptions eopts{cfg.eval.resamples, cfg.eval.level, seed,
                                  cfg.eval.unit == "group" ? eval::ResampleUnit::group : eval::ResampleUnit::sample};
    RunArtifacts artifacts{root, {}, {}};
    auto record = [&](const std::string& tag, const nn::Network<float>& net) {
        out.network(fs::path(strategy_slug(tag)) / "checkpoint.slt", net);
        artifacts.reports.push_back(eval::evaluate_suite(net, tests, eopts, tag));
    };

    const auto has = [&](const char* tag) {
        return std::find(cfg.strategies.begin(), cfg.strategies.end(), tag) != cfg.strategies.end();
    };
    const bool needs_teacher = has("Teacher") || has("NST") || has("NST+T") || has("NST+T+U") || has("MPL") ||
                               has("MPL+T") || has("SS+FT");

    std::optional<nn::Network<float>> teacher;
    if (needs_teacher) {
        auto r = train::train_teacher(labeled, &val, tc, strategy_seed(seed, "Teacher"));
        out.run_log("teacher", r.log);
        teacher = std::move(r.network);
        if (has("Teacher")) {
            record("Teacher", *teacher);
        } else {
            out.network("teacher/checkpoint.slt", *teacher);
        }
    }

    std::optional<double> fitted;
    auto plus_t = [&](double fixed) {
        if (!cfg.fit_temperature) return fixed;
        if (!fitted) {
            const auto fit = train::fit_temperature(*teacher, val);
            fitted = fit.temperature;
            out.text("teacher/temperature.txt", "temperature: " + train::format_g(fit.temperature) +
                                                    "\nval_nll: " + train::format_g(fit.nll) +
                                                    "\nval_nll_at_1: " + train::format_g(fit.nll_at_one) + "\n");
        }
        return *fitted;
    };

    for (const auto& tag : cfg.strategies) {
        const auto sseed = strategy_seed(seed, tag);
        const fs::path dir = strategy_slug(tag);
        if (tag == "Teacher") continue;
        if (tag == "Oracle") {
            auto r = train::train_teacher(train_split, &val, tc, sseed);
            r.log.strategy = "oracle";
            out.run_log(dir, r.log);
            record(tag, r.network);
        } else if (tag == "NST" || tag == "NST+T" || tag == "NST+T+U") {
            auto filter = cfg.nst.filter;
            filter.temperature = tag == "NST" ? 1.0 : plus_t(cfg.nst.filter.temperature);
            if (tag == "NST+T+U") filter.mode = train::FilterMode::both;
            auto r = train::train_nst(*teacher, labeled, pool, &val, tc, filter, cfg.nst.generations, sseed);
            for (std::size_t g = 0; g < r.students.size(); ++g) {
                const auto gdir = dir / ("generation" + std::to_string(g + 1));
                out.network(gdir / "checkpoint.slt", r.students[g]);
                out.run_log(gdir, r.logs[g]);
                for (const auto& [split, ds] : tests) {
                    r.generations.records[g].test_macro_f1[data::to_string(split)] = eval::macro_f1_on(r.students[g], ds);
                }
            }
            out.text(dir / "generations.txt", r.generations.text());
            record(tag, r.student);
        } else if (tag == "MPL" || tag == "MPL+T") {
            auto filter = cfg.mpl;
            filter.temperature = tag == "MPL" ? 1.0 : plus_t(cfg.mpl.temperature);
            train::MplOptions opts;
            opts.student_from_teacher = cfg.mpl_student_init == "teacher";
            auto r = train::train_mpl(*teacher, labeled, pool, &val, tc, filter, sseed, opts);
            out.run_log(dir, r.log);
            if (!r.finetune_log.steps.empty()) out.run_log(dir / "finetune", r.finetune_log);
            out.network(dir / "teacher_checkpoint.slt", r.teacher);
            record(tag, r.student);
        } else if (tag == "SS+UL") {
            auto r = train::train_ss_ul(labeled, pool, &val, tc, sseed);
            out.run_log(dir, r.log);
            record(tag, r.network);
        } else if (tag == "SS+FT") {
            auto r = train::train_ss_ft(*teacher, labeled, pool, &val, tc, cfg.ss_ft, sseed);
            if (r.pretrained) {
                out.network(dir / "pretrain_checkpoint.slt", *r.pretrained);
                out.run_log(dir / "pretrain", r.pretrain_log);
            }
            if (!r.finetune_log.steps.empty()) out.run_log(dir / "finetune", r.finetune_log);
            record(tag, r.network);
        }
    }

    const auto files = eval::emit_report(artifacts.reports, root);
    out.files.push_back(files.csv);
    out.files.push_back(files.table);
    artifacts.files = out.files;
    return artifacts;
}

// Median across seeds of each (model, split) cell.
inline std::vector<eval::MetricReport> median_reports(const std::vector<std::vector<eval::MetricReport>>& per_seed) {
    std::map<std::pair<std::size_t, std::string>, std::map<data::SplitTag, std::vector<eval::SplitMetrics>>> cells;
    for (const auto& reports : per_seed)
        for (const auto& r : reports)
            for (const auto& s : r.splits) cells[{eval::model_rank(r.model), r.model}][s.split].push_back(s);
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    std::vector<eval::MetricReport> out;
    for (const auto& [key, splits] : cells) {
        eval::MetricReport r{key.second, {}};
        for (const auto& [tag, list] : splits) {
            eval::SplitMetrics m;
            m.split = tag;
            std::vector<double> f1, lo, hi;
            for (const auto& s : list) {
                f1.push_back(s.macro_f1);
                lo.push_back(s.ci_lower);
                hi.push_back(s.ci_upper);
                m.n = s.n;
            }
            m.macro_f1 = median(f1);
            m.ci_lower = median(lo);
            m.ci_upper = median(hi);
            r.splits.push_back(std::move(m));
        }
        out.push_back(std::move(r));
    }
    return out;
}

// Full pipeline over `seeds`; one subdirectory per seed plus a top-level report
// (per-cell medians when more than one seed ran).
inline RunArtifacts run_experiment(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                   const fs::path& root) {
    validate(cfg);
    if (seeds.empty()) throw ConfigError("run needs at least one seed");
    RunArtifacts all{root, {}, {}};
    std::vector<std::vector<eval::MetricReport>> per_seed;
    for (auto seed : seeds) {
        auto a = run_seed(cfg, seed, root / ("seed-" + std::to_string(seed)));
        all.files.insert(all.files.end(), a.files.begin(), a.files.end());
        per_seed.push_back(std::move(a.reports));
    }
    all.reports = seeds.size() == 1 ? per_seed.front() : median_reports(per_seed);
    const auto files = eval::emit_report(all.reports, root);
    all.files.push_back(files.csv);
    all.files.push_back(files.table);
    return all;
}

inline RunArtifacts run_experiment(const fs::path& config_path) {
    const auto cfg = load_experiment_config(config_path);
    return run_experiment(cfg, cfg.seeds, resolve_output_dir(cfg.output_dir));
}

// Process exit codes for the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDivergence = 4;

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) != nullptr) return kExitConfig;
    if (dynamic_cast<const DataError*>(&e) != nullptr || dynamic_cast<const IoError*>(&e) != nullptr) return kExitData;
    if (dynamic_cast<const DivergenceError*>(&e) != nullptr) return kExitDivergence;
    return kExitOther;
}

}  // namespace selftrain::cli
