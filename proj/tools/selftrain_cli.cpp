#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "selftrain/selftrain.hpp"

namespace fs = std::filesystem;
using namespace selftrain;

namespace {

struct Overrides {
    std::string config;
    std::string out;
    std::optional<long> max_steps;
    std::optional<double> lr;
    std::optional<double> labeled_fraction;
    std::optional<std::size_t> resamples;
    std::optional<std::string> manifest;
    bool fit_temperature = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config, "experiment config (JSON)");
    cmd->add_option("-o,--out", o.out, "output directory (overrides output_dir)");
    cmd->add_option("--max-steps", o.max_steps, "training steps per phase");
    cmd->add_option("--lr", o.lr, "base learning rate");
    cmd->add_option("--labeled-fraction", o.labeled_fraction, "share of training groups kept labeled");
    cmd->add_option("--resamples", o.resamples, "bootstrap resamples");
    cmd->add_option("--manifest", o.manifest, "dataset manifest instead of the synthetic benchmark");
    cmd->add_flag("--fit-temperature", o.fit_temperature, "fit the +T temperature on validation");
}

cli::ExperimentConfig resolve(const Overrides& o) {
    cli::ExperimentConfig c = o.config.empty() ? cli::ExperimentConfig{} : cli::load_experiment_config(o.config);
    if (!o.out.empty()) c.output_dir = o.out;
    if (o.max_steps) c.train.max_steps = *o.max_steps;
    if (o.lr) c.train.schedule.base_lr = *o.lr;
    if (o.labeled_fraction) c.labeled_fraction = *o.labeled_fraction;
    if (o.resamples) c.eval.resamples = *o.resamples;
    if (o.manifest) c.dataset_manifest = *o.manifest;
    if (o.fit_temperature) c.fit_temperature = true;
    cli::validate(c);
    return c;
}

void print_files(const std::vector<fs::path>& files) {
    for (const auto& f : files) std::cout << f.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Teacher-student self-training on a shifted benchmark"};
    app.require_subcommand(1);

    Overrides gen_o;
    std::uint64_t gen_seed = 0;
    auto* gen = app.add_subcommand("generate", "write the synthetic benchmark as a dataset bundle");
    add_common(gen, gen_o);
    gen->add_option("--seed", gen_seed, "benchmark seed");

    Overrides train_o;
    std::uint64_t train_seed = 0;
    std::string strategy;
    auto* train_cmd = app.add_subcommand("train", "train one strategy (and the teacher it needs)");
    add_common(train_cmd, train_o);
    train_cmd->add_option("-s,--strategy", strategy, "Teacher, SS+UL, SS+FT, NST, NST+T, NST+T+U, MPL, MPL+T, Oracle")
        ->required();
    train_cmd->add_option("--seed", train_seed, "run seed")->required();

    Overrides run_o;
    std::vector<std::uint64_t> run_seeds;
    auto* run = app.add_subcommand("run", "run every configured strategy and write the report");
    add_common(run, run_o);
    run->add_option("--seed", run_seeds, "run seed (repeatable)")->required();

    Overrides eval_o;
    std::string eval_checkpoint, eval_model = "Teacher";
    std::uint64_t eval_seed = 0;
    auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on the test splits");
    add_common(evaluate, eval_o);
    evaluate->add_option("--checkpoint", eval_checkpoint, "network checkpoint")->required();
    evaluate->add_option("--model", eval_model, "model tag used in the report");
    evaluate->add_option("--seed", eval_seed, "benchmark and bootstrap seed");

    std::vector<std::string> report_inputs;
    std::string report_out;
    auto* report = app.add_subcommand("report", "merge report.csv files (median per cell) and print the table");
    report->add_option("inputs", report_inputs, "run directories or report.csv files")->required();
    report->add_option("-o,--out", report_out, "write the merged report.csv/report.txt here");

    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect", "describe a checkpoint");
    inspect->add_option("checkpoint", inspect_path, "network checkpoint")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::kExitConfig;
    }

    try {
        if (*gen) {
            auto c = resolve(gen_o);
            const auto dir = cli::resolve_output_dir(c.output_dir);
            data::write_dataset_bundle(dir, data::generate_shifted_benchmark(cli::shift_spec_for(c, gen_seed)));
            std::cout << (dir / "manifest.csv").string() << "\n";
        } else if (*train_cmd) {
            auto c = resolve(train_o);
            c.strategies = {cli::canonical_strategy(strategy)};
            const auto dir = cli::resolve_output_dir(c.output_dir) / ("seed-" + std::to_string(train_seed));
            const auto a = cli::run_seed(c, train_seed, dir);
            print_files(a.files);
            std::cout << eval::report_table(a.reports);
        } else if (*run) {
            auto c = resolve(run_o);
            c.seeds = run_seeds;
            const auto a = cli::run_experiment(c, run_seeds, cli::resolve_output_dir(c.output_dir));
            std::cout << eval::report_table(a.reports);
        } else if (*evaluate) {
            auto c = resolve(eval_o);
            const auto net = cli::checkpoint_roundtrip(eval_checkpoint);
            const auto bench = cli::load_benchmark(c, eval_seed);
            std::map<data::SplitTag, data::Dataset> tests;
            for (const auto& [tag, ds] : bench)
                if (data::is_test_split(tag)) tests.emplace(tag, ds);
            const eval::EvalOptions opts{c.eval.resamples, c.eval.level, eval_seed,
                                         c.eval.unit == "group" ? eval::ResampleUnit::group : eval::ResampleUnit::sample};
            const std::vector<eval::MetricReport> reports{
                eval::evaluate_suite(net, tests, opts, cli::canonical_strategy(eval_model))};
            const auto files = eval::emit_report(reports, cli::resolve_output_dir(c.output_dir));
            print_files({files.csv, files.table});
            std::cout << eval::report_table(reports);
        } else if (*report) {
            std::vector<std::vector<eval::MetricReport>> inputs;
            for (const auto& in : report_inputs) {
                fs::path p(in);
                if (fs::is_directory(p)) p /= "report.csv";
                if (!fs::exists(p)) throw IoError("report not found: " + p.string());
                inputs.push_back(eval::read_report_csv(p));
            }
            const auto merged = inputs.size() == 1 ? inputs.front() : cli::median_reports(inputs);
            if (!report_out.empty()) {
                const auto files = eval::emit_report(merged, cli::resolve_output_dir(report_out));
                print_files({files.csv, files.table});
            }
            std::cout << eval::report_table(merged);
        } else if (*inspect) {
            const auto net = cli::checkpoint_roundtrip(inspect_path);
            const auto& cfg = net.config();
            std::cout << "classes: " << cfg.num_classes << "\ninput: " << cfg.input_channels << "x" << cfg.input_height
                      << "x" << cfg.input_width << "\nblocks:";
            for (const auto& b : cfg.blocks) std::cout << " " << b.channels << "/" << b.stride;
            std::cout << "\ndropout: " << cfg.dropout_rate << "\nparameters: " << nn::parameter_count(cfg) << "\n"
                      << nn::manifest_text(net);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cli::exit_code_for(e);
    }
    return cli::kExitOk;
}
