#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace selftrain::train {

inline std::string format_g(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

struct StepRecord {
    long step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double aux = std::numeric_limits<double>::quiet_NaN();  // second loss where a strategy has one
};

// Everything needed to replay and audit one training run.
struct RunLog {
    std::string strategy;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<StepRecord> steps;
    std::vector<std::pair<long, double>> val_curve;  // (steps completed, validation macro F1)
    long best_step = -1;
    double best_val_f1 = std::numeric_limits<double>::quiet_NaN();

    std::vector<double> losses() const {
        std::vector<double> out;
        out.reserve(steps.size());
        for (const auto& s : steps) out.push_back(s.loss);
        return out;
    }

    std::string steps_csv() const {
        std::ostringstream out;
        out << "step,lr,loss,aux\n";
        for (const auto& s : steps) out << s.step << "," << format_g(s.lr) << "," << format_g(s.loss) << "," << format_g(s.aux) << "\n";
        return out.str();
    }

    std::string val_csv() const {
        std::ostringstream out;
        out << "step,val_macro_f1\n";
        for (const auto& [step, f1] : val_curve) out << step << "," << format_g(f1) << "\n";
        return out.str();
    }

    std::string summary() const {
        std::ostringstream out;
        out << "strategy: " << strategy << "\nseed: " << seed << "\nconfig_hash: " << config_hash
            << "\nsteps: " << steps.size() << "\nbest_step: " << best_step
            << "\nbest_val_macro_f1: " << format_g(best_val_f1) << "\n";
        return out.str();
    }
};

struct GenerationRecord {
    std::size_t generation = 0;
    std::string teacher_ref;
    std::size_t pool_size = 0;
    std::size_t pseudo_labels = 0;  // kept after filtering
    double val_macro_f1 = std::numeric_limits<double>::quiet_NaN();
    std::map<std::string, double> test_macro_f1;
};

struct GenerationLog {
    std::size_t max_generations = 0;
    std::vector<GenerationRecord> records;

    std::string text() const {
        std::ostringstream out;
        out << "max_generations: " << max_generations << "\n";
        for (const auto& r : records) {
            out << "generation " << r.generation << "\n"
                << "  teacher: " << r.teacher_ref << "\n"
                << "  unlabeled_pool: " << r.pool_size << "\n"
                << "  pseudo_labels_kept: " << r.pseudo_labels << "\n"
                << "  val_macro_f1: " << format_g(r.val_macro_f1) << "\n";
            for (const auto& [split, f1] : r.test_macro_f1) out << "  test." << split << ": " << format_g(f1) << "\n";
        }
        return out.str();
    }
};

}  // namespace selftrain::train
