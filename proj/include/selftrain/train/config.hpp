#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>

#include "selftrain/data/augment.hpp"
#include "selftrain/data/mixup.hpp"
#include "selftrain/errors.hpp"
#include "selftrain/nn/config.hpp"
#include "selftrain/nn/mc_dropout.hpp"
#include "selftrain/numerics/adam.hpp"

namespace selftrain::train {

inline constexpr long kFullMaxSteps = 30'000;
inline constexpr long kDeskMaxSteps = 3'000;

struct TrainConfig {
    nn::NetworkConfig network = nn::desk_scale_config();
    long max_steps = kFullMaxSteps;
    numerics::LrSchedule schedule;
    std::size_t teacher_batch = 128;
    std::size_t student_labeled_batch = 64;
    std::size_t student_unlabeled_batch = 64;
    double dropout = 0.5;
    double mixup_alpha = data::kDefaultMixupAlpha;  // 0 disables mixup
    data::AugmentPolicy augment = data::AugmentPolicy::standard();
    double entropy_weight = 0.2;
    double balance_weight = 0.2;
    long eval_every = 100;
    long patience = 0;  // evaluations without improvement before stopping; 0 = never
    double ss_ft_pretrain_fraction = 0.5;
    // Share of max_steps spent fine-tuning the MPL student on D_L after co-training.
    double mpl_finetune_fraction = 0.2;

    void validate() const {
        network.validate();
        schedule.validate();
        augment.validate();
        if (max_steps <= 0) throw ConfigError("max_steps must be positive");
        if (teacher_batch == 0 || student_labeled_batch == 0 || student_unlabeled_batch == 0) {
            throw ConfigError("batch sizes must be positive");
        }
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
        if (!(mixup_alpha >= 0.0) || !std::isfinite(mixup_alpha)) throw ConfigError("mixup alpha must be >= 0");
        if (!(entropy_weight >= 0.0) || !(balance_weight >= 0.0)) throw ConfigError("loss weights must be >= 0");
        if (eval_every <= 0) throw ConfigError("eval_every must be positive");
        if (patience < 0) throw ConfigError("patience must be >= 0");
        if (!(ss_ft_pretrain_fraction >= 0.0 && ss_ft_pretrain_fraction <= 1.0)) {
            throw ConfigError("ss_ft_pretrain_fraction must be in [0, 1]");
        }
        if (!(mpl_finetune_fraction >= 0.0 && mpl_finetune_fraction < 1.0)) {
            throw ConfigError("mpl_finetune_fraction must be in [0, 1)");
        }
    }

    nn::NetworkConfig network_config() const {
        auto c = network;
        c.dropout_rate = dropout;
        return c;
    }
};

enum class FilterMode { confidence, ups, both };

inline std::string to_string(FilterMode m) {
    switch (m) {
        case FilterMode::confidence: return "confidence";
        case FilterMode::ups: return "ups";
        case FilterMode::both: return "both";
    }
    return "unknown";
}

inline FilterMode parse_filter_mode(const std::string& s) {
    if (s == "confidence") return FilterMode::confidence;
    if (s == "ups") return FilterMode::ups;
    if (s == "both") return FilterMode::both;
    throw ConfigError("unknown filter mode '" + s + "' (confidence, ups, both)");
}

struct FilterConfig {
    FilterMode mode = FilterMode::confidence;
    double confidence_threshold = 0.4;
    double uncertainty_threshold = 0.10;
    std::size_t mc_passes = nn::kDefaultMcPasses;
    double temperature = 1.05;
    bool soft_labels = true;

    static FilterConfig nst() { return {}; }

    static FilterConfig mpl() {
        FilterConfig f;
        f.confidence_threshold = 0.2;
        f.temperature = 1.10;
        return f;
    }

    void validate() const {
        if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
            throw ConfigError("confidence threshold must be in [0, 1]");
        }
        if (!(uncertainty_threshold >= 0.0)) throw ConfigError("uncertainty threshold must be >= 0");
        if (mc_passes < 2) throw ConfigError("mc dropout needs at least 2 passes");
        if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
    }
};

inline constexpr std::size_t kDefaultGenerations = 2;

// FNV-1a over a canonical text rendering; used to tag run logs.
inline std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string describe(const TrainConfig& c) {
    std::ostringstream s;
    s.precision(17);
    s << "max_steps=" << c.max_steps << ";lr=" << c.schedule.base_lr << ";decay=" << c.schedule.decay_factor << "/"
      << c.schedule.decay_every << ";batches=" << c.teacher_batch << "," << c.student_labeled_batch << ","
      << c.student_unlabeled_batch << ";dropout=" << c.dropout << ";mixup=" << c.mixup_alpha
      << ";augment=" << c.augment.flip << "," << c.augment.quarter_turns.size() << "," << c.augment.brightness << ","
      << c.augment.contrast << "," << c.augment.saturation << "," << c.augment.hue << "," << c.augment.noise_scale
      << ";weights=" << c.entropy_weight << "," << c.balance_weight << ";eval_every=" << c.eval_every
      << ";patience=" << c.patience << ";ss_ft=" << c.ss_ft_pretrain_fraction << ";mpl_ft=" << c.mpl_finetune_fraction << ";net=" << c.network.num_classes
      << "," << c.network.input_channels << "x" << c.network.input_height << "x" << c.network.input_width << ","
      << c.network.blocks.size() << "," << c.network.batchnorm_momentum;
    for (const auto& b : c.network.blocks) s << "," << b.channels << "/" << b.stride;
    return s.str();
}

inline std::string describe(const FilterConfig& f) {
    std::ostringstream s;
    s.precision(17);
    s << "mode=" << to_string(f.mode) << ";k=" << f.confidence_threshold << ";u=" << f.uncertainty_threshold
      << ";passes=" << f.mc_passes << ";T=" << f.temperature << ";soft=" << f.soft_labels;
    return s.str();
}

}  // namespace selftrain::train
