#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "selftrain/errors.hpp"
#include "selftrain/numerics/tensor.hpp"

namespace selftrain::nn {

using numerics::Shape;

struct BlockSpec {
    std::size_t channels = 8;
    std::size_t stride = 1;

    friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

// Shape of the classifier shared by teacher and student. Input is [channels, height, width].
struct NetworkConfig {
    std::size_t input_channels = 3;
    std::size_t input_height = 5;
    std::size_t input_width = 5;
    std::size_t num_classes = 13;
    std::vector<BlockSpec> blocks;
    std::size_t kernel_size = 3;
    double dropout_rate = 0.5;
    // running <- momentum * running + (1 - momentum) * batch_statistic
    double batchnorm_momentum = 0.6;
    double batchnorm_eps = 1e-5;

    Shape input_shape() const { return {input_channels, input_height, input_width}; }

    void validate() const {
        if (num_classes < 2) throw ConfigError("network needs at least 2 classes");
        if (blocks.empty()) throw ConfigError("network needs at least one residual block");
        if (input_channels == 0 || input_height == 0 || input_width == 0) throw ConfigError("empty input shape");
        if (kernel_size == 0 || kernel_size % 2 == 0) throw ConfigError("kernel size must be odd");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
        if (!(batchnorm_momentum > 0.0 && batchnorm_momentum <= 1.0)) {
            throw ConfigError("batchnorm momentum must be in (0, 1]");
        }
        for (const auto& b : blocks) {
            if (b.channels == 0 || b.stride == 0) throw ConfigError("block channels and stride must be positive");
        }
    }

    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// Nine residual blocks on small image-shaped inputs; trains on one CPU core in minutes.
inline NetworkConfig desk_scale_config(std::size_t num_classes = 13, Shape input = {3, 5, 5}) {
    NetworkConfig cfg;
    cfg.input_channels = input.at(0);
    cfg.input_height = input.at(1);
    cfg.input_width = input.at(2);
    cfg.num_classes = num_classes;
    cfg.blocks = {{8, 1}, {8, 1}, {8, 1}, {24, 2}, {24, 1}, {24, 1}, {24, 1}, {24, 1}, {24, 1}};
    return cfg;
}

// 20 convolutional blocks plus the linear head: the 21-layer production shape
// (~13 million parameters) on 3x65x65 inputs.
inline NetworkConfig full_scale_config(std::size_t num_classes = 13) {
    NetworkConfig cfg;
    cfg.input_channels = 3;
    cfg.input_height = 65;
    cfg.input_width = 65;
    cfg.num_classes = num_classes;
    const std::size_t widths[4] = {64, 128, 256, 512};
    for (std::size_t stage = 0; stage < 4; ++stage) {
        for (std::size_t i = 0; i < 5; ++i) {
            cfg.blocks.push_back({widths[stage], (stage > 0 && i == 0) ? std::size_t{2} : std::size_t{1}});
        }
    }
    return cfg;
}

struct ManifestEntry {
    std::string name;
    Shape shape;
    bool trainable = true;
};

// Every tensor the network owns, in a fixed order. Parameters first within each
// block, batchnorm running statistics flagged as non-trainable.
inline std::vector<ManifestEntry> shape_manifest(const NetworkConfig& cfg) {
    cfg.validate();
    std::vector<ManifestEntry> out;
    std::size_t in = cfg.input_channels;
    const std::size_t k = cfg.kernel_size;
    for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
        const auto& b = cfg.blocks[i];
        const std::string p = "block" + std::to_string(i);
        out.push_back({p + ".conv.weight", {b.channels, in, k, k}, true});
        out.push_back({p + ".bn.gamma", {b.channels}, true});
        out.push_back({p + ".bn.beta", {b.channels}, true});
        if (b.channels != in || b.stride != 1) out.push_back({p + ".proj.weight", {b.channels, in, 1, 1}, true});
        out.push_back({p + ".bn.running_mean", {b.channels}, false});
        out.push_back({p + ".bn.running_var", {b.channels}, false});
        in = b.channels;
    }
    out.push_back({"head.weight", {in, cfg.num_classes}, true});
    out.push_back({"head.bias", {cfg.num_classes}, true});
    return out;
}

inline std::size_t parameter_count(const NetworkConfig& cfg) {
    std::size_t total = 0;
    for (const auto& e : shape_manifest(cfg)) {
        if (e.trainable) total += numerics::shape_numel(e.shape);
    }
    return total;
}

}  // namespace selftrain::nn
