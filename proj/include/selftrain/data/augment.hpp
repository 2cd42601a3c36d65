#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "selftrain/errors.hpp"
#include "selftrain/numerics/rng.hpp"
#include "selftrain/numerics/tensor.hpp"

namespace selftrain::data {

using numerics::RngStream;
using numerics::Shape;
using numerics::Tensor;

// Training-time perturbations. Every range is a half-width: brightness adds
// U(-b, b); contrast and saturation scale deviations by U(1-c, 1+c); hue rotates
// RGB about the gray axis by U(-h, h) * pi; noise adds N(0, noise_scale).
struct AugmentPolicy {
    bool flip = false;
    std::vector<int> quarter_turns{0};
    double brightness = 0.0;
    double contrast = 0.0;
    double saturation = 0.0;
    double hue = 0.0;
    double noise_scale = 0.0;

    static AugmentPolicy identity() { return {}; }

    static AugmentPolicy standard() {
        AugmentPolicy p;
        p.flip = true;
        p.quarter_turns = {0, 1, 2, 3};
        p.brightness = 0.1;
        p.contrast = 0.1;
        p.saturation = 0.1;
        p.hue = 0.02;
        p.noise_scale = 0.05;
        return p;
    }

    bool is_identity() const {
        const bool turns = quarter_turns.empty() || (quarter_turns.size() == 1 && quarter_turns[0] % 4 == 0);
        return !flip && turns && brightness == 0.0 && contrast == 0.0 && saturation == 0.0 && hue == 0.0 &&
               noise_scale == 0.0;
    }

    void validate() const {
        if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0 || noise_scale < 0) {
            throw ConfigError("augmentation ranges must be non-negative");
        }
    }
};

// One sample laid out [channels, height, width].
struct ImageView {
    std::span<float> values;
    std::size_t channels, height, width;

    float& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
};

inline void flip_horizontal(ImageView img) {
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width / 2; ++x) std::swap(img.at(c, y, x), img.at(c, y, img.width - 1 - x));
}

// Counter-clockwise by 90 degrees; needs a square image.
inline void rotate_quarter(ImageView img) {
    if (img.height != img.width) throw DimensionError("quarter-turn rotation needs a square image");
    std::vector<float> copy(img.values.begin(), img.values.end());
    const std::size_t n = img.width;
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) img.at(c, n - 1 - x, y) = copy[(c * n + y) * n + x];
}

inline void augment_in_place(ImageView img, const AugmentPolicy& policy, RngStream& rng) {
    if (policy.flip && rng.bernoulli(0.5)) flip_horizontal(img);
    if (!policy.quarter_turns.empty() && !(policy.quarter_turns.size() == 1 && policy.quarter_turns[0] % 4 == 0)) {
        const int turns = ((policy.quarter_turns[rng.uniform_index(policy.quarter_turns.size())] % 4) + 4) % 4;
        if (img.height == img.width) {
            for (int t = 0; t < turns; ++t) rotate_quarter(img);
        } else if (turns == 2) {
            flip_horizontal(img);
            for (std::size_t c = 0; c < img.channels; ++c)
                for (std::size_t y = 0; y < img.height / 2; ++y)
                    for (std::size_t x = 0; x < img.width; ++x)
                        std::swap(img.at(c, y, x), img.at(c, img.height - 1 - y, x));
        }
    }
    const std::size_t pixels = img.height * img.width;
    if (policy.brightness > 0.0) {
        const auto delta = static_cast<float>(rng.uniform(-policy.brightness, policy.brightness));
        for (auto& v : img.values) v += delta;
    }
    if (policy.contrast > 0.0) {
        const auto factor = static_cast<float>(rng.uniform(1.0 - policy.contrast, 1.0 + policy.contrast));
        double total = 0.0;
        for (float v : img.values) total += v;
        const auto mean = static_cast<float>(total / static_cast<double>(img.values.size()));
        for (auto& v : img.values) v = mean + (v - mean) * factor;
    }
    if (img.channels == 3 && policy.saturation > 0.0) {
        const auto factor = static_cast<float>(rng.uniform(1.0 - policy.saturation, 1.0 + policy.saturation));
        for (std::size_t p = 0; p < pixels; ++p) {
            float* px[3] = {&img.values[p], &img.values[pixels + p], &img.values[2 * pixels + p]};
            const float gray = (*px[0] + *px[1] + *px[2]) / 3.0f;
            for (auto* v : px) *v = gray + (*v - gray) * factor;
        }
    }
    if (img.channels == 3 && policy.hue > 0.0) {
        // Rodrigues rotation about the unit gray axis (1,1,1)/sqrt(3).
        const double angle = rng.uniform(-policy.hue, policy.hue) * std::numbers::pi;
        const double cosa = std::cos(angle), sina = std::sin(angle);
        const double a = cosa + (1.0 - cosa) / 3.0;
        const double b = (1.0 - cosa) / 3.0 - sina / std::numbers::sqrt3;
        const double c = (1.0 - cosa) / 3.0 + sina / std::numbers::sqrt3;
        for (std::size_t p = 0; p < pixels; ++p) {
            const double r = img.values[p], g = img.values[pixels + p], bl = img.values[2 * pixels + p];
            img.values[p] = static_cast<float>(a * r + b * g + c * bl);
            img.values[pixels + p] = static_cast<float>(c * r + a * g + b * bl);
            img.values[2 * pixels + p] = static_cast<float>(b * r + c * g + a * bl);
        }
    }
    if (policy.noise_scale > 0.0) {
        for (auto& v : img.values) v += static_cast<float>(rng.normal(0.0, policy.noise_scale));
    }
}

// Returns an augmented copy of one [C,H,W] sample; labels are never touched.
inline Tensor<float> augment(const Tensor<float>& sample, const AugmentPolicy& policy, RngStream& rng) {
    if (sample.rank() != 3) throw DimensionError("augment expects a [C,H,W] sample, got " + numerics::shape_string(sample.shape()));
    Tensor<float> out = sample;
    if (policy.is_identity()) return out;
    augment_in_place({out.values(), sample.dim(0), sample.dim(1), sample.dim(2)}, policy, rng);
    return out;
}

// Augments each sample of an [N,C,H,W] batch in order, drawing from `rng`.
inline void augment_batch(Tensor<float>& batch, const AugmentPolicy& policy, RngStream& rng) {
    if (policy.is_identity()) return;
    if (batch.rank() != 4) throw DimensionError("augment_batch expects [N,C,H,W]");
    const std::size_t stride = batch.row_size();
    for (std::size_t i = 0; i < batch.dim(0); ++i) {
        augment_in_place({std::span<float>(batch.data() + i * stride, stride), batch.dim(1), batch.dim(2), batch.dim(3)},
                         policy, rng);
    }
}

}  // namespace selftrain::data
