#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "selftrain/data/augment.hpp"
#include "selftrain/data/dataset.hpp"
#include "selftrain/errors.hpp"

namespace selftrain::data {

struct SplitSpec {
    SplitTag tag = SplitTag::train;
    std::size_t groups = 10;
    std::size_t samples_per_group = 50;
    std::vector<double> priors;
    // Optional exact per-class counts; when set they must sum to the split size.
    std::vector<std::size_t> class_counts;
    // Covariate shift: a fixed per-split offset pattern with this per-element RMS.
    double mean_shift = 0.0;
    // Multiplies the base noise level.
    double noise_scale = 1.0;

    std::size_t size() const { return groups * samples_per_group; }
};

// Class-conditional generator shared by all splits. Each class is a mixture of
// `modes_per_class` random templates; a sample is a template under a random
// flip/rotation, plus a per-group channel offset (patient/batch effect), plus
// isotropic noise, plus the split's covariate offset.
struct ShiftSpec {
    std::size_t class_count = 13;
    Shape sample_shape{3, 5, 5};
    std::vector<std::string> class_names;
    std::size_t modes_per_class = 2;
    double template_scale = 1.0;
    double noise = 1.0;
    double group_effect = 0.2;
    bool dihedral = true;
    std::vector<SplitSpec> splits;
    std::uint64_t seed = 0;

    void validate() const {
        if (class_count < 2) throw SpecError("benchmark needs at least 2 classes");
        if (sample_shape.size() != 3 || numerics::shape_numel(sample_shape) == 0) {
            throw SpecError("sample shape must be [channels, height, width]");
        }
        if (!class_names.empty() && class_names.size() != class_count) throw SpecError("class name count mismatch");
        if (modes_per_class == 0) throw SpecError("modes_per_class must be positive");
        if (noise < 0 || group_effect < 0 || template_scale <= 0) throw SpecError("negative generator scale");
        if (splits.empty()) throw SpecError("benchmark has no splits");
        for (const auto& s : splits) {
            const std::string name = to_string(s.tag);
            if (s.size() == 0) throw SpecError("split " + name + " has zero size");
            if (s.priors.size() != class_count) throw SpecError("split " + name + " prior has wrong length");
            double total = 0.0;
            for (double p : s.priors) {
                if (p < 0 || !std::isfinite(p)) throw SpecError("split " + name + " prior has a negative entry");
                total += p;
            }
            if (std::abs(total - 1.0) > 1e-6) throw SpecError("split " + name + " prior does not sum to 1");
            if (!s.class_counts.empty()) {
                if (s.class_counts.size() != class_count) throw SpecError("split " + name + " class_counts length");
                if (std::accumulate(s.class_counts.begin(), s.class_counts.end(), std::size_t{0}) != s.size()) {
                    throw SpecError("split " + name + " class_counts do not sum to the split size");
                }
                for (std::size_t c = 0; c < class_count; ++c) {
                    if (s.class_counts[c] > 0 && s.priors[c] == 0.0) {
                        throw SpecError("split " + name + " requests " + std::to_string(s.class_counts[c]) +
                                        " samples of class " + std::to_string(c) + " which has zero prior");
                    }
                }
            }
            if (s.noise_scale < 0) throw SpecError("split " + name + " has negative noise scale");
        }
    }
};

using Benchmark = std::map<SplitTag, Dataset>;

namespace detail {
inline void random_dihedral(ImageView img, RngStream& rng) {
    if (rng.bernoulli(0.5)) flip_horizontal(img);
    if (img.height == img.width) {
        const std::size_t turns = rng.uniform_index(4);
        for (std::size_t t = 0; t < turns; ++t) rotate_quarter(img);
    }
}
}  // namespace detail

// Pure function of the spec (including its seed).
inline Benchmark generate_shifted_benchmark(const ShiftSpec& spec) {
    spec.validate();
    const std::size_t channels = spec.sample_shape[0], height = spec.sample_shape[1], width = spec.sample_shape[2];
    const std::size_t dim = channels * height * width;
    const RngStream root(spec.seed, 0xBE9C);

    RngStream template_rng = root.derive(1);
    std::vector<std::vector<float>> templates(spec.class_count * spec.modes_per_class, std::vector<float>(dim));
    for (auto& t : templates)
        for (auto& v : t) v = static_cast<float>(template_rng.normal(0.0, spec.template_scale));

    Benchmark out;
    for (std::size_t si = 0; si < spec.splits.size(); ++si) {
        const SplitSpec& s = spec.splits[si];
        const auto split_index = static_cast<std::uint64_t>(s.tag);
        RngStream shift_rng = root.derive(100 + split_index);
        std::vector<float> offset(dim, 0.0f);
        if (s.mean_shift != 0.0) {
            double sq = 0.0;
            std::vector<double> raw(dim);
            for (auto& v : raw) {
                v = shift_rng.normal();
                sq += v * v;
            }
            const double rms = std::sqrt(sq / static_cast<double>(dim));
            for (std::size_t j = 0; j < dim; ++j) offset[j] = static_cast<float>(s.mean_shift * raw[j] / rms);
        }

        RngStream rng = root.derive(1000 + split_index);
        const std::size_t n = s.size();
        std::vector<int> labels(n);
        if (!s.class_counts.empty()) {
            std::size_t k = 0;
            for (std::size_t c = 0; c < spec.class_count; ++c)
                for (std::size_t j = 0; j < s.class_counts[c]; ++j) labels[k++] = static_cast<int>(c);
            const auto order = rng.permutation(n);
            std::vector<int> shuffled(n);
            for (std::size_t i = 0; i < n; ++i) shuffled[i] = labels[order[i]];
            labels = std::move(shuffled);
        } else {
            for (auto& l : labels) l = static_cast<int>(rng.categorical(s.priors));
        }

        Dataset ds;
        ds.split = s.tag;
        ds.num_classes = spec.class_count;
        ds.inputs = Tensor<float>(Shape{n, channels, height, width});
        ds.labels = labels;
        ds.groups.resize(n);
        const double sigma = spec.noise * s.noise_scale;
        for (std::size_t g = 0; g < s.groups; ++g) {
            std::vector<float> group_offset(channels);
            for (auto& v : group_offset) v = static_cast<float>(rng.normal(0.0, spec.group_effect));
            for (std::size_t j = 0; j < s.samples_per_group; ++j) {
                const std::size_t i = g * s.samples_per_group + j;
                ds.groups[i] = static_cast<std::int64_t>(split_index * 1'000'000 + g);
                const std::size_t mode = rng.uniform_index(spec.modes_per_class);
                const auto& tmpl = templates[static_cast<std::size_t>(labels[i]) * spec.modes_per_class + mode];
                std::span<float> x(ds.inputs.data() + i * dim, dim);
                std::copy(tmpl.begin(), tmpl.end(), x.begin());
                if (spec.dihedral) detail::random_dihedral({x, channels, height, width}, rng);
                for (std::size_t c = 0; c < channels; ++c)
                    for (std::size_t p = 0; p < height * width; ++p) x[c * height * width + p] += group_offset[c];
                for (std::size_t k = 0; k < dim; ++k) x[k] += static_cast<float>(rng.normal(0.0, sigma)) + offset[k];
            }
        }
        out.emplace(s.tag, std::move(ds));
    }
    return out;
}

inline std::vector<std::string> default_class_names() {
    return {"bile_duct",          "portal_inflammation",       "steatosis",
            "normal_hepatocytes", "hepatocellular_swelling",   "lobular_inflammation",
            "normal",             "lumen",                     "blood_vessels",
            "interface_hepatitis", "hepatocellular_ballooning", "microvesicular_steatosis",
            "normal_interface"};
}

namespace detail {
// Normalized weights: `base` for every class, `boost` added to the listed ones.
inline std::vector<double> skewed_prior(std::size_t classes, double base, const std::vector<std::size_t>& favored,
                                        double boost) {
    std::vector<double> p(classes, base);
    for (auto c : favored) p[c] += boost;
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p) v /= total;
    return p;
}
}  // namespace detail

// Default 13-class benchmark: balanced in-distribution splits; shift_a rich in
// steatosis, lobular inflammation and ballooning; shift_b and shift_c skewed
// towards the normal classes. The priors are illustrative choices.
inline ShiftSpec default_shift_spec(std::uint64_t seed = 0) {
    ShiftSpec spec;
    spec.class_count = 13;
    spec.class_names = default_class_names();
    spec.seed = seed;
    const std::vector<double> id_prior(13, 1.0 / 13.0);
    const auto disease = detail::skewed_prior(13, 1.0, {2, 5, 10}, 4.0);
    const auto normal_b = detail::skewed_prior(13, 1.0, {3, 6}, 6.0);
    const auto normal_c = detail::skewed_prior(13, 1.0, {3, 6, 12}, 3.0);
    spec.splits = {
        {SplitTag::train, 440, 50, id_prior, {}, 0.0, 1.0},
        {SplitTag::val, 20, 50, id_prior, {}, 0.0, 1.0},
        {SplitTag::id_test, 40, 50, id_prior, {}, 0.0, 1.0},
        {SplitTag::shift_a, 40, 50, disease, {}, 0.3, 1.0},
        {SplitTag::shift_b, 40, 50, normal_b, {}, 0.3, 1.1},
        {SplitTag::shift_c, 40, 50, normal_c, {}, 0.2, 1.0},
    };
    return spec;
}

}  // namespace selftrain::data
