#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <type_traits>
#include <string>
#include <utility>
#include <vector>

#include "selftrain/errors.hpp"
#include "selftrain/nn/config.hpp"
#include "selftrain/numerics/autograd.hpp"
#include "selftrain/numerics/checkpoint.hpp"
#include "selftrain/numerics/rng.hpp"

namespace selftrain::nn {

using numerics::NamedTensor;
using numerics::RngStream;
using numerics::Tensor;
using numerics::Variable;

enum class Mode { train, eval };

template <class Real>
struct Prediction {
    Tensor<Real> logits;
    Tensor<Real> probabilities;
    double temperature = 1.0;
};

template <class Real>
struct NamedParameter {
    std::string name;
    Variable<Real> value;
};

// Residual classifier: blocks of out = relu(bn(conv(x)) + skip(x)), where skip is
// the identity or a strided 1x1 projection when the shape changes, followed by
// global average pooling, dropout and a linear head.
template <class Real>
class Network {
public:
    Network(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)) {
        RngStream rng(seed, 0x1A17);
        for (const auto& entry : shape_manifest(config_)) {
            Tensor<Real> t(entry.shape);
            if (entry.name.ends_with(".weight")) {
                const std::size_t fan_in = entry.name == "head.weight"
                                               ? entry.shape[0]
                                               : numerics::shape_numel(entry.shape) / entry.shape[0];
                // He scaling for convolutions; the head starts near-uniform (logit scale ~0.1).
                const double gain = entry.name == "head.weight" ? 0.01 : 2.0;
                const double stddev = std::sqrt(gain / static_cast<double>(fan_in));
                for (auto& v : t.storage()) v = static_cast<Real>(rng.normal(0.0, stddev));
            } else if (entry.name.ends_with(".gamma") || entry.name.ends_with(".running_var")) {
                t.fill(Real(1));
            }
            if (entry.trainable) {
                params_.push_back({entry.name, numerics::parameter(std::move(t))});
            } else {
                buffers_.push_back({entry.name, std::move(t)});
            }
        }
        index_layers();
    }

    Network(const Network& other) : config_(other.config_), buffers_(other.buffers_) {
        for (const auto& p : other.params_) params_.push_back({p.name, numerics::parameter(p.value.value())});
        index_layers();
    }

    Network& operator=(const Network& other) {
        if (this != &other) {
            Network copy(other);
            *this = std::move(copy);
        }
        return *this;
    }

    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    const NetworkConfig& config() const noexcept { return config_; }
    std::vector<NamedParameter<Real>>& named_parameters() noexcept { return params_; }
    const std::vector<NamedParameter<Real>>& named_parameters() const noexcept { return params_; }

    std::vector<Variable<Real>> parameters() const {
        std::vector<Variable<Real>> out;
        for (const auto& p : params_) out.push_back(p.value);
        return out;
    }

    const Tensor<Real>& buffer(const std::string& name) const {
        for (const auto& b : buffers_)
            if (b.name == name) return b.value;
        throw ContractError("no buffer named " + name);
    }

    void zero_grad() {
        for (auto& p : params_) p.value.zero_grad();
    }

    // Taped pass up to the pooled features [N, F]. In train mode batchnorm uses
    // batch statistics and folds them into the running statistics.
    Variable<Real> features(const Tensor<Real>& batch, Mode mode) { return trunk(*this, batch, mode); }

    // Eval-mode trunk; never touches the running statistics.
    Variable<Real> features(const Tensor<Real>& batch) const { return trunk(*this, batch, Mode::eval); }

    // Dropout on pooled features followed by the linear head.
    Variable<Real> head(const Variable<Real>& features, bool dropout_active, RngStream* rng) const {
        Variable<Real> h = features;
        if (dropout_active && config_.dropout_rate > 0.0) {
            if (rng == nullptr) throw ContractError("dropout requires an rng stream");
            const double keep = 1.0 - config_.dropout_rate;
            Tensor<Real> mask(features.shape());
            for (auto& v : mask.storage()) v = rng->bernoulli(keep) ? static_cast<Real>(1.0 / keep) : Real(0);
            h = numerics::mul(h, numerics::constant(std::move(mask)));
        }
        return numerics::add_bias(numerics::matmul(h, params_[head_weight_].value), params_[head_bias_].value);
    }

    Variable<Real> logits(const Tensor<Real>& batch, Mode mode, bool dropout_active, RngStream* rng) {
        return head(features(batch, mode), dropout_active, rng);
    }

    Variable<Real> eval_logits(const Tensor<Real>& batch) const { return head(features(batch), false, nullptr); }

    // Untaped prediction at temperature 1.
    Prediction<Real> forward(const Tensor<Real>& batch, Mode mode, bool dropout_active, RngStream* rng) {
        numerics::NoGradGuard guard;
        Prediction<Real> out;
        out.logits = logits(batch, mode, dropout_active, rng).value();
        out.probabilities = Tensor<Real>(out.logits.shape());
        numerics::detail::softmax_rows(out.logits, Real(1), out.probabilities);
        return out;
    }

    // Eval-mode logits over an arbitrarily large set, in fixed-size chunks.
    Tensor<Real> predict_logits(const Tensor<Real>& inputs, std::size_t chunk = 512) const {
        numerics::NoGradGuard guard;
        const std::size_t n = inputs.rank() ? inputs.dim(0) : 0;
        Tensor<Real> out(Shape{n, config_.num_classes});
        for (std::size_t begin = 0; begin < n; begin += chunk) {
            const std::size_t end = std::min(n, begin + chunk);
            auto part = eval_logits(inputs.slice_rows(begin, end)).value();
            std::copy(part.storage().begin(), part.storage().end(), out.data() + begin * config_.num_classes);
        }
        return out;
    }

    Tensor<Real> predict_features(const Tensor<Real>& inputs, std::size_t chunk = 512) const {
        numerics::NoGradGuard guard;
        const std::size_t n = inputs.rank() ? inputs.dim(0) : 0;
        const std::size_t width = feature_width();
        Tensor<Real> out(Shape{n, width});
        for (std::size_t begin = 0; begin < n; begin += chunk) {
            const std::size_t end = std::min(n, begin + chunk);
            auto part = features(inputs.slice_rows(begin, end)).value();
            std::copy(part.storage().begin(), part.storage().end(), out.data() + begin * width);
        }
        return out;
    }

    std::size_t feature_width() const { return config_.blocks.back().channels; }

    // Parameters and running statistics in manifest order, preceded by the
    // serialized config so a checkpoint is self-describing.
    std::vector<NamedTensor> state() const {
        std::vector<NamedTensor> out;
        out.push_back({"meta.config", encode_config(config_)});
        std::size_t pi = 0, bi = 0;
        for (const auto& entry : shape_manifest(config_)) {
            if (entry.trainable) {
                out.push_back({entry.name, params_[pi++].value.value()});
            } else {
                out.push_back({entry.name, buffers_[bi++].value});
            }
        }
        return out;
    }

    void load_state(const std::vector<NamedTensor>& tensors) {
        std::map<std::string, const NamedTensor*> by_name;
        for (const auto& t : tensors) by_name[t.name] = &t;
        auto fetch = [&](const std::string& name, const Shape& shape) {
            auto it = by_name.find(name);
            if (it == by_name.end()) throw FormatError("checkpoint is missing tensor " + name);
            if (it->second->shape() != shape) {
                throw FormatError("tensor " + name + " has shape " + numerics::shape_string(it->second->shape()) +
                                  ", expected " + numerics::shape_string(shape));
            }
            return it->second->template as<Real>();
        };
        std::vector<Tensor<Real>> new_params, new_buffers;
        for (const auto& entry : shape_manifest(config_)) {
            (entry.trainable ? new_params : new_buffers).push_back(fetch(entry.name, entry.shape));
        }
        for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value.mutable_value() = std::move(new_params[i]);
        for (std::size_t i = 0; i < buffers_.size(); ++i) buffers_[i].value = std::move(new_buffers[i]);
    }

    static Network from_state(const std::vector<NamedTensor>& tensors) {
        const NamedTensor* meta = nullptr;
        for (const auto& t : tensors)
            if (t.name == "meta.config") meta = &t;
        if (meta == nullptr) throw FormatError("checkpoint has no meta.config entry");
        Network net(decode_config(meta->as<double>()), 0);
        net.load_state(tensors);
        return net;
    }

    static Tensor<double> encode_config(const NetworkConfig& c) {
        std::vector<double> v{1.0,
                              static_cast<double>(c.input_channels),
                              static_cast<double>(c.input_height),
                              static_cast<double>(c.input_width),
                              static_cast<double>(c.num_classes),
                              static_cast<double>(c.kernel_size),
                              c.dropout_rate,
                              c.batchnorm_momentum,
                              c.batchnorm_eps,
                              static_cast<double>(c.blocks.size())};
        for (const auto& b : c.blocks) {
            v.push_back(static_cast<double>(b.channels));
            v.push_back(static_cast<double>(b.stride));
        }
        const Shape shape{v.size()};
        return Tensor<double>(shape, std::move(v));
    }

    static NetworkConfig decode_config(const Tensor<double>& t) {
        if (t.numel() < 10 || t[0] != 1.0) throw FormatError("unrecognized network config encoding");
        NetworkConfig c;
        c.input_channels = static_cast<std::size_t>(t[1]);
        c.input_height = static_cast<std::size_t>(t[2]);
        c.input_width = static_cast<std::size_t>(t[3]);
        c.num_classes = static_cast<std::size_t>(t[4]);
        c.kernel_size = static_cast<std::size_t>(t[5]);
        c.dropout_rate = t[6];
        c.batchnorm_momentum = t[7];
        c.batchnorm_eps = t[8];
        const auto nblocks = static_cast<std::size_t>(t[9]);
        if (t.numel() != 10 + 2 * nblocks) throw FormatError("truncated network config encoding");
        for (std::size_t i = 0; i < nblocks; ++i) {
            c.blocks.push_back({static_cast<std::size_t>(t[10 + 2 * i]), static_cast<std::size_t>(t[11 + 2 * i])});
        }
        c.validate();
        return c;
    }

private:
    template <class Self>
    static Variable<Real> trunk(Self& self, const Tensor<Real>& batch, Mode mode) {
        self.check_batch(batch);
        const auto& cfg = self.config_;
        Variable<Real> x = numerics::constant(batch);
        for (const auto& layer : self.layers_) {
            Variable<Real> y = numerics::conv2d(x, self.params_[layer.conv].value, layer.stride, cfg.kernel_size / 2);
            const auto& gamma = self.params_[layer.gamma].value;
            const auto& beta = self.params_[layer.beta].value;
            auto& rmean = self.buffers_[layer.running_mean].value;
            auto& rvar = self.buffers_[layer.running_var].value;
            const Real eps = static_cast<Real>(cfg.batchnorm_eps);
            if constexpr (!std::is_const_v<Self>) {
                if (mode == Mode::train) {
                    auto [normed, stats] = numerics::batch_norm_train(y, gamma, beta, eps);
                    const Real m = static_cast<Real>(cfg.batchnorm_momentum);
                    for (std::size_t c = 0; c < rmean.numel(); ++c) {
                        rmean[c] = m * rmean[c] + (Real(1) - m) * stats.mean[c];
                        rvar[c] = m * rvar[c] + (Real(1) - m) * stats.variance[c];
                    }
                    y = std::move(normed);
                } else {
                    y = numerics::batch_norm_eval(y, gamma, beta, rmean, rvar, eps);
                }
            } else {
                (void)mode;
                y = numerics::batch_norm_eval(y, gamma, beta, rmean, rvar, eps);
            }
            Variable<Real> skip =
                layer.projection ? numerics::conv2d(x, self.params_[*layer.projection].value, layer.stride, 0) : x;
            x = numerics::relu(numerics::add(y, skip));
        }
        return numerics::global_avg_pool(x);
    }

    struct NamedBuffer {
        std::string name;
        Tensor<Real> value;
    };

    struct Layer {
        std::size_t conv, gamma, beta, running_mean, running_var, stride;
        std::optional<std::size_t> projection;
    };

    void check_batch(const Tensor<Real>& batch) const {
        if (batch.rank() != 4 || batch.dim(1) != config_.input_channels || batch.dim(2) != config_.input_height ||
            batch.dim(3) != config_.input_width) {
            throw DimensionError("network expects [N," + std::to_string(config_.input_channels) + "," +
                                 std::to_string(config_.input_height) + "," + std::to_string(config_.input_width) +
                                 "] input, got " + numerics::shape_string(batch.shape()));
        }
    }

    void index_layers() {
        auto param_index = [this](const std::string& name) -> std::optional<std::size_t> {
            for (std::size_t i = 0; i < params_.size(); ++i)
                if (params_[i].name == name) return i;
            return std::nullopt;
        };
        auto buffer_index = [this](const std::string& name) {
            for (std::size_t i = 0; i < buffers_.size(); ++i)
                if (buffers_[i].name == name) return i;
            throw ContractError("missing buffer " + name);
        };
        layers_.clear();
        for (std::size_t i = 0; i < config_.blocks.size(); ++i) {
            const std::string p = "block" + std::to_string(i);
            layers_.push_back({*param_index(p + ".conv.weight"), *param_index(p + ".bn.gamma"),
                               *param_index(p + ".bn.beta"), buffer_index(p + ".bn.running_mean"),
                               buffer_index(p + ".bn.running_var"), config_.blocks[i].stride,
                               param_index(p + ".proj.weight")});
        }
        head_weight_ = *param_index("head.weight");
        head_bias_ = *param_index("head.bias");
    }

    NetworkConfig config_;
    std::vector<NamedParameter<Real>> params_;
    std::vector<NamedBuffer> buffers_;
    std::vector<Layer> layers_;
    std::size_t head_weight_ = 0;
    std::size_t head_bias_ = 0;
};

// Text dump for diffing: one "name<TAB>shape<TAB>dtype" line per tensor.
template <class Real>
std::string manifest_text(const Network<Real>& net) {
    std::string out;
    const char* dtype = sizeof(Real) == 4 ? "f32" : "f64";
    for (const auto& e : shape_manifest(net.config())) {
        out += e.name + "\t" + numerics::shape_string(e.shape) + "\t" + dtype + (e.trainable ? "" : "\tbuffer") + "\n";
    }
    return out;
}

template <class Real>
void save_network(const std::filesystem::path& path, const Network<Real>& net) {
    numerics::save_checkpoint(path, net.state());
}

template <class Real>
Network<Real> load_network(const std::filesystem::path& path) {
    return Network<Real>::from_state(numerics::load_checkpoint(path));
}

}  // namespace selftrain::nn
