#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "selftrain/errors.hpp"
#include "selftrain/numerics/tensor.hpp"

namespace selftrain::numerics {

namespace detail {
inline thread_local bool grad_enabled = true;

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MatMap = Eigen::Map<RowMat<Real>>;
template <class Real>
using ConstMatMap = Eigen::Map<const RowMat<Real>>;
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled; }

// Disables tape recording for the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <class Real>
struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor<Real>& grad_buffer() {
        if (grad.shape() != value.shape()) grad = Tensor<Real>(value.shape());
        return grad;
    }
};

// Handle to a tensor that may participate in the gradient tape. Leaves created
// with requires_grad accumulate gradients; interior nodes are released after backward().
template <class Real>
class Variable {
public:
    Variable() = default;

    explicit Variable(Tensor<Real> value, bool requires_grad = false)
        : node_(std::make_shared<Node<Real>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor<Real>& value() const { return node_->value; }
    Tensor<Real>& mutable_value() {
        if (!node_->is_leaf) throw ContractError("only leaf variables may be mutated in place");
        return node_->value;
    }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
    Real item() const { return node_->value.item(); }

    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    bool has_grad() const { return node_->grad.shape() == node_->value.shape(); }
    const Tensor<Real>& grad() const {
        if (!has_grad()) node_->grad_buffer();
        return node_->grad;
    }
    Tensor<Real>& grad_buffer() { return node_->grad_buffer(); }
    void zero_grad() {
        if (has_grad()) node_->grad.fill(Real(0));
    }

    const std::shared_ptr<Node<Real>>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node<Real>> node_;
};

template <class Real>
Variable<Real> constant(Tensor<Real> value) {
    return Variable<Real>(std::move(value), false);
}

template <class Real>
Variable<Real> parameter(Tensor<Real> value) {
    return Variable<Real>(std::move(value), true);
}

namespace detail {

template <class Real>
Variable<Real> record(Tensor<Real> value, std::initializer_list<Variable<Real>> inputs,
                      std::function<void(Node<Real>&)> fn) {
    Variable<Real> out(std::move(value), false);
    if (!detail::grad_enabled) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    node.is_leaf = false;
    for (const auto& in : inputs) node.parents.push_back(in.node());
    node.backward_fn = std::move(fn);
    return out;
}

template <class Real>
void require_same_shape(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

template <class Real>
void require_rank(const char* op, const Tensor<Real>& a, std::size_t rank) {
    if (a.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_string(a.shape()));
    }
}

}  // namespace detail

// Runs reverse-mode differentiation from a scalar loss. Leaf gradients accumulate
// across calls; the recorded interior graph is released afterwards.
template <class Real>
void backward(const Variable<Real>& loss) {
    if (!loss.defined() || loss.value().numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " +
                            (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) throw ContractError("backward() on a loss that is not on the tape");

    using NodeT = Node<Real>;
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeT* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->grad_buffer()[0] += Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* node = *it;
        if (node->backward_fn && node->grad.shape() == node->value.shape()) node->backward_fn(*node);
    }
    for (NodeT* node : order) {
        if (node->is_leaf) continue;
        node->parents.clear();
        node->backward_fn = nullptr;
        node->grad = Tensor<Real>();
    }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <class Real>
Variable<Real> add(const Variable<Real>& a, const Variable<Real>& b) {
    detail::require_same_shape("add", a.value(), b.value());
    Tensor<Real> out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
    return detail::record<Real>(std::move(out), {a, b}, [](Node<Real>& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
    });
}

template <class Real>
Variable<Real> sub(const Variable<Real>& a, const Variable<Real>& b) {
    detail::require_same_shape("sub", a.value(), b.value());
    Tensor<Real> out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return detail::record<Real>(std::move(out), {a, b}, [](Node<Real>& self) {
        const Real sign[2] = {Real(1), Real(-1)};
        for (std::size_t k = 0; k < 2; ++k) {
            auto& p = self.parents[k];
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += sign[k] * self.grad[i];
        }
    });
}

template <class Real>
Variable<Real> mul(const Variable<Real>& a, const Variable<Real>& b) {
    detail::require_same_shape("mul", a.value(), b.value());
    Tensor<Real> out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return detail::record<Real>(std::move(out), {a, b}, [](Node<Real>& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto& p = self.parents[k];
            if (!p->requires_grad) continue;
            const auto& other = self.parents[1 - k]->value;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * other[i];
        }
    });
}

template <class Real>
Variable<Real> scale(const Variable<Real>& a, Real factor) {
    Tensor<Real> out = a.value();
    for (auto& v : out.storage()) v *= factor;
    return detail::record<Real>(std::move(out), {a}, [factor](Node<Real>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += factor * self.grad[i];
    });
}

template <class Real>
Variable<Real> add_scalar(const Variable<Real>& a, Real offset) {
    Tensor<Real> out = a.value();
    for (auto& v : out.storage()) v += offset;
    return detail::record<Real>(std::move(out), {a}, [](Node<Real>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

template <class Real>
Variable<Real> relu(const Variable<Real>& a) {
    Tensor<Real> out = a.value();
    for (auto& v : out.storage()) v = v > Real(0) ? v : Real(0);
    return detail::record<Real>(std::move(out), {a}, [](Node<Real>& self) {
        const auto& x = self.parents[0]->value;
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) {
            if (x[i] > Real(0)) g[i] += self.grad[i];
        }
    });
}

// log(max(a, floor)); the clamped region has zero gradient.
template <class Real>
Variable<Real> log_clamped(const Variable<Real>& a, Real floor) {
    Tensor<Real> out = a.value();
    for (auto& v : out.storage()) v = std::log(std::max(v, floor));
    return detail::record<Real>(std::move(out), {a}, [floor](Node<Real>& self) {
        const auto& x = self.parents[0]->value;
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) {
            if (x[i] > floor) g[i] += self.grad[i] / x[i];
        }
    });
}

template <class Real>
Variable<Real> sum(const Variable<Real>& a) {
    Real total = 0;
    for (Real v : a.value().storage()) total += v;
    return detail::record<Real>(Tensor<Real>::scalar(total), {a}, [](Node<Real>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const Real s = self.grad[0];
        for (auto& v : g.storage()) v += s;
    });
}

template <class Real>
Variable<Real> mean(const Variable<Real>& a) {
    return scale(sum(a), Real(1) / static_cast<Real>(std::max<std::size_t>(a.value().numel(), 1)));
}

template <class Real>
Variable<Real> reshape(const Variable<Real>& a, Shape shape) {
    Tensor<Real> out = a.value().reshaped(std::move(shape));
    return detail::record<Real>(std::move(out), {a}, [](Node<Real>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

template <class Real>
Variable<Real> concat_rows(const Variable<Real>& a, const Variable<Real>& b) {
    Tensor<Real> out = numerics::concat_rows(a.value(), b.value());
    return detail::record<Real>(std::move(out), {a, b}, [](Node<Real>& self) {
        std::size_t offset = 0;
        for (auto& p : self.parents) {
            const std::size_t n = p->value.numel();
            if (p->requires_grad) {
                auto& g = p->grad_buffer();
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
            }
            offset += n;
        }
    });
}

template <class Real>
Variable<Real> slice_rows(const Variable<Real>& a, std::size_t begin, std::size_t end) {
    Tensor<Real> out = a.value().slice_rows(begin, end);
    const std::size_t offset = begin * a.value().row_size();
    return detail::record<Real>(std::move(out), {a}, [offset](Node<Real>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) g[offset + i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class Real>
Variable<Real> matmul(const Variable<Real>& a, const Variable<Real>& b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                             shape_string(bv.shape()));
    }
    const auto m = static_cast<Eigen::Index>(av.dim(0));
    const auto k = static_cast<Eigen::Index>(av.dim(1));
    const auto n = static_cast<Eigen::Index>(bv.dim(1));
    Tensor<Real> out(Shape{av.dim(0), bv.dim(1)});
    detail::MatMap<Real>(out.data(), m, n).noalias() =
        detail::ConstMatMap<Real>(av.data(), m, k) * detail::ConstMatMap<Real>(bv.data(), k, n);
    return detail::record<Real>(std::move(out), {a, b}, [m, k, n](Node<Real>& self) {
        detail::ConstMatMap<Real> g(self.grad.data(), m, n);
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            detail::MatMap<Real>(pa->grad_buffer().data(), m, k).noalias() +=
                g * detail::ConstMatMap<Real>(pb->value.data(), k, n).transpose();
        }
        if (pb->requires_grad) {
            detail::MatMap<Real>(pb->grad_buffer().data(), k, n).noalias() +=
                detail::ConstMatMap<Real>(pa->value.data(), m, k).transpose() * g;
        }
    });
}

// a[N,F] + bias[F] broadcast over rows.
template <class Real>
Variable<Real> add_bias(const Variable<Real>& a, const Variable<Real>& bias) {
    const auto& av = a.value();
    if (av.rank() != 2 || bias.value().rank() != 1 || bias.value().dim(0) != av.dim(1)) {
        throw DimensionError("add_bias: incompatible shapes " + shape_string(av.shape()) + " and " +
                             shape_string(bias.shape()));
    }
    Tensor<Real> out = av;
    const std::size_t rows = av.dim(0), cols = av.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += bias.value()[c];
    return detail::record<Real>(std::move(out), {a, bias}, [rows, cols](Node<Real>& self) {
        if (self.parents[0]->requires_grad) {
            auto& g = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            auto& g = self.parents[1]->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
        }
    });
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, NCHW) via im2col + GEMM
// ---------------------------------------------------------------------------

struct Conv2dGeometry {
    std::size_t batch, in_channels, height, width;
    std::size_t out_channels, kernel_h, kernel_w;
    std::size_t stride, padding;
    std::size_t out_h, out_w;

    std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
    std::size_t positions() const { return batch * out_h * out_w; }
};

inline std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride,
                                      std::size_t padding) {
    if (stride == 0) throw DimensionError("conv2d: stride must be positive");
    const std::size_t padded = extent + 2 * padding;
    if (kernel > padded) {
        throw DimensionError("conv2d: kernel extent " + std::to_string(kernel) + " exceeds padded input extent " +
                             std::to_string(padded));
    }
    if ((padded - kernel) % stride != 0) {
        throw DimensionError("conv2d: non-integral output size for extent " + std::to_string(extent) +
                             ", kernel " + std::to_string(kernel) + ", stride " + std::to_string(stride) +
                             ", padding " + std::to_string(padding));
    }
    return (padded - kernel) / stride + 1;
}

namespace detail {

template <class Real>
void im2col(const Real* x, const Conv2dGeometry& g, Real* cols) {
    const std::size_t np = g.positions();
    const std::size_t hw_out = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                Real* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * np;
                for (std::size_t n = 0; n < g.batch; ++n) {
                    const Real* plane = x + (n * g.in_channels + c) * g.height * g.width;
                    Real* dst = row + n * hw_out;
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                        static_cast<std::ptrdiff_t>(g.padding);
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                            static_cast<std::ptrdiff_t>(g.padding);
                            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                                ix < static_cast<std::ptrdiff_t>(g.width);
                            dst[oy * g.out_w + ox] =
                                inside ? plane[static_cast<std::size_t>(iy) * g.width + static_cast<std::size_t>(ix)]
                                       : Real(0);
                        }
                    }
                }
            }
        }
    }
}

template <class Real>
void col2im_add(const Real* cols, const Conv2dGeometry& g, Real* x) {
    const std::size_t np = g.positions();
    const std::size_t hw_out = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                const Real* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * np;
                for (std::size_t n = 0; n < g.batch; ++n) {
                    Real* plane = x + (n * g.in_channels + c) * g.height * g.width;
                    const Real* src = row + n * hw_out;
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                        static_cast<std::ptrdiff_t>(g.padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                            static_cast<std::ptrdiff_t>(g.padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                            plane[static_cast<std::size_t>(iy) * g.width + static_cast<std::size_t>(ix)] +=
                                src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <class Real>
Variable<Real> conv2d(const Variable<Real>& input, const Variable<Real>& kernel, std::size_t stride,
                      std::size_t padding) {
    const auto& x = input.value();
    const auto& k = kernel.value();
    if (x.rank() != 4 || k.rank() != 4 || x.dim(1) != k.dim(1)) {
        throw DimensionError("conv2d: incompatible input " + shape_string(x.shape()) + " and kernel " +
                             shape_string(k.shape()));
    }
    Conv2dGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k.dim(0), k.dim(2), k.dim(3), stride, padding, 0, 0};
    g.out_h = conv_output_extent(g.height, g.kernel_h, stride, padding);
    g.out_w = conv_output_extent(g.width, g.kernel_w, stride, padding);

    const auto patch = static_cast<Eigen::Index>(g.patch());
    const auto np = static_cast<Eigen::Index>(g.positions());
    const auto oc = static_cast<Eigen::Index>(g.out_channels);
    const std::size_t hw_out = g.out_h * g.out_w;

    auto cols = std::make_shared<std::vector<Real>>(g.patch() * g.positions());
    detail::im2col(x.data(), g, cols->data());
    std::vector<Real> out_mat(g.out_channels * g.positions());
    detail::MatMap<Real>(out_mat.data(), oc, np).noalias() =
        detail::ConstMatMap<Real>(k.data(), oc, patch) * detail::ConstMatMap<Real>(cols->data(), patch, np);

    Tensor<Real> out(Shape{g.batch, g.out_channels, g.out_h, g.out_w});
    for (std::size_t o = 0; o < g.out_channels; ++o)
        for (std::size_t n = 0; n < g.batch; ++n)
            std::copy_n(out_mat.data() + o * g.positions() + n * hw_out, hw_out,
                        out.data() + (n * g.out_channels + o) * hw_out);

    return detail::record<Real>(std::move(out), {input, kernel}, [g, cols, patch, np, oc, hw_out](Node<Real>& self) {
        std::vector<Real> grad_mat(g.out_channels * g.positions());
        for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t n = 0; n < g.batch; ++n)
                std::copy_n(self.grad.data() + (n * g.out_channels + o) * hw_out, hw_out,
                            grad_mat.data() + o * g.positions() + n * hw_out);
        detail::ConstMatMap<Real> gm(grad_mat.data(), oc, np);
        auto& px = self.parents[0];
        auto& pk = self.parents[1];
        if (pk->requires_grad) {
            detail::MatMap<Real>(pk->grad_buffer().data(), oc, patch).noalias() +=
                gm * detail::ConstMatMap<Real>(cols->data(), patch, np).transpose();
        }
        if (px->requires_grad) {
            std::vector<Real> grad_cols(g.patch() * g.positions());
            detail::MatMap<Real>(grad_cols.data(), patch, np).noalias() =
                detail::ConstMatMap<Real>(pk->value.data(), oc, patch).transpose() * gm;
            detail::col2im_add(grad_cols.data(), g, px->grad_buffer().data());
        }
    });
}

// [N,C,H,W] -> [N,C] spatial mean.
template <class Real>
Variable<Real> global_avg_pool(const Variable<Real>& a) {
    const auto& x = a.value();
    detail::require_rank("global_avg_pool", x, 4);
    const std::size_t nc = x.dim(0) * x.dim(1);
    const std::size_t hw = x.dim(2) * x.dim(3);
    Tensor<Real> out(Shape{x.dim(0), x.dim(1)});
    for (std::size_t i = 0; i < nc; ++i) {
        Real s = 0;
        for (std::size_t j = 0; j < hw; ++j) s += x[i * hw + j];
        out[i] = s / static_cast<Real>(hw);
    }
    return detail::record<Real>(std::move(out), {a}, [nc, hw](Node<Real>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < nc; ++i) {
            const Real v = self.grad[i] / static_cast<Real>(hw);
            for (std::size_t j = 0; j < hw; ++j) g[i * hw + j] += v;
        }
    });
}

// ---------------------------------------------------------------------------
// Batch normalization over the channel axis of [N,C] or [N,C,H,W]
// ---------------------------------------------------------------------------

template <class Real>
struct BatchStats {
    Tensor<Real> mean;
    Tensor<Real> variance;  // biased (population) variance of the batch
};

namespace detail {
struct ChannelLayout {
    std::size_t batch, channels, spatial;
};

template <class Real>
ChannelLayout channel_layout(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta) {
    if ((x.rank() != 2 && x.rank() != 4) || gamma.rank() != 1 || gamma.dim(0) != x.dim(1) ||
        beta.shape() != gamma.shape()) {
        throw DimensionError("batch_norm: incompatible input " + shape_string(x.shape()) + " and scale " +
                             shape_string(gamma.shape()));
    }
    return {x.dim(0), x.dim(1), x.rank() == 4 ? x.dim(2) * x.dim(3) : 1};
}
}  // namespace detail

template <class Real>
std::pair<Variable<Real>, BatchStats<Real>> batch_norm_train(const Variable<Real>& input, const Variable<Real>& gamma,
                                                             const Variable<Real>& beta, Real eps) {
    const auto& x = input.value();
    const auto L = detail::channel_layout(x, gamma.value(), beta.value());
    if (L.batch * L.spatial < 2) throw DimensionError("batch_norm: training statistics need at least 2 values");
    const Real count = static_cast<Real>(L.batch * L.spatial);

    BatchStats<Real> stats{Tensor<Real>(Shape{L.channels}), Tensor<Real>(Shape{L.channels})};
    auto xhat = std::make_shared<Tensor<Real>>(x.shape());
    auto inv_std = std::make_shared<std::vector<Real>>(L.channels);
    Tensor<Real> out(x.shape());
    for (std::size_t c = 0; c < L.channels; ++c) {
        Real s = 0;
        for (std::size_t n = 0; n < L.batch; ++n) {
            const Real* p = x.data() + (n * L.channels + c) * L.spatial;
            for (std::size_t j = 0; j < L.spatial; ++j) s += p[j];
        }
        const Real mu = s / count;
        Real v = 0;
        for (std::size_t n = 0; n < L.batch; ++n) {
            const Real* p = x.data() + (n * L.channels + c) * L.spatial;
            for (std::size_t j = 0; j < L.spatial; ++j) v += (p[j] - mu) * (p[j] - mu);
        }
        v /= count;
        stats.mean[c] = mu;
        stats.variance[c] = v;
        const Real inv = Real(1) / std::sqrt(v + eps);
        (*inv_std)[c] = inv;
        const Real gm = gamma.value()[c], bt = beta.value()[c];
        for (std::size_t n = 0; n < L.batch; ++n) {
            const std::size_t base = (n * L.channels + c) * L.spatial;
            for (std::size_t j = 0; j < L.spatial; ++j) {
                const Real h = (x[base + j] - mu) * inv;
                (*xhat)[base + j] = h;
                out[base + j] = gm * h + bt;
            }
        }
    }

    auto result = detail::record<Real>(std::move(out), {input, gamma, beta}, [L, xhat, inv_std, count](Node<Real>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        const auto& gy = self.grad;
        for (std::size_t c = 0; c < L.channels; ++c) {
            Real sum_g = 0, sum_gx = 0;
            for (std::size_t n = 0; n < L.batch; ++n) {
                const std::size_t base = (n * L.channels + c) * L.spatial;
                for (std::size_t j = 0; j < L.spatial; ++j) {
                    sum_g += gy[base + j];
                    sum_gx += gy[base + j] * (*xhat)[base + j];
                }
            }
            if (pb->requires_grad) pb->grad_buffer()[c] += sum_g;
            if (pg->requires_grad) pg->grad_buffer()[c] += sum_gx;
            if (px->requires_grad) {
                auto& gx = px->grad_buffer();
                const Real k = pg->value[c] * (*inv_std)[c] / count;
                for (std::size_t n = 0; n < L.batch; ++n) {
                    const std::size_t base = (n * L.channels + c) * L.spatial;
                    for (std::size_t j = 0; j < L.spatial; ++j) {
                        gx[base + j] += k * (count * gy[base + j] - sum_g - (*xhat)[base + j] * sum_gx);
                    }
                }
            }
        }
    });
    return {std::move(result), std::move(stats)};
}

template <class Real>
Variable<Real> batch_norm_eval(const Variable<Real>& input, const Variable<Real>& gamma, const Variable<Real>& beta,
                               const Tensor<Real>& running_mean, const Tensor<Real>& running_var, Real eps) {
    const auto& x = input.value();
    const auto L = detail::channel_layout(x, gamma.value(), beta.value());
    auto inv_std = std::make_shared<std::vector<Real>>(L.channels);
    for (std::size_t c = 0; c < L.channels; ++c) (*inv_std)[c] = Real(1) / std::sqrt(running_var[c] + eps);
    Tensor<Real> out(x.shape());
    for (std::size_t n = 0; n < L.batch; ++n)
        for (std::size_t c = 0; c < L.channels; ++c) {
            const std::size_t base = (n * L.channels + c) * L.spatial;
            const Real gm = gamma.value()[c] * (*inv_std)[c];
            const Real mu = running_mean[c], bt = beta.value()[c];
            for (std::size_t j = 0; j < L.spatial; ++j) out[base + j] = gm * (x[base + j] - mu) + bt;
        }
    auto mean_copy = std::make_shared<Tensor<Real>>(running_mean);
    return detail::record<Real>(std::move(out), {input, gamma, beta}, [L, inv_std, mean_copy](Node<Real>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        for (std::size_t n = 0; n < L.batch; ++n)
            for (std::size_t c = 0; c < L.channels; ++c) {
                const std::size_t base = (n * L.channels + c) * L.spatial;
                const Real inv = (*inv_std)[c];
                for (std::size_t j = 0; j < L.spatial; ++j) {
                    const Real gy = self.grad[base + j];
                    if (pb->requires_grad) pb->grad_buffer()[c] += gy;
                    if (pg->requires_grad) pg->grad_buffer()[c] += gy * (px->value[base + j] - (*mean_copy)[c]) * inv;
                    if (px->requires_grad) px->grad_buffer()[base + j] += gy * pg->value[c] * inv;
                }
            }
    });
}

// ---------------------------------------------------------------------------
// Row-wise softmax family on [N,C] logits, with temperature
// ---------------------------------------------------------------------------

namespace detail {
template <class Real>
void softmax_rows(const Tensor<Real>& logits, Real temperature, Tensor<Real>& out) {
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* z = logits.data() + r * cols;
        Real* p = out.data() + r * cols;
        Real peak = z[0] / temperature;
        for (std::size_t c = 1; c < cols; ++c) peak = std::max(peak, z[c] / temperature);
        Real total = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            p[c] = std::exp(z[c] / temperature - peak);
            total += p[c];
        }
        for (std::size_t c = 0; c < cols; ++c) p[c] /= total;
    }
}

inline void require_temperature(double t) {
    if (!(t > 0.0) || !std::isfinite(t)) {
        throw DomainError("temperature must be positive and finite, got " + std::to_string(t));
    }
}
}  // namespace detail

template <class Real>
Variable<Real> softmax(const Variable<Real>& logits, Real temperature = Real(1)) {
    detail::require_temperature(static_cast<double>(temperature));
    detail::require_rank("softmax", logits.value(), 2);
    Tensor<Real> out(logits.shape());
    detail::softmax_rows(logits.value(), temperature, out);
    const std::size_t rows = out.dim(0), cols = out.dim(1);
    return detail::record<Real>(out, {logits}, [rows, cols, temperature, out](Node<Real>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const Real* p = out.data() + r * cols;
            const Real* gy = self.grad.data() + r * cols;
            Real dot = 0;
            for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * p[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += p[c] * (gy[c] - dot) / temperature;
        }
    });
}

template <class Real>
Variable<Real> log_softmax(const Variable<Real>& logits, Real temperature = Real(1)) {
    detail::require_temperature(static_cast<double>(temperature));
    detail::require_rank("log_softmax", logits.value(), 2);
    const auto& z = logits.value();
    const std::size_t rows = z.dim(0), cols = z.dim(1);
    Tensor<Real> out(z.shape());
    auto probs = std::make_shared<Tensor<Real>>(z.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        Real peak = z.at(r, 0) / temperature;
        for (std::size_t c = 1; c < cols; ++c) peak = std::max(peak, z.at(r, c) / temperature);
        Real total = 0;
        for (std::size_t c = 0; c < cols; ++c) total += std::exp(z.at(r, c) / temperature - peak);
        const Real lse = peak + std::log(total);
        for (std::size_t c = 0; c < cols; ++c) {
            out.at(r, c) = z.at(r, c) / temperature - lse;
            probs->at(r, c) = std::exp(out.at(r, c));
        }
    }
    return detail::record<Real>(std::move(out), {logits}, [rows, cols, temperature, probs](Node<Real>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            Real total = 0;
            for (std::size_t c = 0; c < cols; ++c) total += self.grad[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c)
                g[r * cols + c] += (self.grad[r * cols + c] - probs->at(r, c) * total) / temperature;
        }
    });
}

// Mean over rows: [N,C] -> [C].
template <class Real>
Variable<Real> column_mean(const Variable<Real>& a) {
    const auto& x = a.value();
    detail::require_rank("column_mean", x, 2);
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (rows == 0) throw DimensionError("column_mean of an empty batch");
    Tensor<Real> out(Shape{cols});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c] += x.at(r, c);
    for (auto& v : out.storage()) v /= static_cast<Real>(rows);
    return detail::record<Real>(std::move(out), {a}, [rows, cols](Node<Real>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[c] / static_cast<Real>(rows);
    });
}

}  // namespace selftrain::numerics
