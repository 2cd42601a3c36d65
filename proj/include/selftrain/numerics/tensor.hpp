#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "selftrain/errors.hpp"

namespace selftrain::numerics {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

// Dense row-major array. Value semantics; gradient bookkeeping lives in Variable.
template <class Real>
class Tensor {
public:
    using value_type = Real;

    Tensor() = default;

    explicit Tensor(Shape shape, Real fill = Real(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size()) {
            throw DimensionError("tensor shape " + shape_string(shape_) + " needs " +
                                 std::to_string(shape_numel(shape_)) + " values, got " +
                                 std::to_string(data_.size()));
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), Real(1)); }
    static Tensor scalar(Real v) { return Tensor(Shape{1}, std::vector<Real>{v}); }

    static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows) {
        std::vector<Real> data;
        std::size_t cols = rows.size() ? rows.begin()->size() : 0;
        for (const auto& row : rows) {
            if (row.size() != cols) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor(Shape{rows.size(), cols}, std::move(data));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    Real* data() noexcept { return data_.data(); }
    const Real* data() const noexcept { return data_.data(); }
    std::span<Real> values() noexcept { return data_; }
    std::span<const Real> values() const noexcept { return data_; }
    std::vector<Real>& storage() noexcept { return data_; }
    const std::vector<Real>& storage() const noexcept { return data_; }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    Real& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    Real at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    Real item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
        return data_[0];
    }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel()) {
            throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    template <class Other>
    Tensor<Other> cast() const {
        std::vector<Other> out(data_.begin(), data_.end());
        return Tensor<Other>(shape_, std::move(out));
    }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
    }

    // Rows [begin, end) along the leading dimension.
    Tensor slice_rows(std::size_t begin, std::size_t end) const {
        if (rank() == 0 || begin > end || end > shape_[0]) throw DimensionError("row slice out of range");
        const std::size_t stride = numel() / std::max<std::size_t>(shape_[0], 1);
        Shape shape = shape_;
        shape[0] = end - begin;
        return Tensor(std::move(shape),
                      std::vector<Real>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                        data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
    }

    std::size_t row_size() const { return shape_.empty() || shape_[0] == 0 ? 0 : numel() / shape_[0]; }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<Real> data_;
};

// Gathers rows (leading-dimension slices) of `src` in the given order.
template <class Real>
Tensor<Real> gather_rows(const Tensor<Real>& src, std::span<const std::size_t> rows) {
    Shape shape = src.shape();
    const std::size_t stride = src.row_size();
    shape[0] = rows.size();
    Tensor<Real> out(shape);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= src.dim(0)) throw DimensionError("gather row index out of range");
        std::copy_n(src.data() + rows[i] * stride, stride, out.data() + i * stride);
    }
    return out;
}

template <class Real>
Tensor<Real> concat_rows(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() != b.rank() || a.row_size() != b.row_size()) {
        throw DimensionError("cannot concatenate " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
    }
    Shape shape = a.shape();
    shape[0] += b.dim(0);
    std::vector<Real> data(a.storage());
    data.insert(data.end(), b.storage().begin(), b.storage().end());
    return Tensor<Real>(std::move(shape), std::move(data));
}

}  // namespace selftrain::numerics
