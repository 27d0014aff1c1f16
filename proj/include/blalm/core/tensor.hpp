#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "blalm/core/errors.hpp"

namespace blalm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Dense row-major array. Zero-length axes are allowed so that empty
// sequences flow through the mixers without special cases.
template <typename Scalar>
class Tensor {
public:
    using value_type = Scalar;

    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), Scalar{0}) {}

    Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_size(shape_) != data_.size()) {
            throw ContractViolation("tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_string(shape_));
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, Scalar value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static Tensor scalar(Scalar value) { return Tensor({1}, {value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t dim(std::size_t axis) const {
        if (axis >= shape_.size()) {
            throw ContractViolation("axis " + std::to_string(axis) + " out of range for shape " +
                                    shape_string(shape_));
        }
        return shape_[axis];
    }

    // Rows/cols of a 2-axis tensor.
    std::size_t rows() const { return dim(0); }
    std::size_t cols() const { return dim(1); }

    std::span<Scalar> data() noexcept { return data_; }
    std::span<const Scalar> data() const noexcept { return data_; }
    Scalar* raw() noexcept { return data_.data(); }
    const Scalar* raw() const noexcept { return data_.data(); }
    const std::vector<Scalar>& values() const noexcept { return data_; }

    Scalar& operator[](std::size_t i) noexcept { return data_[i]; }
    Scalar operator[](std::size_t i) const noexcept { return data_[i]; }

    Scalar& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
    Scalar at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

    Scalar item() const {
        if (data_.size() != 1) {
            throw ContractViolation("item() on tensor of shape " + shape_string(shape_));
        }
        return data_[0];
    }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size()) {
            throw ContractViolation("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
    }

    void fill(Scalar value) { std::fill(data_.begin(), data_.end(), value); }

    Tensor& operator+=(const Tensor& other) {
        require_same_shape(other, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) {
            data_[i] += other.data_[i];
        }
        return *this;
    }

    template <typename Other>
    Tensor<Other> cast() const {
        std::vector<Other> out(data_.begin(), data_.end());
        return Tensor<Other>(shape_, std::move(out));
    }

    void require_same_shape(const Tensor& other, const char* op) const {
        if (shape_ != other.shape_) {
            throw ContractViolation(std::string(op) + ": shape mismatch " + shape_string(shape_) + " vs " +
                                    shape_string(other.shape_));
        }
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<Scalar> data_;
};

// Max |a - b| over all elements; shapes must agree.
template <typename Scalar>
double max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    a.require_same_shape(b, "max_abs_diff");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, static_cast<double>(std::abs(a[i] - b[i])));
    }
    return worst;
}

// Numerically stable softmax along `axis` of a tensor of any rank.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, std::size_t axis);

}  // namespace blalm
