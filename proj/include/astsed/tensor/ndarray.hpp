#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "astsed/tensor/errors.hpp"

namespace astsed {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major array. A default-constructed array is "unset" (no shape,
/// no storage); every constructed array has strictly positive dimensions.
template <typename T = double>
class NdArray {
 public:
    using value_type = T;

    NdArray() = default;

    explicit NdArray(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
        check_shape();
        data_.assign(shape_size(shape_), fill);
    }

    NdArray(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (data_.size() != shape_size(shape_)) {
            throw DimensionError("buffer of " + std::to_string(data_.size()) +
                                 " values does not fit shape " + shape_str(shape_));
        }
    }

    static NdArray scalar(T v) { return NdArray(Shape{1}, std::vector<T>{v}); }

    static NdArray vector(std::vector<T> v) {
        const std::size_t n = v.size();
        return NdArray(Shape{n}, std::move(v));
    }

    static NdArray matrix(std::size_t rows, std::size_t cols, std::vector<T> v) {
        return NdArray(Shape{rows, cols}, std::move(v));
    }

    bool empty() const noexcept { return data_.empty(); }
    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t last_dim() const { return shape_.empty() ? 0 : shape_.back(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    const std::vector<T>& buffer() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    T& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    const T& at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    NdArray reshaped(Shape shape) const {
        if (shape_size(shape) != size()) {
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " +
                                 shape_str(shape));
        }
        return NdArray(std::move(shape), data_);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(),
                           [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    NdArray<U> cast() const {
        return NdArray<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    friend bool operator==(const NdArray& a, const NdArray& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

 private:
    void check_shape() const {
        if (shape_.empty()) throw DimensionError("array shape must have at least one axis");
        for (std::size_t d : shape_) {
            if (d == 0) throw DimensionError("zero-sized axis in shape " + shape_str(shape_));
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;

template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// Views an array as a [rows, last_dim] matrix.
template <typename T>
MatrixMap<T> as_matrix(NdArray<T>& a) {
    const auto cols = static_cast<Eigen::Index>(a.last_dim());
    return MatrixMap<T>(a.data(), static_cast<Eigen::Index>(a.size()) / cols, cols);
}

template <typename T>
ConstMatrixMap<T> as_matrix(const NdArray<T>& a) {
    const auto cols = static_cast<Eigen::Index>(a.last_dim());
    return ConstMatrixMap<T>(a.data(), static_cast<Eigen::Index>(a.size()) / cols, cols);
}

template <typename T>
T max_abs_diff(const NdArray<T>& a, const NdArray<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    T m{0};
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace astsed
