#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sparseshift/error.hpp"

namespace sparseshift {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

/**
 * Dense row-major array of 32-bit reals with 1 to 4 dimensions.
 *
 * A default-constructed tensor has rank 0 and no data; it is only a
 * placeholder and is rejected by every operation that reads values.
 */
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
        check_shape();
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (data_.size() != shape_size(shape_)) {
            throw Error("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_string(shape_));
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }
    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    /// Element count of one slice along the leading dimension.
    std::size_t slice_size() const { return rank() == 0 ? 0 : size() / shape_[0]; }

    std::span<float> slice(std::size_t i) { return values().subspan(i * slice_size(), slice_size()); }
    std::span<const float> slice(std::size_t i) const {
        return values().subspan(i * slice_size(), slice_size());
    }

    std::size_t count_nonzero() const {
        return static_cast<std::size_t>(
            std::count_if(data_.begin(), data_.end(), [](float v) { return v != 0.0f; }));
    }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
    Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

    bool operator==(const Tensor&) const = default;

private:
    void check_shape() const {
        if (shape_.empty() || shape_.size() > 4) {
            throw Error("tensor rank must be 1-4, got " + std::to_string(shape_.size()));
        }
        for (auto d : shape_) {
            if (d == 0) throw Error("tensor dimensions must be positive: " + shape_string(shape_));
        }
    }

    Shape shape_;
    std::vector<float> data_;
};

/// Bitwise equality: distinguishes -0.0 from 0.0 and treats identical NaN payloads as equal.
inline bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           (a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

/// Largest |a-b| divided by the largest |a|; 0 when both are identically zero.
inline double max_relative_deviation(const Tensor& reference, const Tensor& other) {
    if (reference.shape() != other.shape()) {
        throw Error("cannot compare tensors of shape " + shape_string(reference.shape()) + " and " +
                    shape_string(other.shape()));
    }
    double diff = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        diff = std::max(diff, std::abs(static_cast<double>(reference[i]) - other[i]));
        scale = std::max(scale, std::abs(static_cast<double>(reference[i])));
    }
    if (diff == 0.0) return 0.0;
    return scale == 0.0 ? diff : diff / scale;
}

} // namespace sparseshift
