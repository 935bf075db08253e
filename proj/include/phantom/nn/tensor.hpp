#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace phantom::nn {

using Rng = std::mt19937_64;

struct Shape {
    std::size_t length = 0;
    std::size_t channels = 0;

    std::size_t size() const { return length * channels; }
    bool operator==(const Shape&) const = default;
};

std::string to_string(Shape s);

/// Rank-2 row-major array: `length` rows of `channels` values.
class Tensor2 {
public:
    Tensor2() = default;
    Tensor2(std::size_t length, std::size_t channels, double fill = 0.0)
        : shape_{length, channels}, data_(length * channels, fill) {}
    Tensor2(std::size_t length, std::size_t channels, std::vector<double> data) : shape_{length, channels}, data_(std::move(data)) {
        if (data_.size() != shape_.size()) throw std::invalid_argument("tensor buffer does not match shape");
    }
    explicit Tensor2(Shape s, double fill = 0.0) : Tensor2(s.length, s.channels, fill) {}

    Shape shape() const { return shape_; }
    std::size_t length() const { return shape_.length; }
    std::size_t channels() const { return shape_.channels; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t c) { return data_[i * shape_.channels + c]; }
    double operator()(std::size_t i, std::size_t c) const { return data_[i * shape_.channels + c]; }
    double& operator[](std::size_t k) { return data_[k]; }
    double operator[](std::size_t k) const { return data_[k]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* row(std::size_t i) { return data_.data() + i * shape_.channels; }
    const double* row(std::size_t i) const { return data_.data() + i * shape_.channels; }

    /// Keeps capacity; contents are unspecified unless `fill` is given.
    void resize(Shape s) {
        shape_ = s;
        data_.resize(s.size());
    }
    void resize(Shape s, double fill) {
        shape_ = s;
        data_.assign(s.size(), fill);
    }
    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    /// Same buffer viewed with a different shape of equal size.
    Tensor2 reshaped(Shape s) const;

    bool all_finite() const;
    bool operator==(const Tensor2&) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

}  // namespace phantom::nn
