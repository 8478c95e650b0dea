#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "hetseg/errors.hpp"

namespace hetseg {

/// Dense row-major float32 tensor. Deliberately minimal: shape + flat
/// storage; layers index it explicitly.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape, float fill = 0.0f)
        : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}
    Tensor(std::initializer_list<std::int64_t> shape, float fill = 0.0f)
        : Tensor(std::vector<std::int64_t>(shape), fill) {}

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t ndim() const { return shape_.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    std::vector<float>& storage() { return data_; }
    const std::vector<float>& storage() const { return data_; }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(0.0f); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    static std::string shape_string(const std::vector<std::int64_t>& s) {
        std::string out = "(";
        for (std::size_t i = 0; i < s.size(); ++i) {
            out += std::to_string(s[i]);
            if (i + 1 < s.size()) out += ", ";
        }
        return out + ")";
    }

private:
    static std::size_t checked_numel(const std::vector<std::int64_t>& shape) {
        std::int64_t n = 1;
        for (std::int64_t d : shape) {
            if (d < 0) throw ShapeError("tensor dimension must be non-negative");
            n *= d;
        }
        return static_cast<std::size_t>(n);
    }

    std::vector<std::int64_t> shape_;
    std::vector<float> data_;
};

}  // namespace hetseg
