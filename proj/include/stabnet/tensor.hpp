#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stabnet/errors.hpp"

namespace stabnet {

/// Dense n-dimensional array of 32-bit floats, row-major, 1 to 4 dims.
/// The universal value type for activations, weights and gradients.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        check_shape(shape_);
        data_.assign(numel_of(shape_), 0.0f);
    }

    Tensor(std::vector<int> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (data_.size() != numel_of(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
        }
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, float value) {
        Tensor t(std::move(shape));
        for (float& v : t.data_) v = value;
        return t;
    }

    static Tensor scalar(float value) { return Tensor({1}, {value}); }

    const std::vector<int>& shape() const { return shape_; }
    int dims() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t numel() const { return data_.size(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float& at(int i, int j) { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }
    float at(int i, int j) const { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }

    float& at(int b, int c, int y, int x) {
        return data_[((static_cast<std::size_t>(b) * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }
    float at(int b, int c, int y, int x) const {
        return data_[((static_cast<std::size_t>(b) * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::string shape_str() const { return shape_string(shape_); }

    static std::string shape_string(const std::vector<int>& shape) {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    static std::size_t numel_of(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (const int d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }

private:
    static void check_shape(const std::vector<int>& shape) {
        if (shape.empty() || shape.size() > 4) {
            throw DimensionError("tensor must have 1 to 4 dims, got " + shape_string(shape));
        }
        for (const int d : shape) {
            if (d <= 0) throw DimensionError("tensor dims must be positive, got " + shape_string(shape));
        }
    }

    std::vector<int> shape_;
    std::vector<float> data_;
};

}  // namespace stabnet
