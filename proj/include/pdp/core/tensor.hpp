#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdp {

using real = double;

// Dense row-major tensor. Most of the code uses rank-4 NCHW layouts;
// losses occasionally use rank-5 (batch, anchor, h, w, channel).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, real fill = 0.0);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, real v) { return Tensor(std::move(shape), v); }
    static Tensor from(std::vector<int> shape, std::vector<real> values);
    static Tensor scalar(real v) { return from({1}, {v}); }

    bool empty() const { return data_.empty(); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }

    real& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    real operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Rank-4 accessor, NCHW.
    real& at4(int n, int c, int h, int w) {
        return data_[static_cast<size_t>(((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    real at4(int n, int c, int h, int w) const {
        return data_[static_cast<size_t>(((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    void fill(real v);
    void zero() { fill(0.0); }

    // Same data, new shape; element counts must agree.
    Tensor reshaped(std::vector<int> new_shape) const;

    real sum() const;
    real abs_max() const;

    void add_(const Tensor& other);            // elementwise +=
    void add_scaled_(const Tensor& other, real s);
    void scale_(real s);

private:
    std::vector<int> shape_;
    std::vector<real> data_;
};

std::string shape_str(const std::vector<int>& shape);
bool same_shape(const Tensor& a, const Tensor& b);

// Thrown on malformed configuration (channel/group mismatches, bad kernel sets...).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg);
};

// Thrown on malformed runtime inputs (shape mismatches, non-divisible sizes...).
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg);
};

// Thrown on file-system and serialization failures.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg);
};

}  // namespace pdp
