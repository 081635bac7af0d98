#include "pdp/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace pdp {

static std::int64_t count_elems(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw InputError("negative tensor dimension in " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape, real fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count_elems(shape_)), fill);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<real> values) {
    if (count_elems(shape) != static_cast<std::int64_t>(values.size()))
        throw InputError("Tensor::from: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
}

void Tensor::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
    if (count_elems(new_shape) != numel())
        throw InputError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape));
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
}

real Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

real Tensor::abs_max() const {
    real m = 0.0;
    for (real v : data_) m = std::max(m, std::abs(v));
    return m;
}

void Tensor::add_(const Tensor& other) {
    if (!same_shape(*this, other)) throw InputError("add_: shape mismatch");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::add_scaled_(const Tensor& other, real s) {
    if (!same_shape(*this, other)) throw InputError("add_scaled_: shape mismatch");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
}

void Tensor::scale_(real s) {
    for (real& v : data_) v *= s;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

ConfigError::ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
InputError::InputError(const std::string& msg) : std::runtime_error("input error: " + msg) {}
IoError::IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}

}  // namespace pdp
