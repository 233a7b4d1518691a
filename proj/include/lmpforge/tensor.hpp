#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lmpforge/errors.hpp"

namespace lmpforge {

/// Dense row-major tensor of doubles. Rank and dimension sizes are dynamic;
/// the last axis is the channel axis for rank-3 (H,W,C) and rank-4 (M,H,W,C)
/// activations, and the feature axis for rank-2 (M,F) ones.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(count(shape_)), 0.0);
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor from(std::vector<int> shape, std::vector<double> data) {
        Tensor t;
        if (count(shape) != static_cast<std::int64_t>(data.size()))
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double min() const {
        double m = data_.empty() ? 0.0 : data_[0];
        for (double v : data_) m = std::min(m, v);
        return m;
    }

    double max() const {
        double m = data_.empty() ? 0.0 : data_[0];
        for (double v : data_) m = std::max(m, v);
        return m;
    }

    std::string shape_str() const { return shape_str(shape_); }

    static std::int64_t count(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
            n *= d;
        }
        return shape.empty() ? 0 : n;
    }

    static std::string shape_str(const std::vector<int>& shape) {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ")";
        return os.str();
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

/// Max relative difference, with absolute comparison for tiny magnitudes.
inline double rel_diff(double a, double b, double tiny = 1e-6) {
    double scale = std::max(std::abs(a), std::abs(b));
    if (scale < tiny) return std::abs(a - b);
    return std::abs(a - b) / scale;
}

inline double max_rel_diff(const Tensor& a, const Tensor& b, double tiny = 1e-6) {
    require(a.same_shape(b), "max_rel_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, rel_diff(a[i], b[i], tiny));
    return m;
}

}  // namespace lmpforge
