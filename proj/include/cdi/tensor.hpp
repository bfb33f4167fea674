#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace cdi {

// Dense C x H x W tensor of doubles. Small images only, so everything is a
// plain contiguous buffer with channel-major layout.
class Tensor {
public:
    Tensor() = default;
    Tensor(int channels, int height, int width, double fill = 0.0)
        : c_(channels), h_(height), w_(width),
          data_(static_cast<size_t>(channels) * height * width, fill) {
        if (channels <= 0 || height <= 0 || width <= 0)
            throw std::invalid_argument("Tensor: dimensions must be positive");
    }

    int channels() const { return c_; }
    int height() const { return h_; }
    int width() const { return w_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    bool same_shape(const Tensor& o) const {
        return c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    double& operator()(int c, int y, int x) {
        return data_[(static_cast<size_t>(c) * h_ + y) * w_ + x];
    }
    double operator()(int c, int y, int x) const {
        return data_[(static_cast<size_t>(c) * h_ + y) * w_ + x];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    Tensor& operator+=(const Tensor& o) {
        check_shape(o);
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        check_shape(o);
        for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
    friend Tensor operator*(Tensor a, double s) { return a *= s; }
    friend Tensor operator*(double s, Tensor a) { return a *= s; }

    double sum() const {
        double s = 0.0;
        for (double v : data_) s += v;
        return s;
    }
    double mean() const { return sum() / static_cast<double>(data_.size()); }

    double l1_norm() const {
        double s = 0.0;
        for (double v : data_) s += std::fabs(v);
        return s;
    }

    // Mean of squared entries; the per-element reduction used by every loss.
    double mean_sq() const {
        double s = 0.0;
        for (double v : data_) s += v * v;
        return s / static_cast<double>(data_.size());
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::fabs(v));
        return m;
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    void check_shape(const Tensor& o) const {
        if (!same_shape(o)) throw std::invalid_argument("Tensor: shape mismatch");
    }

    int c_ = 0, h_ = 0, w_ = 0;
    std::vector<double> data_;
};

inline double mean_sq_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mean_sq_diff: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

}  // namespace cdi
