#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rgplan {

// Dense row-major array of doubles. For trajectory-shaped tensors the
// convention is shape = {H, C}: horizon leading, channels trailing.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (count(shape_) != data_.size())
            throw std::invalid_argument("Tensor: shape does not match data length");
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    // 2-D accessors (rows = dim 0, cols = dim 1).
    std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at2(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at2(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }
    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) {
        for (auto& x : data_) x = v;
    }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }

    static std::string shape_str(const std::vector<std::size_t>& shape) {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }

  private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline void check_finite(const Tensor& t, const std::string& where) {
    if (!t.all_finite())
        throw std::invalid_argument(where + ": tensor contains NaN or Inf");
}

}  // namespace rgplan
