#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace olab {

/// Dense row-major tensor of rank 1..3, double precision.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::size_t n);
    Tensor(std::size_t rows, std::size_t cols);
    Tensor(std::size_t d0, std::size_t d1, std::size_t d2);

    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor identity(std::size_t n);
    /// Rank-2 tensor from nested braces, e.g. {{1,2},{3,4}}.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::initializer_list<double> vals);

    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const;
    const std::vector<std::size_t> &shape() const { return shape_; }
    std::size_t rows() const { return extent(0); }
    std::size_t cols() const { return extent(1); }

    double &operator()(std::size_t i) { return data_[i]; }
    double operator()(std::size_t i) const { return data_[i]; }
    double &operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double &operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    double *data() { return data_.data(); }
    const double *data() const { return data_.data(); }
    std::vector<double> &raw() { return data_; }
    const std::vector<double> &raw() const { return data_; }

    bool same_shape(const Tensor &other) const { return shape_ == other.shape_; }
    bool empty() const { return data_.empty(); }

    Tensor &operator+=(const Tensor &other);
    Tensor &operator-=(const Tensor &other);
    Tensor &operator*=(double s);
    void fill(double value);
    void zero() { fill(0.0); }

    /// True when every element is finite.
    bool all_finite() const;

    std::string shape_str() const;

  private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor &b);
Tensor operator-(Tensor a, const Tensor &b);
Tensor operator*(Tensor a, double s);

} // namespace olab
