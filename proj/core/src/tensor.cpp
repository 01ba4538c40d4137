#include "olab/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace olab {

namespace {
std::size_t shape_product(const std::vector<std::size_t> &shape) {
    std::size_t n = 1;
    for (auto e : shape) {
        n *= e;
    }
    return n;
}
} // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    if (shape_.empty() || shape_.size() > 3) {
        throw std::invalid_argument("tensor rank must be 1..3");
    }
    data_.assign(shape_product(shape_), 0.0);
}

Tensor::Tensor(std::size_t n) : Tensor(std::vector<std::size_t>{n}) {}
Tensor::Tensor(std::size_t rows, std::size_t cols) : Tensor(std::vector<std::size_t>{rows, cols}) {}
Tensor::Tensor(std::size_t d0, std::size_t d1, std::size_t d2)
    : Tensor(std::vector<std::size_t>{d0, d1, d2}) {}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        t(i, i) = 1.0;
    }
    return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = rows.begin()->size();
    Tensor t(r, c);
    std::size_t i = 0;
    for (const auto &row : rows) {
        if (row.size() != c) {
            throw std::invalid_argument("ragged matrix literal");
        }
        std::size_t j = 0;
        for (double v : row) {
            t(i, j++) = v;
        }
        ++i;
    }
    return t;
}

Tensor Tensor::vector(std::initializer_list<double> vals) {
    Tensor t(vals.size());
    std::size_t i = 0;
    for (double v : vals) {
        t(i++) = v;
    }
    return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw std::invalid_argument("axis out of range");
    }
    return shape_[axis];
}

Tensor &Tensor::operator+=(const Tensor &other) {
    if (!same_shape(other)) {
        throw std::invalid_argument("shape mismatch in +=: " + shape_str() + " vs " +
                                    other.shape_str());
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
    return *this;
}

Tensor &Tensor::operator-=(const Tensor &other) {
    if (!same_shape(other)) {
        throw std::invalid_argument("shape mismatch in -=: " + shape_str() + " vs " +
                                    other.shape_str());
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] -= other.data_[i];
    }
    return *this;
}

Tensor &Tensor::operator*=(double s) {
    for (double &v : data_) {
        v *= s;
    }
    return *this;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        os << (i ? "x" : "") << shape_[i];
    }
    os << "]";
    return os.str();
}

Tensor operator+(Tensor a, const Tensor &b) {
    a += b;
    return a;
}
Tensor operator-(Tensor a, const Tensor &b) {
    a -= b;
    return a;
}
Tensor operator*(Tensor a, double s) {
    a *= s;
    return a;
}

} // namespace olab
