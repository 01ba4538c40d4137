#include "olab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace olab {

namespace {

void require_rank2(const Tensor &t, const char *name) {
    if (t.rank() != 2) {
        throw std::invalid_argument(std::string(name) + " must be rank-2, got " + t.shape_str());
    }
}

double reduce_span(const double *v, std::size_t n, std::size_t stride, ReduceKind kind) {
    switch (kind) {
    case ReduceKind::Sum:
    case ReduceKind::Mean: {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += v[i * stride];
        }
        return kind == ReduceKind::Mean ? acc / static_cast<double>(n) : acc;
    }
    case ReduceKind::Max: {
        double m = v[0];
        for (std::size_t i = 1; i < n; ++i) {
            m = std::max(m, v[i * stride]);
        }
        return m;
    }
    case ReduceKind::AbsMedian: {
        std::vector<double> a(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = std::fabs(v[i * stride]);
        }
        std::sort(a.begin(), a.end());
        if (n % 2 == 1) {
            return a[n / 2];
        }
        return 0.5 * (a[n / 2 - 1] + a[n / 2]);
    }
    }
    throw std::invalid_argument("unknown reduce kind");
}

} // namespace

Tensor matmul(const Tensor &a, const Tensor &b) {
    require_rank2(a, "matmul lhs");
    require_rank2(b, "matmul rhs");
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul shape mismatch: " + a.shape_str() + " x " +
                                    b.shape_str());
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor c(n, m);
    // i-k-j loop order: the k-sum for each c(i,j) still runs in index order,
    // while the inner j loop vectorises.
    for (std::size_t i = 0; i < n; ++i) {
        double *ci = c.data() + i * m;
        const double *ai = a.data() + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ai[kk];
            const double *bk = b.data() + kk * m;
            for (std::size_t j = 0; j < m; ++j) {
                ci[j] += av * bk[j];
            }
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor &a, const Tensor &b) {
    require_rank2(a, "matmul_tn lhs");
    require_rank2(b, "matmul_tn rhs");
    if (a.rows() != b.rows()) {
        throw std::invalid_argument("matmul_tn shape mismatch: " + a.shape_str() + " x " +
                                    b.shape_str());
    }
    const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
    Tensor c(n, m);
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double *ak = a.data() + kk * n;
        const double *bk = b.data() + kk * m;
        for (std::size_t i = 0; i < n; ++i) {
            const double av = ak[i];
            double *ci = c.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) {
                ci[j] += av * bk[j];
            }
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor &a, const Tensor &b) {
    require_rank2(a, "matmul_nt lhs");
    require_rank2(b, "matmul_nt rhs");
    if (a.cols() != b.cols()) {
        throw std::invalid_argument("matmul_nt shape mismatch: " + a.shape_str() + " x " +
                                    b.shape_str());
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    Tensor c(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const double *ai = a.data() + i * k;
        double *ci = c.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            const double *bj = b.data() + j * k;
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) {
                acc += ai[kk] * bj[kk];
            }
            ci[j] = acc;
        }
    }
    return c;
}

Tensor transpose(const Tensor &m) {
    require_rank2(m, "transpose");
    Tensor t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            t(j, i) = m(i, j);
        }
    }
    return t;
}

Tensor masked_softmax(const Tensor &logits, const Tensor &mask) {
    require_rank2(logits, "masked_softmax logits");
    if (!mask.empty() && !logits.same_shape(mask)) {
        throw std::invalid_argument("masked_softmax: mask shape mismatch");
    }
    const std::size_t rows = logits.rows(), cols = logits.cols();
    Tensor out(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        double rowmax = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cols; ++j) {
            const double l = logits(i, j) + (mask.empty() ? 0.0 : mask(i, j));
            rowmax = std::max(rowmax, l);
        }
        if (!std::isfinite(rowmax)) {
            throw std::invalid_argument("masked_softmax: row " + std::to_string(i) +
                                        " is fully masked");
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double l = logits(i, j) + (mask.empty() ? 0.0 : mask(i, j));
            const double e = std::exp(l - rowmax);
            out(i, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < cols; ++j) {
            out(i, j) /= denom;
        }
    }
    return out;
}

Tensor softmax_rows(const Tensor &logits) { return masked_softmax(logits, Tensor{}); }

Tensor reduce(const Tensor &x, ReduceKind kind, std::size_t axis) {
    if (axis >= x.rank()) {
        throw std::invalid_argument("reduce: axis out of range");
    }
    if (x.extent(axis) == 0) {
        throw std::invalid_argument("reduce: empty axis");
    }
    if (x.rank() == 1) {
        Tensor out(std::size_t{1});
        out(0) = reduce_span(x.data(), x.size(), 1, kind);
        return out;
    }
    if (x.rank() == 2) {
        const std::size_t r = x.rows(), c = x.cols();
        if (axis == 0) {
            Tensor out(c);
            for (std::size_t j = 0; j < c; ++j) {
                out(j) = reduce_span(x.data() + j, r, c, kind);
            }
            return out;
        }
        Tensor out(r);
        for (std::size_t i = 0; i < r; ++i) {
            out(i) = reduce_span(x.data() + i * c, c, 1, kind);
        }
        return out;
    }
    throw std::invalid_argument("reduce: rank-3 axis reduction not supported");
}

double reduce_all(const Tensor &x, ReduceKind kind) {
    if (x.size() == 0) {
        throw std::invalid_argument("reduce_all: empty tensor");
    }
    return reduce_span(x.data(), x.size(), 1, kind);
}

double frobenius_norm(const Tensor &x) {
    double acc = 0.0;
    for (double v : x.raw()) {
        acc += v * v;
    }
    return std::sqrt(acc);
}

double max_abs(const Tensor &x) {
    double m = 0.0;
    for (double v : x.raw()) {
        m = std::max(m, std::fabs(v));
    }
    return m;
}

} // namespace olab
