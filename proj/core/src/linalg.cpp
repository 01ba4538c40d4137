#include "olab/linalg.hpp"

#include "olab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace olab {

EigResult sym_eig(const Tensor &a) {
    if (a.rank() != 2 || a.rows() != a.cols()) {
        throw std::invalid_argument("sym_eig: input must be square, got " + a.shape_str());
    }
    const std::size_t k = a.rows();
    const double scale = max_abs(a);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i + 1; j < k; ++j) {
            if (std::fabs(a(i, j) - a(j, i)) > 1e-10 * std::max(1.0, scale)) {
                throw std::invalid_argument("sym_eig: input is not symmetric");
            }
        }
    }

    Tensor m = a;
    Tensor q = Tensor::identity(k);
    const double norm = frobenius_norm(a);
    const double tol = 1e-12 * std::max(norm, 1e-300);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
            for (std::size_t r = p + 1; r < k; ++r) {
                off += 2.0 * m(p, r) * m(p, r);
            }
        }
        if (std::sqrt(off) < tol) {
            break;
        }
        for (std::size_t p = 0; p + 1 < k; ++p) {
            for (std::size_t r = p + 1; r < k; ++r) {
                const double apr = m(p, r);
                if (apr == 0.0) {
                    continue;
                }
                const double app = m(p, p);
                const double arr = m(r, r);
                const double theta = (arr - app) / (2.0 * apr);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                // Rotate rows/cols p and r of m.
                for (std::size_t j = 0; j < k; ++j) {
                    const double mpj = m(p, j);
                    const double mrj = m(r, j);
                    m(p, j) = c * mpj - s * mrj;
                    m(r, j) = s * mpj + c * mrj;
                }
                for (std::size_t i = 0; i < k; ++i) {
                    const double mip = m(i, p);
                    const double mir = m(i, r);
                    m(i, p) = c * mip - s * mir;
                    m(i, r) = s * mip + c * mir;
                    const double qip = q(i, p);
                    const double qir = q(i, r);
                    q(i, p) = c * qip - s * qir;
                    q(i, r) = s * qip + c * qir;
                }
                m(p, r) = 0.0;
                m(r, p) = 0.0;
            }
        }
    }

    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return m(i, i) > m(j, j); });

    EigResult result{Tensor(k), Tensor(k, k)};
    for (std::size_t col = 0; col < k; ++col) {
        const std::size_t src = order[col];
        result.eigenvalues(col) = m(src, src);
        for (std::size_t i = 0; i < k; ++i) {
            result.eigenvectors(i, col) = q(i, src);
        }
    }
    return result;
}

Tensor sym_power_from_eig(const EigResult &eig, double power, double eps) {
    const std::size_t k = eig.eigenvalues.size();
    Tensor scaled(k, k); // Q * f(Lambda)
    for (std::size_t j = 0; j < k; ++j) {
        const double lam = std::max(eig.eigenvalues(j), 0.0);
        const double f = std::pow(lam + eps, power);
        for (std::size_t i = 0; i < k; ++i) {
            scaled(i, j) = eig.eigenvectors(i, j) * f;
        }
    }
    return matmul_nt(scaled, eig.eigenvectors);
}

} // namespace olab
