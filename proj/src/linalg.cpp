#include "blendscore/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace blendscore {

double pairwise_sum(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n == 0) return 0.0;
    if (n <= 16) {
        double s = 0.0;
        for (double v : x) s += v;
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

Vec matvec(const Matrix& a, std::span<const double> x) {
    check_dim(x.size(), a.cols(), "matvec");
    Vec y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
    return y;
}

Vec matvec_t(const Matrix& a, std::span<const double> x) {
    check_dim(x.size(), a.rows(), "matvec_t");
    Vec y(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto r = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) y[j] += r[j] * x[i];
    }
    return y;
}

Matrix cholesky(const Matrix& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("cholesky: matrix not square");
    const std::size_t n = a.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0)) throw std::runtime_error("cholesky: matrix not positive definite");
        l(j, j) = std::sqrt(diag);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

Vec cholesky_solve(const Matrix& lower, std::span<const double> b) {
    const std::size_t n = lower.rows();
    check_dim(b.size(), n, "cholesky_solve");
    Vec y(b.begin(), b.end());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) y[i] -= lower(i, k) * y[k];
        y[i] /= lower(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        for (std::size_t k = ii + 1; k < n; ++k) y[ii] -= lower(k, ii) * y[k];
        y[ii] /= lower(ii, ii);
    }
    return y;
}

double cholesky_log_det(const Matrix& lower) {
    double s = 0.0;
    for (std::size_t i = 0; i < lower.rows(); ++i) s += std::log(lower(i, i));
    return 2.0 * s;
}

SymEig sym_eig(const Matrix& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("sym_eig: matrix not square");
    const std::size_t n = a.rows();
    Matrix m = a;
    Matrix v = Matrix::identity(n);

    // Cyclic Jacobi. Dimensions here are small (d <= a few dozen), so
    // quadratic sweeps are more than fast enough.
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += m(p, q) * m(p, q);
        if (off < 1e-26 * (1.0 + std::abs(m(0, 0)))) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = m(p, q);
                if (apq == 0.0) continue;
                const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m(k, p), mkq = m(k, q);
                    m(k, p) = c * mkp - s * mkq;
                    m(k, q) = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m(p, k), mqk = m(q, k);
                    m(p, k) = c * mpk - s * mqk;
                    m(q, k) = s * mpk + c * mqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return m(i, i) > m(j, j); });

    SymEig out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = m(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
    }
    return out;
}

}  // namespace blendscore
