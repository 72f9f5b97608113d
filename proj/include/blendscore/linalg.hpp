#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace blendscore {

using Vec = std::vector<double>;

// Dense row-major matrix. All bulk numeric data in the library (reference
// banks, particle sets, score columns) is stored this way so the SIMD kernels
// can iterate rows contiguously.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    Vec row_vec(std::size_t i) const {
        return Vec(data_.begin() + static_cast<std::ptrdiff_t>(i * cols_),
                   data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols_));
    }
    void set_row(std::size_t i, std::span<const double> v) {
        for (std::size_t j = 0; j < cols_; ++j) (*this)(i, j) = v[j];
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline void check_dim(std::size_t got, std::size_t want, const char* what) {
    if (got != want)
        throw std::invalid_argument(std::string(what) + ": dimension mismatch (got " +
                                    std::to_string(got) + ", want " + std::to_string(want) + ")");
}

// Summation with a fixed pairwise reduction tree. Used for weight
// normalizers and metric double sums so results do not depend on how work
// was chunked across threads or SIMD lanes.
double pairwise_sum(std::span<const double> x);

// y = A x for a dense matrix (rows x cols) and x of length cols.
Vec matvec(const Matrix& a, std::span<const double> x);
// y = A^T x for x of length rows.
Vec matvec_t(const Matrix& a, std::span<const double> x);

// In-place lower Cholesky of an SPD matrix. Throws std::runtime_error when a
// pivot is not strictly positive.
Matrix cholesky(const Matrix& a);
// Solve L L^T x = b given the lower factor.
Vec cholesky_solve(const Matrix& lower, std::span<const double> b);
double cholesky_log_det(const Matrix& lower);  // log det of the full matrix

// Eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.
// Eigenvalues returned in descending order with matching columns in vectors.
struct SymEig {
    Vec values;
    Matrix vectors;  // column j is the eigenvector for values[j]
};
SymEig sym_eig(const Matrix& a);

}  // namespace blendscore
