#include <doctest.h>

#include <cmath>

#include "blendscore/linalg.hpp"
#include "blendscore/rng.hpp"
#include "blendscore/simd_ops.hpp"

using namespace blendscore;

// The dispatched backend must agree with the scalar reference kernels on
// random inputs across awkward sizes (tails, d not a multiple of the lane
// count). Differences come only from FMA contraction, so the budget is tight.
namespace {

struct Case {
    std::size_t n, d;
};

constexpr Case kCases[] = {{1, 1}, {3, 2}, {17, 3}, {64, 4}, {129, 5}, {1000, 9}, {257, 24}};

Matrix random_matrix(std::size_t n, std::size_t d, Rng& rng) {
    Matrix m(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < d; ++l) m(i, l) = rng.normal();
    return m;
}

}  // namespace

TEST_CASE("sqdist_to_rows: active backend matches scalar reference") {
    Rng rng(11);
    for (const auto& c : kCases) {
        const Matrix x = random_matrix(c.n, c.d, rng);
        const Vec y = rng.normal_vec(c.d);
        const double scale = 0.73;
        Vec a(c.n), b(c.n);
        simd::kernels().sqdist_to_rows(x.data(), c.n, c.d, y.data(), scale, a.data());
        simd::scalar_kernels().sqdist_to_rows(x.data(), c.n, c.d, y.data(), scale, b.data());
        for (std::size_t i = 0; i < c.n; ++i)
            CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    }
}

TEST_CASE("weighted_sum_rows: active backend matches scalar reference") {
    Rng rng(12);
    for (const auto& c : kCases) {
        const Matrix x = random_matrix(c.n, c.d, rng);
        Vec w(c.n);
        for (auto& v : w) v = rng.uniform();
        Vec a(c.d), b(c.d);
        simd::kernels().weighted_sum_rows(w.data(), x.data(), c.n, c.d, a.data());
        simd::scalar_kernels().weighted_sum_rows(w.data(), x.data(), c.n, c.d, b.data());
        for (std::size_t l = 0; l < c.d; ++l)
            CHECK(a[l] == doctest::Approx(b[l]).epsilon(1e-12));
    }
}

TEST_CASE("weighted_center_moments: active backend matches scalar reference") {
    Rng rng(13);
    for (const auto& c : kCases) {
        const Matrix a = random_matrix(c.n, c.d, rng);
        const Matrix b = random_matrix(c.n, c.d, rng);
        Vec w(c.n);
        for (auto& v : w) v = rng.uniform() / static_cast<double>(c.n);
        const Vec ca = rng.normal_vec(c.d);
        const Vec cb = rng.normal_vec(c.d);
        double m1[3], m2[3];
        simd::kernels().weighted_center_moments(w.data(), a.data(), b.data(), c.n, c.d,
                                                ca.data(), cb.data(), &m1[0], &m1[1], &m1[2]);
        simd::scalar_kernels().weighted_center_moments(w.data(), a.data(), b.data(), c.n, c.d,
                                                       ca.data(), cb.data(), &m2[0], &m2[1],
                                                       &m2[2]);
        for (int k = 0; k < 3; ++k)
            CHECK(m1[k] == doctest::Approx(m2[k]).epsilon(1e-11));
    }
}

TEST_CASE("pairwise_sqdist_yt: active backend matches scalar reference") {
    Rng rng(14);
    for (const auto& c : kCases) {
        const std::size_t m = (c.n * 2) % 37 + 1;
        const Matrix x = random_matrix(c.n, c.d, rng);
        Matrix yt(c.d, m);
        for (std::size_t l = 0; l < c.d; ++l)
            for (std::size_t j = 0; j < m; ++j) yt(l, j) = rng.normal();
        Matrix o1(c.n, m), o2(c.n, m);
        simd::kernels().pairwise_sqdist_yt(x.data(), c.n, yt.data(), m, c.d, o1.data());
        simd::scalar_kernels().pairwise_sqdist_yt(x.data(), c.n, yt.data(), m, c.d, o2.data());
        for (std::size_t i = 0; i < c.n; ++i)
            for (std::size_t j = 0; j < m; ++j)
                CHECK(o1(i, j) == doctest::Approx(o2(i, j)).epsilon(1e-12));
    }
}

TEST_CASE("scalar kernels agree with straightforward formulas") {
    // Pin the reference implementation itself on a tiny instance.
    const double x[] = {1.0, 2.0, 3.0, 4.0};  // 2 x 2
    const double y[] = {0.5, -0.5};
    Vec out(2);
    simd::scalar_kernels().sqdist_to_rows(x, 2, 2, y, 2.0, out.data());
    // row 0: (0.5-2)^2 + (-0.5-4)^2 = 2.25 + 20.25
    CHECK(out[0] == doctest::Approx(22.5));
    // row 1: (0.5-6)^2 + (-0.5-8)^2 = 30.25 + 72.25
    CHECK(out[1] == doctest::Approx(102.5));
}
