#include "simd_kernels.hpp"

#include <immintrin.h>

namespace blendscore::simd {
namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s2 = _mm_add_pd(lo, hi);
    const __m128d s1 = _mm_add_sd(s2, _mm_unpackhi_pd(s2, s2));
    return _mm_cvtsd_f64(s1);
}

void sqdist_to_rows_avx2(const double* x, std::size_t n, std::size_t d,
                         const double* y, double scale, double* out) {
    const __m256d vs = _mm256_set1_pd(scale);
    const std::size_t d4 = d - d % 4;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x + i * d;
        __m256d acc = _mm256_setzero_pd();
        std::size_t l = 0;
        for (; l < d4; l += 4) {
            const __m256d yv = _mm256_loadu_pd(y + l);
            const __m256d xv = _mm256_loadu_pd(row + l);
            const __m256d diff = _mm256_fnmadd_pd(vs, xv, yv);  // y - scale*x
            acc = _mm256_fmadd_pd(diff, diff, acc);
        }
        double tail = 0.0;
        for (; l < d; ++l) {
            const double diff = y[l] - scale * row[l];
            tail += diff * diff;
        }
        out[i] = hsum(acc) + tail;
    }
}

void weighted_sum_rows_avx2(const double* w, const double* x,
                            std::size_t n, std::size_t d, double* out) {
    for (std::size_t l = 0; l < d; ++l) out[l] = 0.0;
    const std::size_t d4 = d - d % 4;
    for (std::size_t i = 0; i < n; ++i) {
        const __m256d wi = _mm256_set1_pd(w[i]);
        const double* row = x + i * d;
        std::size_t l = 0;
        for (; l < d4; l += 4) {
            const __m256d acc = _mm256_loadu_pd(out + l);
            _mm256_storeu_pd(out + l, _mm256_fmadd_pd(wi, _mm256_loadu_pd(row + l), acc));
        }
        for (; l < d; ++l) out[l] += w[i] * row[l];
    }
}

void weighted_center_moments_avx2(const double* w, const double* a, const double* b,
                                  std::size_t n, std::size_t d,
                                  const double* ca, const double* cb,
                                  double* maa, double* mbb, double* mab) {
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    const std::size_t d4 = d - d % 4;
    for (std::size_t i = 0; i < n; ++i) {
        const double w2 = w[i] * w[i];
        const double* ra = a + i * d;
        const double* rb = b + i * d;
        __m256d vaa = _mm256_setzero_pd();
        __m256d vbb = _mm256_setzero_pd();
        __m256d vab = _mm256_setzero_pd();
        std::size_t l = 0;
        for (; l < d4; l += 4) {
            const __m256d da = _mm256_sub_pd(_mm256_loadu_pd(ra + l), _mm256_loadu_pd(ca + l));
            const __m256d db = _mm256_sub_pd(_mm256_loadu_pd(rb + l), _mm256_loadu_pd(cb + l));
            vaa = _mm256_fmadd_pd(da, da, vaa);
            vbb = _mm256_fmadd_pd(db, db, vbb);
            vab = _mm256_fmadd_pd(da, db, vab);
        }
        double paa = hsum(vaa), pbb = hsum(vbb), pab = hsum(vab);
        for (; l < d; ++l) {
            const double da = ra[l] - ca[l];
            const double db = rb[l] - cb[l];
            paa += da * da;
            pbb += db * db;
            pab += da * db;
        }
        saa += w2 * paa;
        sbb += w2 * pbb;
        sab += w2 * pab;
    }
    *maa = saa;
    *mbb = sbb;
    *mab = sab;
}

void pairwise_sqdist_yt_avx2(const double* x, std::size_t n, const double* yt,
                             std::size_t m, std::size_t d, double* out) {
    const std::size_t m4 = m - m % 4;
    for (std::size_t i = 0; i < n; ++i) {
        double* row = out + i * m;
        for (std::size_t j = 0; j < m; ++j) row[j] = 0.0;
        const double* xi = x + i * d;
        for (std::size_t l = 0; l < d; ++l) {
            const __m256d xv = _mm256_set1_pd(xi[l]);
            const double* yl = yt + l * m;
            std::size_t j = 0;
            for (; j < m4; j += 4) {
                const __m256d diff = _mm256_sub_pd(xv, _mm256_loadu_pd(yl + j));
                const __m256d acc = _mm256_loadu_pd(row + j);
                _mm256_storeu_pd(row + j, _mm256_fmadd_pd(diff, diff, acc));
            }
            for (; j < m; ++j) {
                const double diff = xi[l] - yl[j];
                row[j] += diff * diff;
            }
        }
    }
}

}  // namespace

bool cpu_has_avx2() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

void fill_avx2(Kernels& k) {
    k.sqdist_to_rows = sqdist_to_rows_avx2;
    k.weighted_sum_rows = weighted_sum_rows_avx2;
    k.weighted_center_moments = weighted_center_moments_avx2;
    k.pairwise_sqdist_yt = pairwise_sqdist_yt_avx2;
}

}  // namespace blendscore::simd
