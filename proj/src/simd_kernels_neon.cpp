#include "simd_kernels.hpp"

#include <arm_neon.h>

namespace blendscore::simd {
namespace {

void sqdist_to_rows_neon(const double* x, std::size_t n, std::size_t d,
                         const double* y, double scale, double* out) {
    const float64x2_t vs = vdupq_n_f64(scale);
    const std::size_t d2 = d - d % 2;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x + i * d;
        float64x2_t acc = vdupq_n_f64(0.0);
        std::size_t l = 0;
        for (; l < d2; l += 2) {
            const float64x2_t diff = vfmsq_f64(vld1q_f64(y + l), vs, vld1q_f64(row + l));
            acc = vfmaq_f64(acc, diff, diff);
        }
        double s = vaddvq_f64(acc);
        for (; l < d; ++l) {
            const double diff = y[l] - scale * row[l];
            s += diff * diff;
        }
        out[i] = s;
    }
}

void weighted_sum_rows_neon(const double* w, const double* x,
                            std::size_t n, std::size_t d, double* out) {
    for (std::size_t l = 0; l < d; ++l) out[l] = 0.0;
    const std::size_t d2 = d - d % 2;
    for (std::size_t i = 0; i < n; ++i) {
        const float64x2_t wi = vdupq_n_f64(w[i]);
        const double* row = x + i * d;
        std::size_t l = 0;
        for (; l < d2; l += 2)
            vst1q_f64(out + l, vfmaq_f64(vld1q_f64(out + l), wi, vld1q_f64(row + l)));
        for (; l < d; ++l) out[l] += w[i] * row[l];
    }
}

void weighted_center_moments_neon(const double* w, const double* a, const double* b,
                                  std::size_t n, std::size_t d,
                                  const double* ca, const double* cb,
                                  double* maa, double* mbb, double* mab) {
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    const std::size_t d2 = d - d % 2;
    for (std::size_t i = 0; i < n; ++i) {
        const double w2 = w[i] * w[i];
        const double* ra = a + i * d;
        const double* rb = b + i * d;
        float64x2_t vaa = vdupq_n_f64(0.0);
        float64x2_t vbb = vdupq_n_f64(0.0);
        float64x2_t vab = vdupq_n_f64(0.0);
        std::size_t l = 0;
        for (; l < d2; l += 2) {
            const float64x2_t da = vsubq_f64(vld1q_f64(ra + l), vld1q_f64(ca + l));
            const float64x2_t db = vsubq_f64(vld1q_f64(rb + l), vld1q_f64(cb + l));
            vaa = vfmaq_f64(vaa, da, da);
            vbb = vfmaq_f64(vbb, db, db);
            vab = vfmaq_f64(vab, da, db);
        }
        double paa = vaddvq_f64(vaa), pbb = vaddvq_f64(vbb), pab = vaddvq_f64(vab);
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

void pairwise_sqdist_yt_neon(const double* x, std::size_t n, const double* yt,
                             std::size_t m, std::size_t d, double* out) {
    const std::size_t m2 = m - m % 2;
    for (std::size_t i = 0; i < n; ++i) {
        double* row = out + i * m;
        for (std::size_t j = 0; j < m; ++j) row[j] = 0.0;
        const double* xi = x + i * d;
        for (std::size_t l = 0; l < d; ++l) {
            const float64x2_t xv = vdupq_n_f64(xi[l]);
            const double* yl = yt + l * m;
            std::size_t j = 0;
            for (; j < m2; j += 2) {
                const float64x2_t diff = vsubq_f64(xv, vld1q_f64(yl + j));
                vst1q_f64(row + j, vfmaq_f64(vld1q_f64(row + j), diff, diff));
            }
            for (; j < m; ++j) {
                const double diff = xi[l] - yl[j];
                row[j] += diff * diff;
            }
        }
    }
}

}  // namespace

void fill_neon(Kernels& k) {
    k.sqdist_to_rows = sqdist_to_rows_neon;
    k.weighted_sum_rows = weighted_sum_rows_neon;
    k.weighted_center_moments = weighted_center_moments_neon;
    k.pairwise_sqdist_yt = pairwise_sqdist_yt_neon;
}

}  // namespace blendscore::simd
