#include "simd_kernels.hpp"

namespace blendscore::simd {
namespace {

void sqdist_to_rows_scalar(const double* x, std::size_t n, std::size_t d,
                           const double* y, double scale, double* out) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x + i * d;
        double acc = 0.0;
        for (std::size_t l = 0; l < d; ++l) {
            const double diff = y[l] - scale * row[l];
            acc += diff * diff;
        }
        out[i] = acc;
    }
}

void weighted_sum_rows_scalar(const double* w, const double* x,
                              std::size_t n, std::size_t d, double* out) {
    for (std::size_t l = 0; l < d; ++l) out[l] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double wi = w[i];
        const double* row = x + i * d;
        for (std::size_t l = 0; l < d; ++l) out[l] += wi * row[l];
    }
}

void weighted_center_moments_scalar(const double* w, const double* a, const double* b,
                                    std::size_t n, std::size_t d,
                                    const double* ca, const double* cb,
                                    double* maa, double* mbb, double* mab) {
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w2 = w[i] * w[i];
        const double* ra = a + i * d;
        const double* rb = b + i * d;
        double paa = 0.0, pbb = 0.0, pab = 0.0;
        for (std::size_t l = 0; l < d; ++l) {
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

void pairwise_sqdist_yt_scalar(const double* x, std::size_t n, const double* yt,
                               std::size_t m, std::size_t d, double* out) {
    for (std::size_t i = 0; i < n; ++i) {
        double* row = out + i * m;
        for (std::size_t j = 0; j < m; ++j) row[j] = 0.0;
        const double* xi = x + i * d;
        for (std::size_t l = 0; l < d; ++l) {
            const double xv = xi[l];
            const double* yl = yt + l * m;
            for (std::size_t j = 0; j < m; ++j) {
                const double diff = xv - yl[j];
                row[j] += diff * diff;
            }
        }
    }
}

}  // namespace

void fill_scalar(Kernels& k) {
    k.sqdist_to_rows = sqdist_to_rows_scalar;
    k.weighted_sum_rows = weighted_sum_rows_scalar;
    k.weighted_center_moments = weighted_center_moments_scalar;
    k.pairwise_sqdist_yt = pairwise_sqdist_yt_scalar;
}

}  // namespace blendscore::simd
