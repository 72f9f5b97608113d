#pragma once

#include <cstddef>

namespace blendscore::simd {

// Hot inner loops over the reference bank and metric point sets, provided as
// scalar reference kernels plus vectorized variants selected at runtime.
// Accumulation over rows is sequential in every backend, and lane-parallel
// work never reorders per-coordinate sums, so backends agree to rounding
// noise; tests pin the scalar path as the reference.
struct Kernels {
    // out[i] = sum_l (y[l] - scale * x[i*d + l])^2, i = 0..n-1
    void (*sqdist_to_rows)(const double* x, std::size_t n, std::size_t d,
                           const double* y, double scale, double* out);

    // out[l] = sum_i w[i] * x[i*d + l]
    void (*weighted_sum_rows)(const double* w, const double* x,
                              std::size_t n, std::size_t d, double* out);

    // Squared-weight centered second moments of two row sets against given
    // centers:
    //   maa = sum_i w[i]^2 * ||a_i - ca||^2
    //   mbb = sum_i w[i]^2 * ||b_i - cb||^2
    //   mab = sum_i w[i]^2 * <a_i - ca, b_i - cb>
    void (*weighted_center_moments)(const double* w, const double* a, const double* b,
                                    std::size_t n, std::size_t d,
                                    const double* ca, const double* cb,
                                    double* maa, double* mbb, double* mab);

    // out[i*m + j] = sum_l (x[i*d + l] - yt[l*m + j])^2 for a block of n rows
    // of x against all m columns of the transposed set yt (d x m).
    void (*pairwise_sqdist_yt)(const double* x, std::size_t n, const double* yt,
                               std::size_t m, std::size_t d, double* out);
};

// Kernel table for the backend picked at startup. Set BLENDSCORE_SIMD to
// "scalar", "avx2" or "neon" to override auto-detection.
const Kernels& kernels();

// Always the scalar reference implementation (equivalence tests).
const Kernels& scalar_kernels();

const char* backend_name();

}  // namespace blendscore::simd
