#pragma once

#include "blendscore/simd_ops.hpp"

namespace blendscore::simd {

void fill_scalar(Kernels& k);

#if defined(BLENDSCORE_HAVE_AVX2_TU)
void fill_avx2(Kernels& k);
bool cpu_has_avx2();
#endif

#if defined(BLENDSCORE_HAVE_NEON_TU)
void fill_neon(Kernels& k);
#endif

}  // namespace blendscore::simd
