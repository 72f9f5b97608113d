#include "blendscore/simd_ops.hpp"

#include <cstdlib>
#include <cstring>

#include "simd_kernels.hpp"

namespace blendscore::simd {
namespace {

struct Dispatch {
    Kernels scalar{};
    Kernels active{};
    const char* name = "scalar";

    Dispatch() {
        fill_scalar(scalar);
        active = scalar;

        const char* env = std::getenv("BLENDSCORE_SIMD");
        const bool force_scalar = env && std::strcmp(env, "scalar") == 0;

#if defined(BLENDSCORE_HAVE_AVX2_TU)
        const bool want_avx2 = !env || std::strcmp(env, "avx2") == 0;
        if (!force_scalar && want_avx2 && cpu_has_avx2()) {
            fill_avx2(active);
            name = "avx2";
        }
#elif defined(BLENDSCORE_HAVE_NEON_TU)
        const bool want_neon = !env || std::strcmp(env, "neon") == 0;
        if (!force_scalar && want_neon) {
            fill_neon(active);
            name = "neon";
        }
#endif
    }
};

const Dispatch& dispatch() {
    static const Dispatch d;
    return d;
}

}  // namespace

const Kernels& kernels() { return dispatch().active; }
const Kernels& scalar_kernels() { return dispatch().scalar; }
const char* backend_name() { return dispatch().name; }

}  // namespace blendscore::simd
