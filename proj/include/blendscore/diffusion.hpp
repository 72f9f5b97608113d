#pragma once

#include <cstddef>
#include <vector>

#include "blendscore/linalg.hpp"

namespace blendscore {

enum class KernelVariant { OU, VP, VE };

// Piecewise-constant rate schedule: values[k] holds on
// [breakpoints[k], breakpoints[k+1]), the last value extends to infinity.
// Integrals are computed exactly per segment.
struct Schedule {
    std::vector<double> breakpoints;  // strictly increasing, breakpoints[0] == 0
    std::vector<double> values;       // strictly positive

    static Schedule constant(double value) { return Schedule{{0.0}, {value}}; }

    void validate() const;
    double integral(double t) const;          // int_0^t v(u) du
    double integral_squared(double t) const;  // int_0^t v(u)^2 du
};

// Closed-form transition quantities of an affine forward diffusion:
// p_{t|0}(y|x0) = N(y; phi(t) x0, sigma_t^2 I). All built-in variants are
// isotropic with zero mean offset, so Phi(t,0) and Gamma(t) reduce to scalar
// factors; the anisotropic case is out of scope.
class AffineKernel {
public:
    static AffineKernel ou(std::size_t dim);
    static AffineKernel vp(std::size_t dim, Schedule beta);
    static AffineKernel ve(std::size_t dim, Schedule g);

    KernelVariant variant() const { return variant_; }
    std::size_t dim() const { return dim_; }

    // Scalar factor of the fundamental matrix Phi(t,0). OU: e^{-t};
    // VP: alpha(t) = exp(-1/2 int beta); VE: 1.
    double phi(double t) const;

    // sigma_t^2, the scalar variance of Gamma(t). OU: 1 - e^{-2t};
    // VP: 1 - alpha(t)^2; VE: int_0^t g(u)^2 du.
    double noise_variance(double t) const;

    // Scalar factor of Phi(t,0)^{-T}, the TSI prefactor. OU: e^{t}.
    double tsi_prefactor(double t) const;

    // phi(t) x0 + sigma_t z
    Vec forward_sample(std::span<const double> x0, double t,
                       std::span<const double> noise) const;

    // Full Gaussian log-density log p_{t|0}(y|x0), normalization constant
    // included so weights stay comparable across t. Requires t > 0.
    double log_transition_density(std::span<const double> y,
                                  std::span<const double> x0, double t) const;

private:
    AffineKernel(KernelVariant v, std::size_t dim, Schedule sched)
        : variant_(v), dim_(dim), schedule_(std::move(sched)) {}

    KernelVariant variant_;
    std::size_t dim_;
    Schedule schedule_;  // beta for VP, g for VE; unused for OU
};

}  // namespace blendscore
