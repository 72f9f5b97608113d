#pragma once

#include "blendscore/snis.hpp"
#include "blendscore/targets.hpp"

namespace blendscore {

enum class EstimatorKind { Tweedie, Tsi, Blend };

// Score estimate plus the per-query diagnostics the blend is built from.
// lambda is the Tweedie weight: 1 = pure Tweedie, 0 = pure TSI. Moment
// fields are NaN when the inputs needed to compute them are absent.
struct ScoreEstimate {
    Vec score;
    double lambda = 1.0;
    double sigma_t2 = 0.0;  // Tweedie arm plug-in variance
    double sigma_c2 = 0.0;  // TSI arm plug-in variance
    double cov = 0.0;       // raw plug-in covariance of the two arms
    double ess = 0.0;
    bool ess_collapsed = false;
};

struct EstimatorOptions {
    // tau_ESS = ess_floor_fraction * N_ref; below it the estimate is flagged
    // (and metric pipelines drop the time point) but still returned.
    double ess_floor_fraction = 0.05;
};

// Per-particle Tweedie signals b_i = -(y - phi(t) x0^i) / sigma_t^2.
Matrix tweedie_contributions(const ReferenceBank& bank, const AffineKernel& kernel,
                             std::span<const double> y, double t);

// Per-particle TSI signals a_i = tsi_prefactor(t) * s0(x0^i).
Matrix tsi_contributions(const ReferenceBank& bank, const AffineKernel& kernel, double t);

// Variance-optimal Tweedie weight
//   lambda* = (sigma_c2 - cov) / (sigma_t2 + sigma_c2 - 2 cov)
// clamped to [0,1]; near-zero denominators fall back to
// sigma_c2 / (sigma_t2 + sigma_c2) with cov treated as 0, and 0.5 when both
// variances vanish. Total by construction.
double lambda_star(double sigma_t2, double sigma_c2, double cov);

// J(lambda) = lambda^2 sigma_t2 + (1-lambda)^2 sigma_c2
//             + 2 lambda (1-lambda) cov
double blended_objective(double lambda, double sigma_t2, double sigma_c2, double cov);

// Tweedie / TSI / blended score at (y, t). Posterior mode tilts the weights
// by the bank's log-likelihood column; for TSI/Blend the bank's score column
// must already hold the tilted scores s0 + grad log L (precomputed at bank
// construction, see bank builders in the harness).
ScoreEstimate estimate_score(const ReferenceBank& bank, const AffineKernel& kernel,
                             std::span<const double> y, double t, EstimatorKind kind,
                             WeightMode mode, const EstimatorOptions& options = {});

// Centered error pair of Prop.-style Gaussian anticorrelation checks:
// for a single-Gaussian target, eps_tsi = -e^t Sigma^{-1} Delta and
// eps_tweedie = e^{-t}/(1-e^{-2t}) Delta with Delta the deviation of the
// SNIS posterior mean from the exact conditional mean E[X0 | X_t = y].
// Test/diagnostic use only.
struct GaussianErrorPair {
    Vec eps_tsi;      // eps_C
    Vec eps_tweedie;  // eps_T
};
GaussianErrorPair gaussian_error_pair(const GaussianMixture& gaussian,
                                      const ReferenceBank& bank,
                                      const AffineKernel& kernel,
                                      std::span<const double> y, double t);

// N_ref-free variance time factors: (e^{2t}, e^{-2t}/(1-e^{-2t})^2). The two
// curves cross at t* = ln(2)/2 where both equal 2.
struct VarianceTimeFactors {
    double tsi;
    double tweedie;
};
VarianceTimeFactors variance_time_factors(double t);

}  // namespace blendscore
