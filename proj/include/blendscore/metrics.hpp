#pragma once

#include <functional>

#include "blendscore/estimators.hpp"
#include "blendscore/sampler.hpp"
#include "blendscore/targets.hpp"

namespace blendscore {

// MMD / KSD kernel family. RBF carries a multiscale bandwidth list (the
// metric averages over it); IMQ is (c^2 + r^2)^beta with beta < 0.
struct KernelSpec {
    enum class Family { Rbf, Imq };
    Family family = Family::Rbf;
    Vec bandwidths{1.0};
    double imq_c = 1.0;
    double imq_beta = -0.5;

    static KernelSpec rbf(Vec bw);
    static KernelSpec imq(double c = 1.0, double beta = -0.5);
    void validate() const;
};

// Biased V-statistic squared MMD; multiscale RBF averages over bandwidths.
// mmd2(X, X) is exactly zero by construction.
double mmd2(const Matrix& x, const Matrix& y, const KernelSpec& kspec);

// Median pairwise distance on a subsample, scaled by each multiplier; feeds
// the RBF bandwidth list.
Vec median_heuristic_bandwidths(const Matrix& points, std::size_t subsample,
                                const Vec& multipliers, Rng& rng);

using PointScoreFn = std::function<Vec(std::span<const double>)>;

// Squared kernel Stein discrepancy with closed-form kernel derivatives
// (V-statistic by default; U-statistic drops the diagonal).
double ksd2(const Matrix& x, const PointScoreFn& score_fn, const KernelSpec& kspec,
            bool u_statistic = false);

// Closed-form kernel value, x-gradient and Hessian trace for one bandwidth
// entry; exposed so tests can pin them against finite differences.
struct KernelDerivatives {
    double k;
    Vec grad_x;
    double trace_hessian;  // tr(grad_x grad_x' k)
};
KernelDerivatives kernel_derivatives(const KernelSpec& kspec, std::size_t bandwidth_index,
                                     std::span<const double> x, std::span<const double> xp);

using EstimateFn = std::function<ScoreEstimate(std::span<const double>, double)>;
using ExactScoreFn = std::function<Vec(std::span<const double>, double)>;
// Draw n points distributed as p_t (forward diffusion of fresh target draws).
using MarginalSamplerFn = std::function<Matrix(double, std::size_t, Rng&)>;

struct TimeFilterOptions {
    // Knots whose mean ESS over the evaluation queries falls below this are
    // dropped; 0 keeps everything (exact estimators have no ESS).
    double ess_threshold = 0.0;
};

// Time-averaged score RMSE over the kept knots of the grid:
// sqrt(mean_t mean_y ||shat - s||^2). Throws when every knot is filtered.
double score_rmse(const EstimateFn& estimator, const ExactScoreFn& exact,
                  const MarginalSamplerFn& draw_pt, const TimeGrid& grid,
                  std::size_t n_eval, Rng& rng, const TimeFilterOptions& filter = {});

using BankFactoryFn = std::function<ReferenceBank(std::size_t)>;

struct CorrelationPoint {
    double t;
    double rho;       // NaN when dropped
    double mean_ess;
    bool kept;
};

// rho(t) = E<eps_T, eps_C> / sqrt(E||eps_T||^2 E||eps_C||^2) with errors
// measured against the exact diffused score, estimated over queries drawn
// from p_t and independent banks from the factory.
std::vector<CorrelationPoint> error_correlation_curve(
    const BankFactoryFn& bank_factory, const AffineKernel& kernel,
    const GaussianMixture& target, const TimeGrid& grid, std::size_t n_queries,
    std::size_t n_batches, std::uint64_t seed, const TimeFilterOptions& filter = {});

// ||mean(samples) - alpha_star||_2 / sqrt(q)
double rmse_alpha(const Matrix& samples, std::span<const double> alpha_star);

using ForwardFn = std::function<Vec(std::span<const double>)>;

// ||F(alpha_bar) - y_clean|| / ||y_clean||
double forward_error(const ForwardFn& f, std::span<const double> alpha_bar,
                     std::span<const double> y_clean);

// log( MMD(generated, exact_a) / MMD(exact_a, exact_b) ); the denominator is
// the finite-sample metric floor. Throws when the floor is zero.
double mmd_floor_ratio(const Matrix& generated, const Matrix& exact_a,
                       const Matrix& exact_b, const KernelSpec& kspec);

}  // namespace blendscore
