#include "blendscore/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "blendscore/simd_ops.hpp"

namespace blendscore {

namespace {
constexpr double kMinTime = 1e-12;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}  // namespace

Matrix tweedie_contributions(const ReferenceBank& bank, const AffineKernel& kernel,
                             std::span<const double> y, double t) {
    bank.validate();
    check_dim(y.size(), bank.dim(), "tweedie_contributions query");
    if (!(t > 0.0)) throw std::invalid_argument("tweedie_contributions: t must be positive");
    const double f = kernel.phi(t);
    const double inv_var = 1.0 / kernel.noise_variance(t);
    Matrix out(bank.size(), bank.dim());
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const auto row = bank.points.row(i);
        for (std::size_t l = 0; l < bank.dim(); ++l)
            out(i, l) = -(y[l] - f * row[l]) * inv_var;
    }
    return out;
}

Matrix tsi_contributions(const ReferenceBank& bank, const AffineKernel& kernel, double t) {
    bank.validate();
    if (!bank.scores)
        throw std::invalid_argument("tsi_contributions: bank has no score column");
    const double pf = kernel.tsi_prefactor(t);
    Matrix out(bank.size(), bank.dim());
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const auto row = bank.scores->row(i);
        for (std::size_t l = 0; l < bank.dim(); ++l) out(i, l) = pf * row[l];
    }
    return out;
}

double lambda_star(double sigma_t2, double sigma_c2, double cov) {
    const double denom = sigma_t2 + sigma_c2 - 2.0 * cov;
    const double eps = 1e-12 * (sigma_t2 + sigma_c2 + 1.0);
    if (std::abs(denom) >= eps)
        return std::clamp((sigma_c2 - cov) / denom, 0.0, 1.0);
    const double total = sigma_t2 + sigma_c2;
    if (total > 0.0) return sigma_c2 / total;
    return 0.5;
}

double blended_objective(double lambda, double sigma_t2, double sigma_c2, double cov) {
    const double om = 1.0 - lambda;
    return lambda * lambda * sigma_t2 + om * om * sigma_c2 + 2.0 * lambda * om * cov;
}

ScoreEstimate estimate_score(const ReferenceBank& bank, const AffineKernel& kernel,
                             std::span<const double> y, double t, EstimatorKind kind,
                             WeightMode mode, const EstimatorOptions& options) {
    bank.validate();
    check_dim(y.size(), bank.dim(), "estimate_score query");
    if (!(t > kMinTime))
        throw std::invalid_argument("estimate_score: t below the degeneracy guard");
    const bool needs_scores = kind != EstimatorKind::Tweedie;
    if (needs_scores && !bank.scores)
        throw std::invalid_argument("estimate_score: estimator needs a score column");

    const WeightSet ws = mode == WeightMode::Prior ? prior_weights(bank, kernel, y, t)
                                                   : posterior_weights(bank, kernel, y, t);

    const std::size_t n = bank.size();
    const std::size_t d = bank.dim();
    const double f = kernel.phi(t);
    const double inv_var = 1.0 / kernel.noise_variance(t);
    const double pf = kernel.tsi_prefactor(t);

    // sum_i w~_i b_i collapses to a weighted mean of the particles.
    const Vec mean_x = snis_mean(ws, bank.points);
    Vec twd(d);
    for (std::size_t l = 0; l < d; ++l) twd[l] = -(y[l] - f * mean_x[l]) * inv_var;

    ScoreEstimate est;
    est.ess = ws.ess;
    est.ess_collapsed = ws.ess < options.ess_floor_fraction * static_cast<double>(n);
    est.sigma_t2 = kNaN;
    est.sigma_c2 = kNaN;
    est.cov = kNaN;

    Vec tsi;
    if (bank.scores) {
        const Vec mean_s = snis_mean(ws, *bank.scores);
        tsi.resize(d);
        for (std::size_t l = 0; l < d; ++l) tsi[l] = pf * mean_s[l];

        // Plug-in moments without materializing the contribution arrays:
        // db_i = (phi/var)(x_i - mean_x) and da_i = pf (s_i - mean_s), so the
        // raw centered moments of the bank columns rescale in closed form.
        const double denom = 1.0 - 1.0 / ws.ess;
        if (denom > 0.0) {
            double mxx = 0.0, mss = 0.0, mxs = 0.0;
            simd::kernels().weighted_center_moments(ws.w.data(), bank.points.data(),
                                                    bank.scores->data(), n, d, mean_x.data(),
                                                    mean_s.data(), &mxx, &mss, &mxs);
            const double bscale = f * inv_var;
            est.sigma_t2 = bscale * bscale * mxx / denom;
            est.sigma_c2 = pf * pf * mss / denom;
            est.cov = pf * bscale * mxs / denom;
        } else {
            // One-hot weights: no spread information, fall through the
            // lambda_star ladder to 0.5.
            est.sigma_t2 = 0.0;
            est.sigma_c2 = 0.0;
            est.cov = 0.0;
        }
    }

    switch (kind) {
        case EstimatorKind::Tweedie:
            est.lambda = 1.0;
            est.score = std::move(twd);
            break;
        case EstimatorKind::Tsi:
            est.lambda = 0.0;
            est.score = std::move(tsi);
            break;
        case EstimatorKind::Blend: {
            const double lam = lambda_star(est.sigma_t2, est.sigma_c2, est.cov);
            est.lambda = lam;
            est.score.resize(d);
            for (std::size_t l = 0; l < d; ++l)
                est.score[l] = lam * twd[l] + (1.0 - lam) * tsi[l];
            break;
        }
    }
    return est;
}

GaussianErrorPair gaussian_error_pair(const GaussianMixture& gaussian,
                                      const ReferenceBank& bank,
                                      const AffineKernel& kernel,
                                      std::span<const double> y, double t) {
    if (gaussian.n_components() != 1)
        throw std::invalid_argument("gaussian_error_pair: target must be a single Gaussian");
    if (kernel.variant() != KernelVariant::OU)
        throw std::invalid_argument("gaussian_error_pair: OU kernel required");
    const std::size_t d = gaussian.dim();
    check_dim(y.size(), d, "gaussian_error_pair query");

    const auto& comp = gaussian.components().front();
    const double f = kernel.phi(t);
    const double var = kernel.noise_variance(t);

    // Exact conditional mean E[X0 | X_t = y] for the Gaussian prior:
    // precision Sigma^{-1} + (phi^2/var) I, rhs Sigma^{-1} mu0 + (phi/var) y.
    Matrix precision = comp.cov.to_dense();
    {
        Matrix prior_chol = cholesky(precision);
        Matrix inv(d, d);
        Vec e(d, 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            e[j] = 1.0;
            const Vec col = cholesky_solve(prior_chol, e);
            for (std::size_t i = 0; i < d; ++i) inv(i, j) = col[i];
            e[j] = 0.0;
        }
        precision = std::move(inv);
    }
    Vec rhs = matvec(precision, comp.mean);
    for (std::size_t i = 0; i < d; ++i) {
        rhs[i] += (f / var) * y[i];
        precision(i, i) += f * f / var;
    }
    const Matrix prec_chol = cholesky(precision);
    const Vec cond_mean = cholesky_solve(prec_chol, rhs);

    const WeightSet ws = prior_weights(bank, kernel, y, t);
    const Vec snis_mu = snis_mean(ws, bank.points);
    Vec delta(d);
    for (std::size_t l = 0; l < d; ++l) delta[l] = snis_mu[l] - cond_mean[l];

    GaussianErrorPair out;
    const Vec pulled = comp.cov.solve(delta);
    const double pf = kernel.tsi_prefactor(t);
    out.eps_tsi.resize(d);
    out.eps_tweedie.resize(d);
    for (std::size_t l = 0; l < d; ++l) {
        out.eps_tsi[l] = -pf * pulled[l];
        out.eps_tweedie[l] = (f / var) * delta[l];
    }
    return out;
}

VarianceTimeFactors variance_time_factors(double t) {
    if (!(t > 0.0)) throw std::invalid_argument("variance_time_factors: t must be positive");
    const double em2t = std::exp(-2.0 * t);
    const double one_minus = -std::expm1(-2.0 * t);
    return VarianceTimeFactors{std::exp(2.0 * t), em2t / (one_minus * one_minus)};
}

}  // namespace blendscore
