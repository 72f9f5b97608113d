#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "blendscore/diffusion.hpp"
#include "blendscore/linalg.hpp"
#include "blendscore/rng.hpp"

namespace blendscore {

// SPD covariance with a precomputed factor; diagonal and dense forms share
// one interface since every density/score call needs solves.
class Covariance {
public:
    enum class Kind { Diagonal, Dense };

    static Covariance diagonal(Vec variances);
    static Covariance dense(Matrix m);  // throws if not SPD
    static Covariance isotropic(std::size_t dim, double variance);

    Kind kind() const { return kind_; }
    std::size_t dim() const { return dim_; }

    double log_det() const;
    Vec solve(std::span<const double> v) const;  // Sigma^{-1} v
    double mahalanobis(std::span<const double> x, std::span<const double> mean) const;
    Vec apply_sqrt(std::span<const double> z) const;  // L z with L L^T = Sigma
    Matrix to_dense() const;

    // a * Sigma + b * I, used for the OU-diffused mixture law.
    Covariance affine_isotropic(double a, double b) const;

    const Vec& diag_variances() const { return diag_; }

private:
    Covariance() = default;
    Kind kind_ = Kind::Diagonal;
    std::size_t dim_ = 0;
    Vec diag_;      // Diagonal only
    Matrix dense_;  // Dense only
    Matrix chol_;   // Dense only, lower factor
};

struct GaussianComponent {
    Vec mean;
    Covariance cov;
};

class GaussianMixture {
public:
    GaussianMixture(Vec weights, std::vector<GaussianComponent> components);

    std::size_t dim() const { return dim_; }
    std::size_t n_components() const { return components_.size(); }
    const Vec& weights() const { return weights_; }
    const std::vector<GaussianComponent>& components() const { return components_; }

    double log_density(std::span<const double> x) const;
    Vec score(std::span<const double> x) const;
    Matrix sample(std::size_t n, Rng& rng) const;

    // Law of X_t under the OU forward process started from this mixture:
    // means e^{-t} mu_k, covariances e^{-2t} Sigma_k + (1-e^{-2t}) I.
    GaussianMixture diffused(const AffineKernel& kernel, double t) const;

private:
    std::size_t dim_;
    Vec weights_;
    std::vector<GaussianComponent> components_;
    Vec log_weights_;
};

struct LinearGaussianLikelihood {
    Matrix a;     // m x d forward operator
    double sigma; // observation noise std, > 0
    Vec y_obs;    // length m

    void validate() const;
    double log_likelihood(std::span<const double> x) const;  // constant included
    Vec grad_log_likelihood(std::span<const double> x) const;  // A^T (y - Ax) / sigma^2
};

// Exact conjugate GMM posterior for a linear-Gaussian likelihood: component
// moments by the normal equations, weights reweighted by per-component
// marginal evidence in log space.
GaussianMixture conjugate_posterior(const GaussianMixture& prior,
                                    const LinearGaussianLikelihood& lik);

// prior score + A^T (y - Ax) / sigma^2
Vec posterior_score_exact(const GaussianMixture& prior,
                          const LinearGaussianLikelihood& lik,
                          std::span<const double> x);

struct SpectralGmmConfig {
    std::size_t dim = 3;
    std::size_t n_components = 64;
    double radius = 2.0;        // means drawn uniformly on this sphere
    double eigen_decay = 2.0;   // lambda_i proportional to i^-decay
    double cov_scale = 1.0;     // largest eigenvalue
    std::uint64_t seed = 0;
};

GaussianMixture spectral_gmm(const SpectralGmmConfig& config);

// Helix-manifold mixture: component means along a 3D helix embedded in the
// first three ambient coordinates, shared diagonal covariance with the same
// spectral decay as spectral_gmm. All values here are preset configuration.
struct HelixGmmConfig {
    std::size_t dim = 9;
    std::size_t n_components = 64;
    double radius = 2.0;   // helix radius
    double turns = 2.5;    // total number of turns
    double height = 4.0;   // vertical span of the helix axis, centered at 0
    double eigen_decay = 2.0;
    double cov_scale = 0.05;
};

GaussianMixture helix_gmm(const HelixGmmConfig& config);

// Monte Carlo estimate of sqrt(E_{p0} ||A x||^2); converts relative noise
// levels sigma_rel into absolute sigma.
double signal_scale(const GaussianMixture& prior, const Matrix& a,
                    std::size_t n_mc, Rng& rng);

// Diagonal operator A = diag(1, 1/2, ..., 1/d) used by the sweep experiments.
Matrix inverse_index_operator(std::size_t dim);

// JSON round trip for mixture presets (weights, means, covariance spec).
std::string mixture_to_json(const GaussianMixture& gmm);
GaussianMixture mixture_from_json(const std::string& text);

}  // namespace blendscore
