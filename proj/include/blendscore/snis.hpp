#pragma once

#include <cstdint>
#include <optional>

#include "blendscore/diffusion.hpp"
#include "blendscore/linalg.hpp"

namespace blendscore {

// Fixed reference set: particles x0^i with optional clean scores s0(x0^i)
// and optional log-likelihoods log L(x0^i). Immutable once built; estimators
// share it across threads freely.
struct ReferenceBank {
    Matrix points;                      // N_ref x d
    std::optional<Matrix> scores;       // N_ref x d
    std::optional<Vec> log_likelihoods; // N_ref

    std::size_t size() const { return points.rows(); }
    std::size_t dim() const { return points.cols(); }
    void validate() const;
};

struct WeightSet {
    Vec w;                 // normalized, sum to 1
    double log_normalizer; // log sum of unnormalized weights
    double ess;            // 1 / sum w_i^2
};

enum class WeightMode { Prior, Posterior };

// Max-shifted log-sum-exp normalization of raw log-weights. The shift makes
// the result invariant to adding a common constant; pairwise summation
// keeps the normalizer independent of threading.
WeightSet snis_normalize(Vec log_weights);

// Normalized transition weights w~_i proportional to p_{t|0}(y | x0^i),
// computed with a max-shifted log-sum-exp and a pairwise-sum normalizer.
WeightSet prior_weights(const ReferenceBank& bank, const AffineKernel& kernel,
                        std::span<const double> y, double t);

// Likelihood-tilted weights alpha_i proportional to
// p_{t|0}(y | x0^i) * L(x0^i). Requires bank.log_likelihoods.
WeightSet posterior_weights(const ReferenceBank& bank, const AffineKernel& kernel,
                            std::span<const double> y, double t);

double ess(const WeightSet& weights);

// sum_i w~_i values_i
Vec snis_mean(const WeightSet& weights, const Matrix& values);

// SNIS plug-in second moments of two contribution sets a, b (N_ref x d):
// with da_i = a_i - sum w~ a, db_i analogous,
//   sigma_c2 = sum w~_i^2 ||da_i||^2 / (1 - sum w~_i^2)   (first argument)
//   sigma_t2 = sum w~_i^2 ||db_i||^2 / (1 - sum w~_i^2)
//   cov      = sum w~_i^2 <da_i, db_i> / (1 - sum w~_i^2)
// cov is the raw (unnormalized) covariance; the correlation form divides by
// sigma_t * sigma_c. Throws on degenerate weights (sum w~_i^2 == 1).
struct PluginMoments {
    double sigma_c2;
    double sigma_t2;
    double cov;
};
PluginMoments plugin_moments(const WeightSet& weights, const Matrix& a, const Matrix& b);

// Coordinate-wise median across batch estimates. Even counts use the
// midpoint of the two central order statistics.
Vec median_of_means(const std::vector<Vec>& batch_estimates);

// Partition the bank into n_batches contiguous blocks after one seeded
// shuffle; deterministic for a fixed (seed, n_batches).
std::vector<ReferenceBank> split_bank(const ReferenceBank& bank, std::size_t n_batches,
                                      std::uint64_t seed);

}  // namespace blendscore
