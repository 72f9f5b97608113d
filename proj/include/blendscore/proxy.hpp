#pragma once

#include "blendscore/linalg.hpp"
#include "blendscore/snis.hpp"

namespace blendscore {

enum class ProxyKind { Diag, LowRankDiag };

struct ProxyConfig {
    std::size_t k = 64;              // neighbors per anchor, 2 <= k < N_ref
    ProxyKind kind = ProxyKind::Diag;
    std::size_t rank = 8;            // LR+D subspace rank, clamped to min(k, d)
    double ridge_gamma = 1e-2;       // Diag ridge multiplier on the mean variance
    double tail_floor_gamma = 1e-3;  // LR+D tail floor vs mean retained eigenvalue
    std::size_t k_mix = 0;           // 0 = anchor scores; >0 = k-mix recompute
    unsigned n_threads = 0;          // 0 = hardware concurrency
};

// Per-anchor local Gaussian fit (weighted kNN mean + structured covariance).
// The anchor score Sigma_i^{-1}(mu_i - x0^i) substitutes for an unknown s0.
class ProxyModel {
public:
    std::size_t n_anchors() const { return anchors_.rows(); }
    std::size_t dim() const { return anchors_.cols(); }
    ProxyKind kind() const { return kind_; }
    std::size_t rank() const { return rank_; }
    std::size_t neighbor_count() const { return k_; }

    Vec anchor_score(std::size_t i) const;

    // Score of the Gaussian mixture assembled from the k_mix anchors nearest
    // to x, with uniform component priors and log-sum-exp weighting.
    Vec kmix_score(std::span<const double> x, std::size_t k_mix) const;

    const Matrix& anchors() const { return anchors_; }
    const Matrix& local_means() const { return mu_; }
    const Matrix& diag_variances() const { return diag_; }      // Diag: N x d
    const Matrix& lr_factors() const { return factors_; }       // LRD: N x (d*r)
    const Matrix& lr_eigenvalues() const { return lambda_; }    // LRD: N x r
    const Matrix& lr_tail() const { return tail_; }             // LRD: N x d

private:
    friend ProxyModel fit_proxy(const Matrix& points, const ProxyConfig& config);
    friend ProxyModel proxy_from_parts(ProxyKind kind, std::size_t k, Matrix anchors,
                                       Matrix mu, Matrix diag, Matrix factors,
                                       Matrix lambda, Matrix tail);

    // Sigma_i^{-1} v via elementwise division (Diag) or Woodbury (LRD).
    Vec apply_inverse(std::size_t i, std::span<const double> v) const;
    double log_det(std::size_t i) const;

    ProxyKind kind_ = ProxyKind::Diag;
    std::size_t k_ = 0;
    std::size_t rank_ = 0;
    Matrix anchors_;  // N x d
    Matrix mu_;       // N x d
    Matrix diag_;     // Diag: N x d final diagonal (variance + ridge)
    Matrix factors_;  // LRD: N x (d*r), row i holds V_i row-major (d x r)
    Matrix lambda_;   // LRD: N x r retained eigenvalues (>= 0)
    Matrix tail_;     // LRD: N x d diagonal tail
};

ProxyModel fit_proxy(const Matrix& points, const ProxyConfig& config);

// Rebuild a model from serialized parts (bank_io).
ProxyModel proxy_from_parts(ProxyKind kind, std::size_t k, Matrix anchors, Matrix mu,
                            Matrix diag, Matrix factors, Matrix lambda, Matrix tail);

// Fit a proxy on the points and populate the bank's score column with anchor
// scores (config.k_mix == 0) or k-mix recomputed scores.
ReferenceBank bank_with_proxy(const Matrix& points, const ProxyConfig& config);

// Exact brute-force k-nearest-neighbor indices (self excluded), row i sorted
// by ascending distance with index tie-breaking. Exposed for tests.
std::vector<std::vector<std::size_t>> knn_indices(const Matrix& points, std::size_t k,
                                                  unsigned n_threads = 0);

}  // namespace blendscore
