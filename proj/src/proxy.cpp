#include "blendscore/proxy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "blendscore/parallel.hpp"
#include "blendscore/simd_ops.hpp"

namespace blendscore {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

struct NeighborTable {
    std::vector<std::vector<std::size_t>> indices;  // per anchor, ascending distance
    std::vector<Vec> sq_dists;                      // matching squared distances
    double max_sq_dist = 0.0;                       // over all pairs (diameter^2)
};

NeighborTable brute_force_knn(const Matrix& points, std::size_t k, unsigned n_threads) {
    const std::size_t n = points.rows();
    const std::size_t d = points.cols();
    const Matrix pt = transpose(points);

    NeighborTable table;
    table.indices.resize(n);
    table.sq_dists.resize(n);

    constexpr std::size_t kBlock = 128;
    std::vector<double> block_max((n + kBlock - 1) / kBlock, 0.0);
    const std::size_t n_blocks = block_max.size();

    parallel_for(n_blocks, [&](std::size_t blk) {
        const std::size_t lo = blk * kBlock;
        const std::size_t hi = std::min(lo + kBlock, n);
        Matrix dist(hi - lo, n);
        simd::kernels().pairwise_sqdist_yt(points.data() + lo * d, hi - lo, pt.data(), n, d,
                                           dist.data());
        std::vector<std::pair<double, std::size_t>> cand(n);
        double local_max = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            const auto row = dist.row(i - lo);
            for (std::size_t j = 0; j < n; ++j) {
                cand[j] = {row[j], j};
                local_max = std::max(local_max, row[j]);
            }
            // Self lands first (distance 0, smallest index tie-break wins is
            // not guaranteed against exact duplicates, so order by index too).
            std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k + 1),
                              cand.end());
            auto& idx = table.indices[i];
            auto& sq = table.sq_dists[i];
            idx.reserve(k);
            sq.reserve(k);
            for (const auto& [dij, j] : cand) {
                if (j == i) continue;
                idx.push_back(j);
                sq.push_back(dij);
                if (idx.size() == k) break;
            }
        }
        block_max[blk] = local_max;
    }, n_threads);

    for (double v : block_max) table.max_sq_dist = std::max(table.max_sq_dist, v);
    return table;
}

}  // namespace

std::vector<std::vector<std::size_t>> knn_indices(const Matrix& points, std::size_t k,
                                                  unsigned n_threads) {
    if (k < 1 || k >= points.rows())
        throw std::invalid_argument("knn_indices: need 1 <= k < N");
    return brute_force_knn(points, k, n_threads).indices;
}

ProxyModel fit_proxy(const Matrix& points, const ProxyConfig& config) {
    const std::size_t n = points.rows();
    const std::size_t d = points.cols();
    if (config.k < 2 || config.k >= n)
        throw std::invalid_argument("fit_proxy: need 2 <= k < N_ref");
    const std::size_t rank =
        config.kind == ProxyKind::LowRankDiag
            ? std::min({config.rank, config.k, d})
            : 0;
    if (config.kind == ProxyKind::LowRankDiag && rank < 1)
        throw std::invalid_argument("fit_proxy: LR+D rank must be >= 1");

    const NeighborTable nbrs = brute_force_knn(points, config.k, config.n_threads);
    // Absolute variance floor tied to the data scale; keeps every stored
    // variance strictly positive even for duplicated neighborhoods.
    const double var_floor = 1e-12 * (1.0 + nbrs.max_sq_dist / static_cast<double>(d));
    const double h2_floor = 1e-24 * (1.0 + nbrs.max_sq_dist);

    ProxyModel model;
    model.kind_ = config.kind;
    model.k_ = config.k;
    model.rank_ = rank;
    model.anchors_ = points;
    model.mu_ = Matrix(n, d);
    if (config.kind == ProxyKind::Diag) {
        model.diag_ = Matrix(n, d);
    } else {
        model.factors_ = Matrix(n, d * rank);
        model.lambda_ = Matrix(n, rank);
        model.tail_ = Matrix(n, d);
    }

    parallel_for(n, [&](std::size_t i) {
        const auto& idx = nbrs.indices[i];
        const auto& sq = nbrs.sq_dists[i];
        const std::size_t k = idx.size();

        const double h2 = std::max(sq.back(), h2_floor);  // adaptive bandwidth
        Vec w(k);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            w[j] = std::exp(-sq[j] / (2.0 * h2));
            total += w[j];
        }
        for (double& v : w) v /= total;

        auto mu = model.mu_.row(i);
        for (std::size_t l = 0; l < d; ++l) mu[l] = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const auto xj = points.row(idx[j]);
            for (std::size_t l = 0; l < d; ++l) mu[l] += w[j] * xj[l];
        }

        if (config.kind == ProxyKind::Diag) {
            Vec v(d, 0.0);
            for (std::size_t j = 0; j < k; ++j) {
                const auto xj = points.row(idx[j]);
                for (std::size_t l = 0; l < d; ++l) {
                    const double c = xj[l] - mu[l];
                    v[l] += w[j] * c * c;
                }
            }
            double mean_v = 0.0;
            for (double x : v) mean_v += x;
            mean_v /= static_cast<double>(d);
            const double ridge = config.ridge_gamma * mean_v;
            auto out = model.diag_.row(i);
            for (std::size_t l = 0; l < d; ++l) out[l] = std::max(v[l] + ridge, var_floor);
        } else {
            // Weighted residual second moment, then its top-r eigenpairs.
            Matrix c(d, d);
            for (std::size_t j = 0; j < k; ++j) {
                const auto xj = points.row(idx[j]);
                for (std::size_t a = 0; a < d; ++a) {
                    const double ca = xj[a] - mu[a];
                    for (std::size_t b = a; b < d; ++b)
                        c(a, b) += w[j] * ca * (xj[b] - mu[b]);
                }
            }
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b < a; ++b) c(a, b) = c(b, a);

            const SymEig eig = sym_eig(c);
            auto lam = model.lambda_.row(i);
            auto fac = model.factors_.row(i);
            double lam_mean = 0.0;
            for (std::size_t m = 0; m < rank; ++m) {
                lam[m] = std::max(eig.values[m], 0.0);
                lam_mean += lam[m];
                for (std::size_t l = 0; l < d; ++l) fac[l * rank + m] = eig.vectors(l, m);
            }
            lam_mean /= static_cast<double>(rank);

            const double tail_floor =
                std::max(config.tail_floor_gamma * lam_mean, var_floor);
            auto tail = model.tail_.row(i);
            for (std::size_t l = 0; l < d; ++l) {
                double resid = c(l, l);
                for (std::size_t m = 0; m < rank; ++m)
                    resid -= fac[l * rank + m] * fac[l * rank + m] * lam[m];
                tail[l] = std::max(resid, tail_floor);
            }
        }
    }, config.n_threads);

    return model;
}

ProxyModel proxy_from_parts(ProxyKind kind, std::size_t k, Matrix anchors, Matrix mu,
                            Matrix diag, Matrix factors, Matrix lambda, Matrix tail) {
    ProxyModel model;
    model.kind_ = kind;
    model.k_ = k;
    model.rank_ = anchors.rows() > 0 && kind == ProxyKind::LowRankDiag
                      ? lambda.cols()
                      : 0;
    model.anchors_ = std::move(anchors);
    model.mu_ = std::move(mu);
    model.diag_ = std::move(diag);
    model.factors_ = std::move(factors);
    model.lambda_ = std::move(lambda);
    model.tail_ = std::move(tail);
    return model;
}

Vec ProxyModel::apply_inverse(std::size_t i, std::span<const double> v) const {
    const std::size_t d = dim();
    Vec out(d);
    if (kind_ == ProxyKind::Diag) {
        const auto dg = diag_.row(i);
        for (std::size_t l = 0; l < d; ++l) out[l] = v[l] / dg[l];
        return out;
    }
    // Woodbury in the symmetric square-root form, well defined for any
    // lambda >= 0:
    // (D + V L V^T)^{-1} = D^{-1} - D^{-1} V L^{1/2} (I + S)^{-1} L^{1/2} V^T D^{-1}
    // with S = L^{1/2} V^T D^{-1} V L^{1/2}.
    const auto tail = tail_.row(i);
    const auto fac = factors_.row(i);
    const auto lam = lambda_.row(i);
    const std::size_t r = rank_;

    Vec u(d);
    for (std::size_t l = 0; l < d; ++l) u[l] = v[l] / tail[l];

    Vec sqrt_lam(r);
    for (std::size_t m = 0; m < r; ++m) sqrt_lam[m] = std::sqrt(lam[m]);

    Matrix cap(r, r);
    for (std::size_t a = 0; a < r; ++a) {
        for (std::size_t b = a; b < r; ++b) {
            double s = 0.0;
            for (std::size_t l = 0; l < d; ++l)
                s += fac[l * r + a] * fac[l * r + b] / tail[l];
            cap(a, b) = cap(b, a) = sqrt_lam[a] * sqrt_lam[b] * s;
        }
        cap(a, a) += 1.0;
    }
    const Matrix cap_chol = cholesky(cap);

    Vec p(r, 0.0);
    for (std::size_t m = 0; m < r; ++m) {
        double s = 0.0;
        for (std::size_t l = 0; l < d; ++l) s += fac[l * r + m] * u[l];
        p[m] = sqrt_lam[m] * s;
    }
    const Vec cvec = cholesky_solve(cap_chol, p);
    for (std::size_t l = 0; l < d; ++l) {
        double s = 0.0;
        for (std::size_t m = 0; m < r; ++m) s += fac[l * r + m] * sqrt_lam[m] * cvec[m];
        out[l] = u[l] - s / tail[l];
    }
    return out;
}

double ProxyModel::log_det(std::size_t i) const {
    const std::size_t d = dim();
    if (kind_ == ProxyKind::Diag) {
        const auto dg = diag_.row(i);
        double s = 0.0;
        for (std::size_t l = 0; l < d; ++l) s += std::log(dg[l]);
        return s;
    }
    // log det(D + V L V^T) = log det(D) + log det(I + S), Sylvester form.
    const auto tail = tail_.row(i);
    const auto fac = factors_.row(i);
    const auto lam = lambda_.row(i);
    const std::size_t r = rank_;
    double s = 0.0;
    for (std::size_t l = 0; l < d; ++l) s += std::log(tail[l]);

    Vec sqrt_lam(r);
    for (std::size_t m = 0; m < r; ++m) sqrt_lam[m] = std::sqrt(lam[m]);
    Matrix cap(r, r);
    for (std::size_t a = 0; a < r; ++a) {
        for (std::size_t b = a; b < r; ++b) {
            double g = 0.0;
            for (std::size_t l = 0; l < d; ++l)
                g += fac[l * r + a] * fac[l * r + b] / tail[l];
            cap(a, b) = cap(b, a) = sqrt_lam[a] * sqrt_lam[b] * g;
        }
        cap(a, a) += 1.0;
    }
    return s + cholesky_log_det(cholesky(cap));
}

Vec ProxyModel::anchor_score(std::size_t i) const {
    if (i >= n_anchors()) throw std::out_of_range("ProxyModel::anchor_score index");
    const std::size_t d = dim();
    Vec delta(d);
    const auto mu = mu_.row(i);
    const auto x = anchors_.row(i);
    for (std::size_t l = 0; l < d; ++l) delta[l] = mu[l] - x[l];
    return apply_inverse(i, delta);
}

Vec ProxyModel::kmix_score(std::span<const double> x, std::size_t k_mix) const {
    const std::size_t n = n_anchors();
    const std::size_t d = dim();
    check_dim(x.size(), d, "kmix_score query");
    if (k_mix < 1 || k_mix > n)
        throw std::invalid_argument("kmix_score: need 1 <= k_mix <= N_ref");

    Vec dist(n);
    simd::kernels().sqdist_to_rows(anchors_.data(), n, d, x.data(), 1.0, dist.data());
    std::vector<std::pair<double, std::size_t>> cand(n);
    for (std::size_t j = 0; j < n; ++j) cand[j] = {dist[j], j};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k_mix),
                      cand.end());

    // Uniform proximity priors: the log pi_m term is a shared constant and
    // drops out of the normalized weights.
    Vec log_comp(k_mix);
    Vec delta(d);
    for (std::size_t m = 0; m < k_mix; ++m) {
        const std::size_t j = cand[m].second;
        const auto mu = mu_.row(j);
        for (std::size_t l = 0; l < d; ++l) delta[l] = x[l] - mu[l];
        const Vec solved = apply_inverse(j, delta);
        const double mahal = dot(delta, solved);
        log_comp[m] = -0.5 * mahal -
                      0.5 * (static_cast<double>(d) * kLog2Pi + log_det(j));
    }
    const double shift = *std::max_element(log_comp.begin(), log_comp.end());
    Vec w(k_mix);
    double total = 0.0;
    for (std::size_t m = 0; m < k_mix; ++m) {
        w[m] = std::exp(log_comp[m] - shift);
        total += w[m];
    }

    Vec score(d, 0.0);
    for (std::size_t m = 0; m < k_mix; ++m) {
        const double wm = w[m] / total;
        if (wm == 0.0) continue;
        const std::size_t j = cand[m].second;
        const auto mu = mu_.row(j);
        for (std::size_t l = 0; l < d; ++l) delta[l] = mu[l] - x[l];
        const Vec pull = apply_inverse(j, delta);
        for (std::size_t l = 0; l < d; ++l) score[l] += wm * pull[l];
    }
    return score;
}

ReferenceBank bank_with_proxy(const Matrix& points, const ProxyConfig& config) {
    const ProxyModel model = fit_proxy(points, config);
    const std::size_t n = points.rows();
    ReferenceBank bank;
    bank.points = points;
    bank.scores = Matrix(n, points.cols());
    parallel_for(n, [&](std::size_t i) {
        const Vec s = config.k_mix > 0 ? model.kmix_score(points.row(i), config.k_mix)
                                       : model.anchor_score(i);
        bank.scores->set_row(i, s);
    }, config.n_threads);
    return bank;
}

}  // namespace blendscore
