#include "blendscore/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "blendscore/simd_ops.hpp"

namespace blendscore {

KernelSpec KernelSpec::rbf(Vec bw) {
    KernelSpec k;
    k.family = Family::Rbf;
    k.bandwidths = std::move(bw);
    k.validate();
    return k;
}

KernelSpec KernelSpec::imq(double c, double beta) {
    KernelSpec k;
    k.family = Family::Imq;
    k.imq_c = c;
    k.imq_beta = beta;
    k.validate();
    return k;
}

void KernelSpec::validate() const {
    if (family == Family::Rbf) {
        if (bandwidths.empty()) throw std::invalid_argument("KernelSpec: empty bandwidth list");
        for (double s : bandwidths)
            if (!(s > 0.0)) throw std::invalid_argument("KernelSpec: bandwidths must be positive");
    } else {
        if (!(imq_c > 0.0)) throw std::invalid_argument("KernelSpec: IMQ c must be positive");
        if (!(imq_beta < 0.0))
            throw std::invalid_argument("KernelSpec: IMQ beta must be negative");
    }
}

namespace {

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

// Per-bandwidth sum over all (i, j) of k(x_i, y_j): rows processed in
// blocks, per-row sums sequential, row totals pairwise-reduced.
Vec kernel_double_sums(const Matrix& x, const Matrix& y, const KernelSpec& kspec) {
    const std::size_t n = x.rows();
    const std::size_t m = y.rows();
    const std::size_t d = x.cols();
    const Matrix yt = transpose(y);
    const std::size_t n_k = kspec.family == KernelSpec::Family::Rbf
                                ? kspec.bandwidths.size()
                                : 1;

    std::vector<Vec> row_totals(n_k, Vec(n, 0.0));
    constexpr std::size_t kBlock = 256;
    Matrix dist(std::min(kBlock, n), m);
    for (std::size_t lo = 0; lo < n; lo += kBlock) {
        const std::size_t hi = std::min(lo + kBlock, n);
        simd::kernels().pairwise_sqdist_yt(x.data() + lo * d, hi - lo, yt.data(), m, d,
                                           dist.data());
        for (std::size_t i = lo; i < hi; ++i) {
            const auto r2 = dist.row(i - lo);
            if (kspec.family == KernelSpec::Family::Rbf) {
                for (std::size_t s = 0; s < n_k; ++s) {
                    const double inv = 1.0 / (2.0 * kspec.bandwidths[s] * kspec.bandwidths[s]);
                    double acc = 0.0;
                    for (std::size_t j = 0; j < m; ++j) acc += std::exp(-r2[j] * inv);
                    row_totals[s][i] = acc;
                }
            } else {
                const double c2 = kspec.imq_c * kspec.imq_c;
                double acc = 0.0;
                for (std::size_t j = 0; j < m; ++j)
                    acc += std::pow(c2 + r2[j], kspec.imq_beta);
                row_totals[0][i] = acc;
            }
        }
    }
    Vec out(n_k);
    for (std::size_t s = 0; s < n_k; ++s) out[s] = pairwise_sum(row_totals[s]);
    return out;
}

}  // namespace

double mmd2(const Matrix& x, const Matrix& y, const KernelSpec& kspec) {
    kspec.validate();
    if (x.rows() < 1 || y.rows() < 1) throw std::invalid_argument("mmd2: empty sample set");
    check_dim(y.cols(), x.cols(), "mmd2 dimensions");
    const double n = static_cast<double>(x.rows());
    const double m = static_cast<double>(y.rows());
    const Vec sxx = kernel_double_sums(x, x, kspec);
    const Vec syy = kernel_double_sums(y, y, kspec);
    const Vec sxy = kernel_double_sums(x, y, kspec);
    double acc = 0.0;
    for (std::size_t s = 0; s < sxx.size(); ++s)
        acc += sxx[s] / (n * n) + syy[s] / (m * m) - 2.0 * sxy[s] / (n * m);
    return acc / static_cast<double>(sxx.size());
}

Vec median_heuristic_bandwidths(const Matrix& points, std::size_t subsample,
                                const Vec& multipliers, Rng& rng) {
    const std::size_t n = points.rows();
    const std::size_t take = std::min(subsample, n);
    if (take < 2) throw std::invalid_argument("median_heuristic_bandwidths: need >= 2 points");

    // Sample without replacement via partial Fisher-Yates on indices.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + rng.next_u64() % (n - i);
        std::swap(idx[i], idx[j]);
    }

    Vec dists;
    dists.reserve(take * (take - 1) / 2);
    const std::size_t d = points.cols();
    for (std::size_t a = 0; a < take; ++a) {
        const auto ra = points.row(idx[a]);
        for (std::size_t b = a + 1; b < take; ++b) {
            const auto rb = points.row(idx[b]);
            double sq = 0.0;
            for (std::size_t l = 0; l < d; ++l) {
                const double diff = ra[l] - rb[l];
                sq += diff * diff;
            }
            dists.push_back(std::sqrt(sq));
        }
    }
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2),
                     dists.end());
    const double median = dists[dists.size() / 2];

    Vec out;
    for (double mult : multipliers) out.push_back(std::max(mult * median, 1e-12));
    return out;
}

KernelDerivatives kernel_derivatives(const KernelSpec& kspec, std::size_t bandwidth_index,
                                     std::span<const double> x, std::span<const double> xp) {
    const std::size_t d = x.size();
    double r2 = 0.0;
    Vec diff(d);
    for (std::size_t l = 0; l < d; ++l) {
        diff[l] = x[l] - xp[l];
        r2 += diff[l] * diff[l];
    }
    KernelDerivatives out;
    out.grad_x.resize(d);
    if (kspec.family == KernelSpec::Family::Imq) {
        const double c2 = kspec.imq_c * kspec.imq_c;
        const double beta = kspec.imq_beta;
        const double base = c2 + r2;
        out.k = std::pow(base, beta);
        const double g = 2.0 * beta * std::pow(base, beta - 1.0);
        for (std::size_t l = 0; l < d; ++l) out.grad_x[l] = g * diff[l];
        out.trace_hessian = -2.0 * beta * std::pow(base, beta - 2.0) *
                            (static_cast<double>(d) * base + 2.0 * (beta - 1.0) * r2);
    } else {
        const double sigma = kspec.bandwidths.at(bandwidth_index);
        const double s2 = sigma * sigma;
        out.k = std::exp(-r2 / (2.0 * s2));
        for (std::size_t l = 0; l < d; ++l) out.grad_x[l] = -out.k * diff[l] / s2;
        out.trace_hessian = out.k * (static_cast<double>(d) / s2 - r2 / (s2 * s2));
    }
    return out;
}

namespace {

// Stein kernel u_s(x, x') given precomputed scores; both families have
// grad_x k = g(r^2) (x - x') and grad_{x'} k = -grad_x k.
double stein_u(const KernelSpec& kspec, std::size_t bw, std::span<const double> x,
               std::span<const double> xp, std::span<const double> sx,
               std::span<const double> sxp) {
    const std::size_t d = x.size();
    double r2 = 0.0, ss = 0.0, sdiff = 0.0;
    for (std::size_t l = 0; l < d; ++l) {
        const double diff = x[l] - xp[l];
        r2 += diff * diff;
        ss += sx[l] * sxp[l];
        sdiff += (sxp[l] - sx[l]) * diff;
    }
    double k, g, tr;
    if (kspec.family == KernelSpec::Family::Imq) {
        const double base = kspec.imq_c * kspec.imq_c + r2;
        const double beta = kspec.imq_beta;
        k = std::pow(base, beta);
        g = 2.0 * beta * std::pow(base, beta - 1.0);
        tr = -2.0 * beta * std::pow(base, beta - 2.0) *
             (static_cast<double>(d) * base + 2.0 * (beta - 1.0) * r2);
    } else {
        const double s2 = kspec.bandwidths[bw] * kspec.bandwidths[bw];
        k = std::exp(-r2 / (2.0 * s2));
        g = -k / s2;
        tr = k * (static_cast<double>(d) / s2 - r2 / (s2 * s2));
    }
    return k * ss + g * sdiff + tr;
}

}  // namespace

double ksd2(const Matrix& x, const PointScoreFn& score_fn, const KernelSpec& kspec,
            bool u_statistic) {
    kspec.validate();
    const std::size_t n = x.rows();
    if (n < 1) throw std::invalid_argument("ksd2: empty sample set");
    if (u_statistic && n < 2) throw std::invalid_argument("ksd2: U-statistic needs n >= 2");

    Matrix scores(n, x.cols());
    for (std::size_t i = 0; i < n; ++i) scores.set_row(i, score_fn(x.row(i)));

    const std::size_t n_bw =
        kspec.family == KernelSpec::Family::Rbf ? kspec.bandwidths.size() : 1;
    double acc_all = 0.0;
    for (std::size_t s = 0; s < n_bw; ++s) {
        Vec row_totals(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (u_statistic && i == j) continue;
                acc += stein_u(kspec, s, x.row(i), x.row(j), scores.row(i), scores.row(j));
            }
            row_totals[i] = acc;
        }
        const double total = pairwise_sum(row_totals);
        const double pairs = u_statistic ? static_cast<double>(n) * (n - 1)
                                         : static_cast<double>(n) * n;
        acc_all += total / pairs;
    }
    return acc_all / static_cast<double>(n_bw);
}

double score_rmse(const EstimateFn& estimator, const ExactScoreFn& exact,
                  const MarginalSamplerFn& draw_pt, const TimeGrid& grid,
                  std::size_t n_eval, Rng& rng, const TimeFilterOptions& filter) {
    if (n_eval < 1) throw std::invalid_argument("score_rmse: need n_eval >= 1");
    double total = 0.0;
    std::size_t kept = 0;
    for (double t : grid.knots) {
        const Matrix pts = draw_pt(t, n_eval, rng);
        double sq = 0.0;
        double ess_sum = 0.0;
        for (std::size_t q = 0; q < n_eval; ++q) {
            const ScoreEstimate est = estimator(pts.row(q), t);
            const Vec s = exact(pts.row(q), t);
            for (std::size_t l = 0; l < s.size(); ++l) {
                const double e = est.score[l] - s[l];
                sq += e * e;
            }
            ess_sum += est.ess;
        }
        if (ess_sum / static_cast<double>(n_eval) < filter.ess_threshold) continue;
        total += sq / static_cast<double>(n_eval);
        ++kept;
    }
    if (kept == 0) throw std::runtime_error("score_rmse: no valid time points after ESS filter");
    return std::sqrt(total / static_cast<double>(kept));
}

std::vector<CorrelationPoint> error_correlation_curve(
    const BankFactoryFn& bank_factory, const AffineKernel& kernel,
    const GaussianMixture& target, const TimeGrid& grid, std::size_t n_queries,
    std::size_t n_batches, std::uint64_t seed, const TimeFilterOptions& filter) {
    if (n_queries < 1 || n_batches < 1)
        throw std::invalid_argument("error_correlation_curve: need queries and batches");

    std::vector<ReferenceBank> banks;
    banks.reserve(n_batches);
    for (std::size_t b = 0; b < n_batches; ++b) banks.push_back(bank_factory(b));

    std::vector<CorrelationPoint> out;
    out.reserve(grid.knots.size());
    const std::size_t d = target.dim();

    for (std::size_t ti = 0; ti < grid.knots.size(); ++ti) {
        const double t = grid.knots[ti];
        const GaussianMixture diffused = target.diffused(kernel, t);
        double num = 0.0, den_t = 0.0, den_c = 0.0, ess_sum = 0.0;
        for (std::size_t b = 0; b < n_batches; ++b) {
            Rng rng = substream(seed, {0xc0feu, ti, b});
            Vec z(d);
            for (std::size_t q = 0; q < n_queries; ++q) {
                const Matrix x0 = target.sample(1, rng);
                rng.fill_normal(z);
                const Vec y = kernel.forward_sample(x0.row(0), t, z);
                const Vec s_exact = diffused.score(y);
                const ScoreEstimate twd =
                    estimate_score(banks[b], kernel, y, t, EstimatorKind::Tweedie,
                                   WeightMode::Prior);
                const ScoreEstimate tsi =
                    estimate_score(banks[b], kernel, y, t, EstimatorKind::Tsi,
                                   WeightMode::Prior);
                for (std::size_t l = 0; l < d; ++l) {
                    const double et = twd.score[l] - s_exact[l];
                    const double ec = tsi.score[l] - s_exact[l];
                    num += et * ec;
                    den_t += et * et;
                    den_c += ec * ec;
                }
                ess_sum += twd.ess;
            }
        }
        const double mean_ess =
            ess_sum / static_cast<double>(n_batches * n_queries);
        CorrelationPoint point;
        point.t = t;
        point.mean_ess = mean_ess;
        point.kept = mean_ess >= filter.ess_threshold;
        point.rho = point.kept && den_t > 0.0 && den_c > 0.0
                        ? num / std::sqrt(den_t * den_c)
                        : std::numeric_limits<double>::quiet_NaN();
        out.push_back(point);
    }
    return out;
}

double rmse_alpha(const Matrix& samples, std::span<const double> alpha_star) {
    check_dim(alpha_star.size(), samples.cols(), "rmse_alpha");
    const std::size_t q = samples.cols();
    Vec mean(q, 0.0);
    for (std::size_t i = 0; i < samples.rows(); ++i) {
        const auto row = samples.row(i);
        for (std::size_t l = 0; l < q; ++l) mean[l] += row[l];
    }
    double sq = 0.0;
    for (std::size_t l = 0; l < q; ++l) {
        const double e = mean[l] / static_cast<double>(samples.rows()) - alpha_star[l];
        sq += e * e;
    }
    return std::sqrt(sq) / std::sqrt(static_cast<double>(q));
}

double forward_error(const ForwardFn& f, std::span<const double> alpha_bar,
                     std::span<const double> y_clean) {
    const double denom = std::sqrt(squared_norm(y_clean));
    if (!(denom > 0.0)) throw std::invalid_argument("forward_error: zero-norm clean observation");
    const Vec fa = f(alpha_bar);
    check_dim(fa.size(), y_clean.size(), "forward_error");
    double sq = 0.0;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        const double e = fa[l] - y_clean[l];
        sq += e * e;
    }
    return std::sqrt(sq) / denom;
}

double mmd_floor_ratio(const Matrix& generated, const Matrix& exact_a,
                       const Matrix& exact_b, const KernelSpec& kspec) {
    const double floor2 = mmd2(exact_a, exact_b, kspec);
    if (!(floor2 > 0.0)) throw std::runtime_error("mmd_floor_ratio: zero MMD floor");
    const double gen2 = std::max(mmd2(generated, exact_a, kspec), 0.0);
    return 0.5 * (std::log(gen2) - std::log(floor2));
}

}  // namespace blendscore
