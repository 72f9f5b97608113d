#include "blendscore/snis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "blendscore/rng.hpp"
#include "blendscore/simd_ops.hpp"

namespace blendscore {

void ReferenceBank::validate() const {
    if (size() < 1) throw std::invalid_argument("ReferenceBank: need at least one particle");
    if (scores && (scores->rows() != size() || scores->cols() != dim()))
        throw std::invalid_argument("ReferenceBank: score column shape mismatch");
    if (log_likelihoods && log_likelihoods->size() != size())
        throw std::invalid_argument("ReferenceBank: log-likelihood column length mismatch");
}

WeightSet snis_normalize(Vec log_w) {
    if (log_w.empty()) throw std::invalid_argument("snis_normalize: empty weight vector");
    const std::size_t n = log_w.size();
    const double shift = *std::max_element(log_w.begin(), log_w.end());
    if (!std::isfinite(shift))
        throw std::runtime_error("snis: degenerate query, all log-weights underflowed");
    Vec w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(log_w[i] - shift);
    const double total = pairwise_sum(w);
    Vec wsq(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] /= total;
        wsq[i] = w[i] * w[i];
    }
    const double sum_sq = pairwise_sum(wsq);
    return WeightSet{std::move(w), shift + std::log(total), 1.0 / sum_sq};
}

namespace {

Vec transition_log_weights(const ReferenceBank& bank, const AffineKernel& kernel,
                           std::span<const double> y, double t) {
    bank.validate();
    check_dim(y.size(), bank.dim(), "snis weights query");
    if (!(t > 0.0)) throw std::invalid_argument("snis weights: t must be positive");
    const std::size_t n = bank.size();
    const std::size_t d = bank.dim();
    const double f = kernel.phi(t);
    const double var = kernel.noise_variance(t);
    const double log_norm =
        -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * var);

    Vec log_w(n);
    simd::kernels().sqdist_to_rows(bank.points.data(), n, d, y.data(), f, log_w.data());
    const double inv2var = 0.5 / var;
    for (std::size_t i = 0; i < n; ++i) log_w[i] = log_norm - log_w[i] * inv2var;
    return log_w;
}

}  // namespace

WeightSet prior_weights(const ReferenceBank& bank, const AffineKernel& kernel,
                        std::span<const double> y, double t) {
    return snis_normalize(transition_log_weights(bank, kernel, y, t));
}

WeightSet posterior_weights(const ReferenceBank& bank, const AffineKernel& kernel,
                            std::span<const double> y, double t) {
    if (!bank.log_likelihoods)
        throw std::invalid_argument("posterior_weights: bank has no log-likelihood column");
    Vec log_w = transition_log_weights(bank, kernel, y, t);
    const Vec& ll = *bank.log_likelihoods;
    // Re-center the tilt so a constant likelihood cancels exactly and the
    // result matches prior_weights bit for bit.
    const double center = *std::max_element(ll.begin(), ll.end());
    for (std::size_t i = 0; i < log_w.size(); ++i) log_w[i] += ll[i] - center;
    WeightSet ws = snis_normalize(std::move(log_w));
    ws.log_normalizer += center;
    return ws;
}

double ess(const WeightSet& weights) { return weights.ess; }

Vec snis_mean(const WeightSet& weights, const Matrix& values) {
    check_dim(values.rows(), weights.w.size(), "snis_mean values");
    Vec out(values.cols());
    simd::kernels().weighted_sum_rows(weights.w.data(), values.data(), values.rows(),
                                      values.cols(), out.data());
    return out;
}

PluginMoments plugin_moments(const WeightSet& weights, const Matrix& a, const Matrix& b) {
    const std::size_t n = weights.w.size();
    check_dim(a.rows(), n, "plugin_moments a");
    check_dim(b.rows(), n, "plugin_moments b");
    check_dim(b.cols(), a.cols(), "plugin_moments b columns");

    const double sum_sq = 1.0 / weights.ess;
    const double denom = 1.0 - sum_sq;
    if (!(denom > 0.0))
        throw std::domain_error("plugin_moments: degenerate weights (ESS collapse to one point)");

    const Vec mean_a = snis_mean(weights, a);
    const Vec mean_b = snis_mean(weights, b);
    double maa = 0.0, mbb = 0.0, mab = 0.0;
    simd::kernels().weighted_center_moments(weights.w.data(), a.data(), b.data(), n, a.cols(),
                                            mean_a.data(), mean_b.data(), &maa, &mbb, &mab);
    return PluginMoments{maa / denom, mbb / denom, mab / denom};
}

Vec median_of_means(const std::vector<Vec>& batch_estimates) {
    if (batch_estimates.empty())
        throw std::invalid_argument("median_of_means: no batches");
    const std::size_t b = batch_estimates.size();
    if (b == 1) return batch_estimates.front();
    const std::size_t d = batch_estimates.front().size();
    Vec out(d);
    Vec column(b);
    for (std::size_t l = 0; l < d; ++l) {
        for (std::size_t k = 0; k < b; ++k) column[k] = batch_estimates[k][l];
        std::sort(column.begin(), column.end());
        out[l] = (b % 2 == 1) ? column[b / 2]
                              : 0.5 * (column[b / 2 - 1] + column[b / 2]);
    }
    return out;
}

std::vector<ReferenceBank> split_bank(const ReferenceBank& bank, std::size_t n_batches,
                                      std::uint64_t seed) {
    bank.validate();
    if (n_batches < 1 || n_batches > bank.size())
        throw std::invalid_argument("split_bank: invalid batch count");
    const std::size_t n = bank.size();
    const std::size_t d = bank.dim();

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = substream(seed, {0xb10c5u});
    for (std::size_t i = n; i-- > 1;) {
        const std::size_t j = rng.next_u64() % (i + 1);
        std::swap(order[i], order[j]);
    }

    std::vector<ReferenceBank> out;
    out.reserve(n_batches);
    std::size_t start = 0;
    for (std::size_t k = 0; k < n_batches; ++k) {
        const std::size_t count = n / n_batches + (k < n % n_batches ? 1 : 0);
        ReferenceBank part;
        part.points = Matrix(count, d);
        if (bank.scores) part.scores = Matrix(count, d);
        if (bank.log_likelihoods) part.log_likelihoods = Vec(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t src = order[start + i];
            part.points.set_row(i, bank.points.row(src));
            if (bank.scores) part.scores->set_row(i, bank.scores->row(src));
            if (bank.log_likelihoods) (*part.log_likelihoods)[i] = (*bank.log_likelihoods)[src];
        }
        out.push_back(std::move(part));
        start += count;
    }
    return out;
}

}  // namespace blendscore
