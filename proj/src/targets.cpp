#include "blendscore/targets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

namespace blendscore {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

double log_sum_exp(std::span<const double> v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;  // all -inf (or a NaN poisoning the max)
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}
}  // namespace

Covariance Covariance::diagonal(Vec variances) {
    for (double v : variances)
        if (!(v > 0.0)) throw std::invalid_argument("Covariance: variances must be positive");
    Covariance c;
    c.kind_ = Kind::Diagonal;
    c.dim_ = variances.size();
    c.diag_ = std::move(variances);
    return c;
}

Covariance Covariance::dense(Matrix m) {
    Covariance c;
    c.kind_ = Kind::Dense;
    c.dim_ = m.rows();
    c.chol_ = cholesky(m);  // throws when not SPD
    c.dense_ = std::move(m);
    return c;
}

Covariance Covariance::isotropic(std::size_t dim, double variance) {
    return diagonal(Vec(dim, variance));
}

double Covariance::log_det() const {
    if (kind_ == Kind::Diagonal) {
        double s = 0.0;
        for (double v : diag_) s += std::log(v);
        return s;
    }
    return cholesky_log_det(chol_);
}

Vec Covariance::solve(std::span<const double> v) const {
    check_dim(v.size(), dim_, "Covariance::solve");
    if (kind_ == Kind::Diagonal) {
        Vec out(dim_);
        for (std::size_t l = 0; l < dim_; ++l) out[l] = v[l] / diag_[l];
        return out;
    }
    return cholesky_solve(chol_, v);
}

double Covariance::mahalanobis(std::span<const double> x, std::span<const double> mean) const {
    check_dim(x.size(), dim_, "Covariance::mahalanobis");
    Vec diff(dim_);
    for (std::size_t l = 0; l < dim_; ++l) diff[l] = x[l] - mean[l];
    if (kind_ == Kind::Diagonal) {
        double s = 0.0;
        for (std::size_t l = 0; l < dim_; ++l) s += diff[l] * diff[l] / diag_[l];
        return s;
    }
    const Vec solved = cholesky_solve(chol_, diff);
    return dot(diff, solved);
}

Vec Covariance::apply_sqrt(std::span<const double> z) const {
    check_dim(z.size(), dim_, "Covariance::apply_sqrt");
    Vec out(dim_, 0.0);
    if (kind_ == Kind::Diagonal) {
        for (std::size_t l = 0; l < dim_; ++l) out[l] = std::sqrt(diag_[l]) * z[l];
        return out;
    }
    for (std::size_t i = 0; i < dim_; ++i)
        for (std::size_t j = 0; j <= i; ++j) out[i] += chol_(i, j) * z[j];
    return out;
}

Matrix Covariance::to_dense() const {
    if (kind_ == Kind::Dense) return dense_;
    Matrix m(dim_, dim_);
    for (std::size_t l = 0; l < dim_; ++l) m(l, l) = diag_[l];
    return m;
}

Covariance Covariance::affine_isotropic(double a, double b) const {
    if (kind_ == Kind::Diagonal) {
        Vec v(dim_);
        for (std::size_t l = 0; l < dim_; ++l) v[l] = a * diag_[l] + b;
        return diagonal(std::move(v));
    }
    Matrix m = dense_;
    for (std::size_t i = 0; i < dim_; ++i) {
        for (std::size_t j = 0; j < dim_; ++j) m(i, j) *= a;
        m(i, i) += b;
    }
    return dense(std::move(m));
}

GaussianMixture::GaussianMixture(Vec weights, std::vector<GaussianComponent> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
    if (weights_.empty() || weights_.size() != components_.size())
        throw std::invalid_argument("GaussianMixture: weights/components size mismatch");
    dim_ = components_.front().mean.size();
    double total = 0.0;
    for (double w : weights_) {
        if (!(w >= 0.0)) throw std::invalid_argument("GaussianMixture: negative weight");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-12)
        throw std::invalid_argument("GaussianMixture: weights must sum to 1");
    for (const auto& c : components_) {
        check_dim(c.mean.size(), dim_, "GaussianMixture component mean");
        check_dim(c.cov.dim(), dim_, "GaussianMixture component covariance");
    }
    log_weights_.resize(weights_.size());
    for (std::size_t k = 0; k < weights_.size(); ++k)
        log_weights_[k] = weights_[k] > 0.0 ? std::log(weights_[k])
                                            : -std::numeric_limits<double>::infinity();
}

double GaussianMixture::log_density(std::span<const double> x) const {
    check_dim(x.size(), dim_, "GaussianMixture::log_density");
    Vec lc(components_.size());
    const double d = static_cast<double>(dim_);
    for (std::size_t k = 0; k < components_.size(); ++k) {
        const auto& c = components_[k];
        lc[k] = log_weights_[k] - 0.5 * (d * kLog2Pi + c.cov.log_det()) -
                0.5 * c.cov.mahalanobis(x, c.mean);
    }
    return log_sum_exp(lc);
}

Vec GaussianMixture::score(std::span<const double> x) const {
    check_dim(x.size(), dim_, "GaussianMixture::score");
    const std::size_t K = components_.size();
    Vec lc(K);
    const double d = static_cast<double>(dim_);
    for (std::size_t k = 0; k < K; ++k) {
        const auto& c = components_[k];
        lc[k] = log_weights_[k] - 0.5 * (d * kLog2Pi + c.cov.log_det()) -
                0.5 * c.cov.mahalanobis(x, c.mean);
    }
    const double lse = log_sum_exp(lc);
    Vec out(dim_, 0.0);
    Vec diff(dim_);
    for (std::size_t k = 0; k < K; ++k) {
        const double r = std::exp(lc[k] - lse);
        if (r == 0.0) continue;
        const auto& c = components_[k];
        for (std::size_t l = 0; l < dim_; ++l) diff[l] = c.mean[l] - x[l];
        const Vec pull = c.cov.solve(diff);
        for (std::size_t l = 0; l < dim_; ++l) out[l] += r * pull[l];
    }
    return out;
}

Matrix GaussianMixture::sample(std::size_t n, Rng& rng) const {
    Matrix out(n, dim_);
    Vec z(dim_);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = rng.categorical(weights_);
        rng.fill_normal(z);
        const Vec noise = components_[k].cov.apply_sqrt(z);
        for (std::size_t l = 0; l < dim_; ++l)
            out(i, l) = components_[k].mean[l] + noise[l];
    }
    return out;
}

GaussianMixture GaussianMixture::diffused(const AffineKernel& kernel, double t) const {
    if (kernel.variant() != KernelVariant::OU)
        throw std::invalid_argument("GaussianMixture::diffused: only the OU kernel is supported");
    if (!(t >= 0.0)) throw std::invalid_argument("GaussianMixture::diffused: t must be nonnegative");
    const double f = kernel.phi(t);
    const double var = kernel.noise_variance(t);
    std::vector<GaussianComponent> comps;
    comps.reserve(components_.size());
    for (const auto& c : components_) {
        Vec mean(dim_);
        for (std::size_t l = 0; l < dim_; ++l) mean[l] = f * c.mean[l];
        comps.push_back({std::move(mean), c.cov.affine_isotropic(f * f, var)});
    }
    return GaussianMixture(weights_, std::move(comps));
}

void LinearGaussianLikelihood::validate() const {
    if (!(sigma > 0.0)) throw std::invalid_argument("LinearGaussianLikelihood: sigma must be positive");
    check_dim(y_obs.size(), a.rows(), "LinearGaussianLikelihood y_obs");
}

double LinearGaussianLikelihood::log_likelihood(std::span<const double> x) const {
    const Vec ax = matvec(a, x);
    double sq = 0.0;
    for (std::size_t i = 0; i < ax.size(); ++i) {
        const double r = y_obs[i] - ax[i];
        sq += r * r;
    }
    const double m = static_cast<double>(a.rows());
    return -0.5 * m * (kLog2Pi + 2.0 * std::log(sigma)) - 0.5 * sq / (sigma * sigma);
}

Vec LinearGaussianLikelihood::grad_log_likelihood(std::span<const double> x) const {
    const Vec ax = matvec(a, x);
    Vec resid(ax.size());
    for (std::size_t i = 0; i < ax.size(); ++i) resid[i] = y_obs[i] - ax[i];
    Vec g = matvec_t(a, resid);
    const double inv = 1.0 / (sigma * sigma);
    for (double& v : g) v *= inv;
    return g;
}

GaussianMixture conjugate_posterior(const GaussianMixture& prior,
                                    const LinearGaussianLikelihood& lik) {
    lik.validate();
    const std::size_t d = prior.dim();
    const std::size_t m = lik.a.rows();
    check_dim(lik.a.cols(), d, "conjugate_posterior operator");
    const double inv_s2 = 1.0 / (lik.sigma * lik.sigma);

    // A^T A and A^T y are shared across components.
    Matrix ata(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < m; ++r) s += lik.a(r, i) * lik.a(r, j);
            ata(i, j) = s;
        }
    const Vec aty = matvec_t(lik.a, lik.y_obs);

    const std::size_t K = prior.n_components();
    Vec log_w(K);
    std::vector<GaussianComponent> comps;
    comps.reserve(K);

    for (std::size_t k = 0; k < K; ++k) {
        const auto& c = prior.components()[k];
        const Matrix sigma_k = c.cov.to_dense();

        // Posterior precision and moments.
        Matrix prior_chol = cholesky(sigma_k);
        Matrix precision(d, d);
        {
            // Sigma_k^{-1} column by column.
            Vec e(d, 0.0);
            for (std::size_t j = 0; j < d; ++j) {
                e[j] = 1.0;
                const Vec col = cholesky_solve(prior_chol, e);
                for (std::size_t i = 0; i < d; ++i) precision(i, j) = col[i];
                e[j] = 0.0;
            }
        }
        Vec rhs = matvec(precision, c.mean);  // Sigma_k^{-1} mu_k
        for (std::size_t i = 0; i < d; ++i) {
            rhs[i] += inv_s2 * aty[i];
            for (std::size_t j = 0; j < d; ++j) precision(i, j) += inv_s2 * ata(i, j);
        }
        Matrix prec_chol = cholesky(precision);  // throws on singular precision
        Vec post_mean = cholesky_solve(prec_chol, rhs);
        Matrix post_cov(d, d);
        {
            Vec e(d, 0.0);
            for (std::size_t j = 0; j < d; ++j) {
                e[j] = 1.0;
                const Vec col = cholesky_solve(prec_chol, e);
                for (std::size_t i = 0; i < d; ++i) post_cov(i, j) = col[i];
                e[j] = 0.0;
            }
        }
        // Symmetrize against roundoff before the SPD factorization.
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i + 1; j < d; ++j) {
                const double v = 0.5 * (post_cov(i, j) + post_cov(j, i));
                post_cov(i, j) = v;
                post_cov(j, i) = v;
            }

        // Component evidence: y ~ N(A mu_k, sigma^2 I + A Sigma_k A^T).
        Matrix s_y(m, m);
        for (std::size_t i = 0; i < m; ++i) {
            // row i of A Sigma_k
            Vec asig(d, 0.0);
            for (std::size_t l = 0; l < d; ++l)
                for (std::size_t j = 0; j < d; ++j) asig[j] += lik.a(i, l) * sigma_k(l, j);
            for (std::size_t j = 0; j < m; ++j) {
                double s = 0.0;
                for (std::size_t l = 0; l < d; ++l) s += asig[l] * lik.a(j, l);
                s_y(i, j) = s;
            }
            s_y(i, i) += lik.sigma * lik.sigma;
        }
        const Matrix sy_chol = cholesky(s_y);
        const Vec amu = matvec(lik.a, c.mean);
        Vec resid(m);
        for (std::size_t i = 0; i < m; ++i) resid[i] = lik.y_obs[i] - amu[i];
        const Vec solved = cholesky_solve(sy_chol, resid);
        const double mahal = dot(resid, solved);
        const double log_evidence =
            -0.5 * (static_cast<double>(m) * kLog2Pi + cholesky_log_det(sy_chol)) - 0.5 * mahal;

        log_w[k] = std::log(prior.weights()[k]) + log_evidence;
        comps.push_back({std::move(post_mean), Covariance::dense(std::move(post_cov))});
    }

    const double lse = log_sum_exp(log_w);
    Vec w(K);
    for (std::size_t k = 0; k < K; ++k) w[k] = std::exp(log_w[k] - lse);
    // Renormalize exactly; the constructor enforces a 1e-12 budget.
    const double total = pairwise_sum(w);
    for (double& v : w) v /= total;
    return GaussianMixture(std::move(w), std::move(comps));
}

Vec posterior_score_exact(const GaussianMixture& prior,
                          const LinearGaussianLikelihood& lik,
                          std::span<const double> x) {
    Vec s = prior.score(x);
    const Vec g = lik.grad_log_likelihood(x);
    for (std::size_t l = 0; l < s.size(); ++l) s[l] += g[l];
    return s;
}

namespace {
Vec spectral_eigenvalues(std::size_t dim, double decay, double scale) {
    Vec v(dim);
    for (std::size_t l = 0; l < dim; ++l)
        v[l] = scale * std::pow(static_cast<double>(l + 1), -decay);
    return v;
}
}  // namespace

GaussianMixture spectral_gmm(const SpectralGmmConfig& config) {
    if (config.dim < 1 || config.n_components < 1 || !(config.radius > 0.0))
        throw std::invalid_argument("spectral_gmm: invalid config");
    Rng rng = substream(config.seed, {0x5eedu});
    const Vec eig = spectral_eigenvalues(config.dim, config.eigen_decay, config.cov_scale);

    std::vector<GaussianComponent> comps;
    comps.reserve(config.n_components);
    for (std::size_t k = 0; k < config.n_components; ++k) {
        Vec mean = rng.normal_vec(config.dim);
        const double norm = std::sqrt(squared_norm(mean));
        for (double& v : mean) v = config.radius * v / norm;
        comps.push_back({std::move(mean), Covariance::diagonal(eig)});
    }
    return GaussianMixture(Vec(config.n_components, 1.0 / config.n_components),
                           std::move(comps));
}

GaussianMixture helix_gmm(const HelixGmmConfig& config) {
    if (config.dim < 3 || config.n_components < 1)
        throw std::invalid_argument("helix_gmm: need dim >= 3 and at least one component");
    const Vec eig = spectral_eigenvalues(config.dim, config.eigen_decay, config.cov_scale);
    std::vector<GaussianComponent> comps;
    comps.reserve(config.n_components);
    for (std::size_t k = 0; k < config.n_components; ++k) {
        const double u = config.n_components == 1
                             ? 0.0
                             : static_cast<double>(k) / (config.n_components - 1.0);
        const double angle = 2.0 * std::numbers::pi * config.turns * u;
        Vec mean(config.dim, 0.0);
        mean[0] = config.radius * std::cos(angle);
        mean[1] = config.radius * std::sin(angle);
        mean[2] = config.height * (u - 0.5);
        comps.push_back({std::move(mean), Covariance::diagonal(eig)});
    }
    return GaussianMixture(Vec(config.n_components, 1.0 / config.n_components),
                           std::move(comps));
}

double signal_scale(const GaussianMixture& prior, const Matrix& a,
                    std::size_t n_mc, Rng& rng) {
    if (n_mc < 1) throw std::invalid_argument("signal_scale: n_mc must be >= 1");
    const Matrix draws = prior.sample(n_mc, rng);
    Vec sq(n_mc);
    for (std::size_t i = 0; i < n_mc; ++i) sq[i] = squared_norm(matvec(a, draws.row(i)));
    return std::sqrt(pairwise_sum(sq) / static_cast<double>(n_mc));
}

Matrix inverse_index_operator(std::size_t dim) {
    Matrix a(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) a(i, i) = 1.0 / static_cast<double>(i + 1);
    return a;
}

std::string mixture_to_json(const GaussianMixture& gmm) {
    nlohmann::json j;
    j["weights"] = gmm.weights();
    auto& means = j["means"] = nlohmann::json::array();
    auto& covs = j["covariances"] = nlohmann::json::array();
    for (const auto& c : gmm.components()) {
        means.push_back(c.mean);
        nlohmann::json jc;
        if (c.cov.kind() == Covariance::Kind::Diagonal) {
            jc["kind"] = "diagonal";
            jc["variances"] = c.cov.diag_variances();
        } else {
            jc["kind"] = "dense";
            const Matrix m = c.cov.to_dense();
            std::vector<Vec> rows;
            for (std::size_t i = 0; i < m.rows(); ++i) rows.push_back(m.row_vec(i));
            jc["matrix"] = rows;
        }
        covs.push_back(std::move(jc));
    }
    return j.dump(2);
}

GaussianMixture mixture_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    const Vec weights = j.at("weights").get<Vec>();
    const auto& means = j.at("means");
    const auto& covs = j.at("covariances");
    if (means.size() != weights.size() || covs.size() != weights.size())
        throw std::invalid_argument("mixture_from_json: inconsistent array lengths");
    std::vector<GaussianComponent> comps;
    comps.reserve(weights.size());
    for (std::size_t k = 0; k < weights.size(); ++k) {
        Vec mean = means[k].get<Vec>();
        const std::string kind = covs[k].at("kind").get<std::string>();
        if (kind == "diagonal") {
            comps.push_back({std::move(mean),
                             Covariance::diagonal(covs[k].at("variances").get<Vec>())});
        } else if (kind == "dense") {
            const auto rows = covs[k].at("matrix").get<std::vector<Vec>>();
            Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
            for (std::size_t i = 0; i < rows.size(); ++i) m.set_row(i, rows[i]);
            comps.push_back({std::move(mean), Covariance::dense(std::move(m))});
        } else {
            throw std::invalid_argument("mixture_from_json: unknown covariance kind");
        }
    }
    return GaussianMixture(weights, std::move(comps));
}

}  // namespace blendscore
