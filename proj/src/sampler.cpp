#include "blendscore/sampler.hpp"

#include <atomic>
#include <cmath>
#include <limits>

#include "blendscore/parallel.hpp"
#include "blendscore/rng.hpp"

namespace blendscore {

TimeGrid make_time_grid(double t_min, double t_max, std::size_t n_steps,
                        GridSpacing spacing) {
    if (!(t_min > 0.0) || !(t_min < t_max))
        throw std::invalid_argument("make_time_grid: need 0 < t_min < t_max");
    if (n_steps < 2) throw std::invalid_argument("make_time_grid: need at least 2 steps");
    TimeGrid grid;
    grid.spacing = spacing;
    grid.knots.resize(n_steps + 1);
    for (std::size_t s = 1; s < n_steps; ++s) {
        const double u = static_cast<double>(s) / static_cast<double>(n_steps);
        grid.knots[s] = spacing == GridSpacing::Log
                            ? std::exp(std::log(t_max) + u * (std::log(t_min) - std::log(t_max)))
                            : t_max + u * (t_min - t_max);
    }
    grid.knots.front() = t_max;  // endpoints exact
    grid.knots.back() = t_min;
    return grid;
}

namespace {
void require_finite(std::span<const double> v, double t) {
    for (double x : v)
        if (!std::isfinite(x))
            throw std::runtime_error("heun_pc_step: non-finite score at t=" + std::to_string(t));
}
}  // namespace

Vec heun_pc_step(const ScoreFn& score_fn, std::span<const double> y, double t_hi,
                 double t_lo, std::span<const double> z) {
    if (!(t_hi > t_lo) || !(t_lo > 0.0))
        throw std::invalid_argument("heun_pc_step: need t_hi > t_lo > 0");
    const std::size_t d = y.size();
    const double delta = t_hi - t_lo;
    const double noise = std::sqrt(2.0 * delta);

    const Vec s_hi = score_fn(y, t_hi);
    require_finite(s_hi, t_hi);
    Vec f_hi(d), pred(d);
    for (std::size_t l = 0; l < d; ++l) {
        f_hi[l] = y[l] + 2.0 * s_hi[l];
        pred[l] = y[l] - delta * f_hi[l] + noise * z[l];
    }

    const Vec s_lo = score_fn(pred, t_lo);
    require_finite(s_lo, t_lo);
    Vec out(d);
    for (std::size_t l = 0; l < d; ++l) {
        const double f_lo = pred[l] + 2.0 * s_lo[l];
        out[l] = y[l] - 0.5 * delta * (f_hi[l] + f_lo) + noise * z[l];
    }
    return out;
}

namespace {

// Shared sweep for both entry points. The estimate callback returns the
// score and, when a diagnostics slot is supplied, fills it in place.
template <typename EstimateFn>
SampleResult run_sweep(std::size_t dim, const SamplerConfig& config, EstimateFn&& estimate) {
    if (config.n_particles < 1)
        throw std::invalid_argument("sample: need at least one particle");
    if (config.grid.n_steps() < 1) throw std::invalid_argument("sample: empty time grid");
    const std::size_t m = config.n_particles;
    const std::size_t n_steps = config.grid.n_steps();

    SampleResult result;
    result.particles = Matrix(m, dim);
    if (config.collect_diagnostics) result.diagnostics.resize(2 * n_steps * m);

    parallel_for(m, [&](std::size_t j) {
        Rng rng = substream(config.seed, {0x1417u, j});
        auto row = result.particles.row(j);
        rng.fill_normal(row);
    }, config.n_threads);

    std::atomic<std::uint64_t> nfe{0};
    for (std::size_t s = 0; s < n_steps; ++s) {
        const double t_hi = config.grid.knots[s];
        const double t_lo = config.grid.knots[s + 1];
        parallel_for(m, [&](std::size_t j) {
            Rng rng = substream(config.seed, {0x57e9u, s, j});
            Vec zj(dim);
            rng.fill_normal(zj);
            std::size_t eval = 0;
            const ScoreFn fn = [&](std::span<const double> y, double t) {
                nfe.fetch_add(1, std::memory_order_relaxed);
                StepDiagnostics* slot = nullptr;
                if (config.collect_diagnostics)
                    slot = &result.diagnostics[(s * m + j) * 2 + eval];
                ++eval;
                Vec score = estimate(y, t, slot);
                if (slot) {
                    slot->step = static_cast<std::uint32_t>(s);
                    slot->particle = static_cast<std::uint32_t>(j);
                    slot->t = t;
                }
                return score;
            };
            try {
                const Vec next = heun_pc_step(fn, result.particles.row(j), t_hi, t_lo, zj);
                result.particles.set_row(j, next);
            } catch (const std::exception& e) {
                throw std::runtime_error("sample: particle " + std::to_string(j) + " step " +
                                         std::to_string(s) + ": " + e.what());
            }
        }, config.n_threads);
    }
    result.nfe = nfe.load();
    return result;
}

}  // namespace

SampleResult sample(const ReferenceBank& bank, const AffineKernel& kernel,
                    const SamplerConfig& config) {
    bank.validate();
    return run_sweep(bank.dim(), config,
        [&](std::span<const double> y, double t, StepDiagnostics* slot) -> Vec {
            ScoreEstimate est = estimate_score(bank, kernel, y, t, config.kind, config.mode,
                                               config.estimator);
            if (slot) {
                slot->ess = est.ess;
                slot->lambda = est.lambda;
                slot->ess_collapsed = est.ess_collapsed;
            }
            return std::move(est.score);
        });
}

SampleResult sample_with_score(const ScoreFn& score_fn, std::size_t dim,
                               const SamplerConfig& config) {
    return run_sweep(dim, config,
        [&](std::span<const double> y, double t, StepDiagnostics* slot) {
            if (slot) {
                slot->ess = std::numeric_limits<double>::quiet_NaN();
                slot->lambda = std::numeric_limits<double>::quiet_NaN();
                slot->ess_collapsed = false;
            }
            return score_fn(y, t);
        });
}

MalaResult mala_sample(const LogDensityFn& log_density, const GradFn& grad,
                       std::span<const double> init, const MalaConfig& config, Rng& rng) {
    if (!(config.step_size > 0.0))
        throw std::invalid_argument("mala_sample: step size must be positive");
    if (config.n_iters <= config.burn_in)
        throw std::invalid_argument("mala_sample: n_iters must exceed burn_in");
    const std::size_t d = init.size();

    Vec state(init.begin(), init.end());
    double state_lp = log_density(state);
    if (!std::isfinite(state_lp))
        throw std::invalid_argument("mala_sample: target not finite at init");
    Vec state_grad = grad(state);

    double h = config.step_size;
    const std::size_t kept = config.n_iters - config.burn_in;
    MalaResult result;
    result.chain = Matrix(kept, d);
    std::size_t accepted = 0;

    Vec prop(d), prop_grad;
    for (std::size_t it = 0; it < config.n_iters; ++it) {
        for (std::size_t l = 0; l < d; ++l)
            prop[l] = state[l] + 0.5 * h * state_grad[l] + std::sqrt(h) * rng.normal();
        const double prop_lp = log_density(prop);
        double log_alpha = -std::numeric_limits<double>::infinity();
        double accept_prob = 0.0;
        if (std::isfinite(prop_lp)) {
            prop_grad = grad(prop);
            // Gaussian proposal ratio q(state|prop) / q(prop|state).
            double fwd = 0.0, bwd = 0.0;
            for (std::size_t l = 0; l < d; ++l) {
                const double df = prop[l] - state[l] - 0.5 * h * state_grad[l];
                const double db = state[l] - prop[l] - 0.5 * h * prop_grad[l];
                fwd += df * df;
                bwd += db * db;
            }
            log_alpha = prop_lp - state_lp + (fwd - bwd) / (2.0 * h);
            accept_prob = std::min(1.0, std::exp(log_alpha));
        }
        if (std::log(rng.uniform()) < log_alpha) {
            state = prop;
            state_lp = prop_lp;
            state_grad = prop_grad;
            ++accepted;
        }
        if (config.adapt && it < config.burn_in) {
            // Robbins-Monro on log h during burn-in only; the post-burn-in
            // kernel stays fixed so detailed balance holds for kept samples.
            const double gamma = std::pow(static_cast<double>(it + 1), -0.6);
            h *= std::exp(gamma * (accept_prob - config.target_accept));
        }
        if (it >= config.burn_in) result.chain.set_row(it - config.burn_in, state);
    }
    result.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(config.n_iters);
    result.final_step_size = h;
    return result;
}

}  // namespace blendscore
