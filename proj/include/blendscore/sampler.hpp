#pragma once

#include <cstdint>
#include <functional>

#include "blendscore/estimators.hpp"
#include "blendscore/snis.hpp"

namespace blendscore {

enum class GridSpacing { Log, Linear };

// Decreasing diffusion-time knots t_max = knots[0] > ... > knots[K] = t_min,
// all strictly positive; K steps between K+1 knots.
struct TimeGrid {
    Vec knots;
    GridSpacing spacing = GridSpacing::Log;

    std::size_t n_steps() const { return knots.empty() ? 0 : knots.size() - 1; }
};

TimeGrid make_time_grid(double t_min, double t_max, std::size_t n_steps,
                        GridSpacing spacing);

using ScoreFn = std::function<Vec(std::span<const double>, double)>;

// One Heun predictor-corrector step from t_hi down to t_lo with reverse
// drift f(y,t) = y + 2 s(y,t); the same Gaussian draw z feeds predictor and
// corrector. Exactly two score evaluations. Throws on non-finite scores.
Vec heun_pc_step(const ScoreFn& score_fn, std::span<const double> y, double t_hi,
                 double t_lo, std::span<const double> z);

struct SamplerConfig {
    std::size_t n_particles = 1000;
    TimeGrid grid;
    EstimatorKind kind = EstimatorKind::Blend;
    WeightMode mode = WeightMode::Prior;
    std::uint64_t seed = 0;
    bool collect_diagnostics = false;
    EstimatorOptions estimator;
    unsigned n_threads = 0;  // 0 = hardware concurrency
};

// One record per score evaluation when diagnostics are enabled.
struct StepDiagnostics {
    std::uint32_t step;
    std::uint32_t particle;
    double t;
    double ess;
    double lambda;
    bool ess_collapsed;
};

struct SampleResult {
    Matrix particles;  // M x d at t_min
    std::vector<StepDiagnostics> diagnostics;
    std::uint64_t nfe = 0;  // score-function evaluations (2 per particle-step)
};

// Reverse-time sampling against a reference bank: particles start i.i.d.
// N(0, I) at t_max and sweep the grid with Heun PC steps. Per-particle
// counter-based noise substreams make results independent of thread count.
SampleResult sample(const ReferenceBank& bank, const AffineKernel& kernel,
                    const SamplerConfig& config);

// Same integrator driven by an arbitrary score function (exact-score
// baselines; no ESS/lambda diagnostics).
SampleResult sample_with_score(const ScoreFn& score_fn, std::size_t dim,
                               const SamplerConfig& config);

struct MalaConfig {
    std::size_t n_iters = 20000;
    std::size_t burn_in = 2000;
    double step_size = 0.5;
    bool adapt = false;             // Robbins-Monro step adaptation, burn-in only
    double target_accept = 0.574;
};

struct MalaResult {
    Matrix chain;            // post-burn-in states
    double acceptance_rate;  // over all iterations
    double final_step_size;
};

using LogDensityFn = std::function<double(std::span<const double>)>;
using GradFn = std::function<Vec(std::span<const double>)>;

MalaResult mala_sample(const LogDensityFn& log_density, const GradFn& grad,
                       std::span<const double> init, const MalaConfig& config, Rng& rng);

}  // namespace blendscore
