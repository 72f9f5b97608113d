#include <doctest.h>

#include <cmath>

#include "blendscore/metrics.hpp"
#include "blendscore/sampler.hpp"
#include "blendscore/targets.hpp"

using namespace blendscore;

namespace {

GaussianMixture standard_gaussian(std::size_t d) {
    return GaussianMixture(Vec{1.0},
                           {GaussianComponent{Vec(d, 0.0), Covariance::isotropic(d, 1.0)}});
}

ReferenceBank exact_bank(const GaussianMixture& target, std::size_t n, Rng& rng) {
    ReferenceBank bank;
    bank.points = target.sample(n, rng);
    bank.scores = Matrix(n, target.dim());
    for (std::size_t i = 0; i < n; ++i)
        bank.scores->set_row(i, target.score(bank.points.row(i)));
    return bank;
}

Vec mean_of(const Matrix& samples) {
    Vec m(samples.cols(), 0.0);
    for (std::size_t i = 0; i < samples.rows(); ++i)
        for (std::size_t l = 0; l < samples.cols(); ++l) m[l] += samples(i, l);
    for (double& v : m) v /= static_cast<double>(samples.rows());
    return m;
}

}  // namespace

TEST_CASE("make_time_grid: endpoints, geometric midpoint, linear spacing") {
    const TimeGrid grid = make_time_grid(5e-4, 1.5, 30, GridSpacing::Log);
    CHECK(grid.knots.front() == 1.5);
    CHECK(grid.knots.back() == 5e-4);
    CHECK(grid.knots.size() == 31);
    for (std::size_t s = 1; s < grid.knots.size(); ++s)
        CHECK(grid.knots[s] < grid.knots[s - 1]);

    const TimeGrid log2 = make_time_grid(0.1, 0.9, 2, GridSpacing::Log);
    CHECK(log2.knots[1] == doctest::Approx(std::sqrt(0.1 * 0.9)).epsilon(1e-14));

    const TimeGrid lin = make_time_grid(1.0, 3.0, 2, GridSpacing::Linear);
    CHECK(lin.knots[0] == 3.0);
    CHECK(lin.knots[1] == doctest::Approx(2.0));
    CHECK(lin.knots[2] == 1.0);

    CHECK_THROWS_AS(make_time_grid(0.0, 1.0, 4, GridSpacing::Log), std::invalid_argument);
    CHECK_THROWS_AS(make_time_grid(1.0, 0.5, 4, GridSpacing::Log), std::invalid_argument);
    CHECK_THROWS_AS(make_time_grid(0.1, 1.0, 1, GridSpacing::Log), std::invalid_argument);
}

TEST_CASE("heun_pc_step: hand-computed update and NFE accounting") {
    int calls = 0;
    const ScoreFn zero_score = [&](std::span<const double>, double) {
        ++calls;
        return Vec{0.0};
    };
    // score = 0, z = 0, y = 1, delta = 0.1: predictor 0.9, corrector 0.905.
    const Vec out = heun_pc_step(zero_score, Vec{1.0}, 0.2, 0.1, Vec{0.0});
    CHECK(out[0] == doctest::Approx(0.905).epsilon(1e-15));
    CHECK(calls == 2);

    // delta -> 0 keeps the state.
    const ScoreFn linear = [](std::span<const double> y, double) {
        return Vec{-0.7 * y[0]};
    };
    const Vec tiny = heun_pc_step(linear, Vec{1.3}, 0.5, 0.5 - 1e-12, Vec{0.4});
    CHECK(tiny[0] == doctest::Approx(1.3).epsilon(1e-8));

    const ScoreFn bad = [](std::span<const double>, double) {
        return Vec{std::numeric_limits<double>::quiet_NaN()};
    };
    CHECK_THROWS_AS(heun_pc_step(bad, Vec{0.0}, 0.2, 0.1, Vec{0.0}), std::runtime_error);
    CHECK_THROWS_AS(heun_pc_step(zero_score, Vec{0.0}, 0.1, 0.2, Vec{0.0}),
                    std::invalid_argument);
}

TEST_CASE("sample: stationary target stays standard normal") {
    const GaussianMixture target = standard_gaussian(3);
    Rng rng(2024);
    const ReferenceBank bank = exact_bank(target, 4000, rng);
    const AffineKernel ou = AffineKernel::ou(3);

    SamplerConfig cfg;
    cfg.n_particles = 2000;
    cfg.grid = make_time_grid(5e-4, 1.5, 30, GridSpacing::Log);
    cfg.kind = EstimatorKind::Tweedie;
    cfg.seed = 9;
    const SampleResult run = sample(bank, ou, cfg);

    CHECK(run.nfe == 2ull * 30ull * 2000ull);

    const Vec m = mean_of(run.particles);
    CHECK(std::sqrt(squared_norm(m)) <= 0.1);

    double frob = 0.0;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
            double c = 0.0;
            for (std::size_t i = 0; i < run.particles.rows(); ++i)
                c += (run.particles(i, a) - m[a]) * (run.particles(i, b) - m[b]);
            c /= static_cast<double>(run.particles.rows());
            const double diff = c - (a == b ? 1.0 : 0.0);
            frob += diff * diff;
        }
    CHECK(std::sqrt(frob) <= 0.1);
}

TEST_CASE("sample: bitwise reproducible and thread-count independent") {
    const GaussianMixture target = standard_gaussian(2);
    Rng rng(5);
    const ReferenceBank bank = exact_bank(target, 500, rng);
    const AffineKernel ou = AffineKernel::ou(2);

    SamplerConfig cfg;
    cfg.n_particles = 64;
    cfg.grid = make_time_grid(1e-3, 1.0, 8, GridSpacing::Log);
    cfg.kind = EstimatorKind::Blend;
    cfg.seed = 31337;
    cfg.collect_diagnostics = true;
    cfg.n_threads = 1;
    const SampleResult a = sample(bank, ou, cfg);
    cfg.n_threads = 4;
    const SampleResult b = sample(bank, ou, cfg);

    for (std::size_t i = 0; i < a.particles.rows(); ++i)
        for (int l = 0; l < 2; ++l) CHECK(a.particles(i, l) == b.particles(i, l));
    REQUIRE(a.diagnostics.size() == b.diagnostics.size());
    for (std::size_t i = 0; i < a.diagnostics.size(); ++i) {
        CHECK(a.diagnostics[i].ess == b.diagnostics[i].ess);
        CHECK(a.diagnostics[i].lambda == b.diagnostics[i].lambda);
    }
    CHECK(a.nfe == static_cast<std::uint64_t>(2 * 8 * 64));
}

TEST_CASE("sample: blend beats tweedie on a bimodal target, paired seeds") {
    const GaussianMixture target(
        Vec{0.5, 0.5}, {GaussianComponent{Vec{-1.5, 0.0}, Covariance::isotropic(2, 0.3)},
                        GaussianComponent{Vec{1.5, 0.0}, Covariance::isotropic(2, 0.3)}});
    const AffineKernel ou = AffineKernel::ou(2);
    const KernelSpec kspec = KernelSpec::rbf(Vec{0.5, 1.0});

    int blend_wins = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng = substream(seed, {0xabcu});
        const ReferenceBank bank = exact_bank(target, 1000, rng);
        const Matrix exact = target.sample(400, rng);

        SamplerConfig cfg;
        cfg.n_particles = 400;
        cfg.grid = make_time_grid(5e-4, 1.5, 20, GridSpacing::Log);
        cfg.seed = seed;

        cfg.kind = EstimatorKind::Blend;
        const double mmd_blend = mmd2(sample(bank, ou, cfg).particles, exact, kspec);
        cfg.kind = EstimatorKind::Tweedie;
        const double mmd_tweedie = mmd2(sample(bank, ou, cfg).particles, exact, kspec);
        if (mmd_blend <= mmd_tweedie) ++blend_wins;
    }
    CHECK(blend_wins >= 6);
}

TEST_CASE("sample_with_score: exact reverse dynamics reach the target") {
    const GaussianMixture target(
        Vec{0.5, 0.5}, {GaussianComponent{Vec{-1.0, 0.5}, Covariance::isotropic(2, 0.4)},
                        GaussianComponent{Vec{1.0, -0.5}, Covariance::isotropic(2, 0.4)}});
    const AffineKernel ou = AffineKernel::ou(2);

    const ScoreFn exact_score = [&](std::span<const double> y, double t) {
        return target.diffused(ou, t).score(y);
    };
    SamplerConfig cfg;
    cfg.n_particles = 4000;
    cfg.grid = make_time_grid(5e-4, 1.5, 60, GridSpacing::Log);
    cfg.seed = 77;
    const SampleResult run = sample_with_score(exact_score, 2, cfg);

    Rng rng(55);
    const Matrix exact_a = target.sample(4000, rng);
    const Matrix exact_b = target.sample(4000, rng);
    const KernelSpec kspec = KernelSpec::rbf(Vec{0.5, 1.0, 2.0});
    const double floor = std::sqrt(std::max(mmd2(exact_a, exact_b, kspec), 0.0));
    const double got = std::sqrt(std::max(mmd2(run.particles, exact_a, kspec), 0.0));
    CHECK(got <= 2.0 * floor);
}

TEST_CASE("mala_sample: stationary moments, small-step acceptance, errors") {
    const LogDensityFn lp = [](std::span<const double> x) { return -0.5 * x[0] * x[0]; };
    const GradFn grad = [](std::span<const double> x) { return Vec{-x[0]}; };

    Rng rng(8);
    MalaConfig cfg;
    cfg.n_iters = 20000;
    cfg.burn_in = 2000;
    cfg.step_size = 0.5;
    cfg.adapt = false;
    const MalaResult res = mala_sample(lp, grad, Vec{0.3}, cfg, rng);
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < res.chain.rows(); ++i) {
        mean += res.chain(i, 0);
        sq += res.chain(i, 0) * res.chain(i, 0);
    }
    mean /= static_cast<double>(res.chain.rows());
    sq /= static_cast<double>(res.chain.rows());
    CHECK(std::abs(mean) <= 0.05);
    CHECK(sq - mean * mean == doctest::Approx(1.0).epsilon(0.1));

    MalaConfig tiny;
    tiny.n_iters = 1000;
    tiny.burn_in = 1;
    tiny.step_size = 1e-6;
    Rng rng2(9);
    const MalaResult res2 = mala_sample(lp, grad, Vec{0.0}, tiny, rng2);
    CHECK(res2.acceptance_rate >= 0.99);

    const LogDensityFn bad = [](std::span<const double>) {
        return std::numeric_limits<double>::quiet_NaN();
    };
    Rng rng3(1);
    CHECK_THROWS_AS(mala_sample(bad, grad, Vec{0.0}, tiny, rng3), std::invalid_argument);

    // Burn-in adaptation drives the acceptance rate toward the target.
    MalaConfig adapt;
    adapt.n_iters = 6000;
    adapt.burn_in = 3000;
    adapt.step_size = 20.0;  // hopeless without adaptation
    adapt.adapt = true;
    Rng rng4(12);
    const MalaResult res3 = mala_sample(lp, grad, Vec{0.0}, adapt, rng4);
    CHECK(res3.final_step_size < 20.0);
    CHECK(res3.final_step_size > 0.0);
    double mean3 = 0.0;
    for (std::size_t i = 0; i < res3.chain.rows(); ++i) mean3 += res3.chain(i, 0);
    CHECK(std::abs(mean3 / static_cast<double>(res3.chain.rows())) <= 0.2);
}
