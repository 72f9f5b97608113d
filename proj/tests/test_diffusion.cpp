#include <doctest.h>

#include <cmath>
#include <numbers>

#include "blendscore/diffusion.hpp"
#include "blendscore/rng.hpp"

using namespace blendscore;

TEST_CASE("phi: closed forms per variant") {
    const AffineKernel ou = AffineKernel::ou(2);
    CHECK(ou.phi(0.0) == doctest::Approx(1.0));
    CHECK(ou.phi(std::log(2.0)) == doctest::Approx(0.5).epsilon(1e-14));

    const AffineKernel ve = AffineKernel::ve(2, Schedule::constant(1.0));
    CHECK(ve.phi(0.0) == 1.0);
    CHECK(ve.phi(0.7) == 1.0);
    CHECK(ve.phi(5.0) == 1.0);

    CHECK_THROWS_AS(ou.phi(-0.1), std::invalid_argument);
}

TEST_CASE("noise_variance: closed forms and monotonicity") {
    const AffineKernel ou = AffineKernel::ou(1);
    CHECK(ou.noise_variance(0.0) == 0.0);
    CHECK(ou.noise_variance(50.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(ou.noise_variance(0.5 * std::log(2.0)) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK_THROWS_AS(ou.noise_variance(-1.0), std::invalid_argument);

    const AffineKernel vp = AffineKernel::vp(1, Schedule::constant(2.0));
    const AffineKernel ve = AffineKernel::ve(1, Schedule{{0.0, 0.5}, {1.0, 2.0}});
    // VE: int g^2 = 1*0.5 + 4*(t-0.5) for t > 0.5
    CHECK(ve.noise_variance(1.0) == doctest::Approx(0.5 + 4.0 * 0.5));
    for (const AffineKernel* k : {&ou, &vp, &ve}) {
        double prev = -1.0;
        for (double t = 0.0; t <= 3.0; t += 0.1) {
            const double v = k->noise_variance(t);
            CHECK(v >= prev);
            prev = v;
        }
    }
}

TEST_CASE("tsi_prefactor: closed forms and inverse relation to phi") {
    const AffineKernel ou = AffineKernel::ou(3);
    CHECK(ou.tsi_prefactor(0.0) == doctest::Approx(1.0));
    CHECK(ou.tsi_prefactor(1.0) == doctest::Approx(std::exp(1.0)).epsilon(1e-14));

    // VP with beta = 2 has alpha(t) = e^{-t}, so the prefactor at t=1 is e.
    const AffineKernel vp = AffineKernel::vp(3, Schedule::constant(2.0));
    CHECK(vp.tsi_prefactor(1.0) == doctest::Approx(std::exp(1.0)).epsilon(1e-14));

    const AffineKernel ve = AffineKernel::ve(3, Schedule::constant(1.5));
    for (double t = 0.05; t < 3.0; t += 0.17) {
        CHECK(ou.tsi_prefactor(t) * ou.phi(t) == doctest::Approx(1.0).epsilon(1e-13));
        CHECK(vp.tsi_prefactor(t) * vp.phi(t) == doctest::Approx(1.0).epsilon(1e-13));
        CHECK(ve.tsi_prefactor(t) * ve.phi(t) == doctest::Approx(1.0).epsilon(1e-13));
    }
}

TEST_CASE("forward_sample: deterministic cases") {
    const AffineKernel ou = AffineKernel::ou(2);
    const Vec x0{1.0, 0.0};
    const Vec zero{0.0, 0.0};
    const Vec z{0.3, -0.7};

    const Vec at0 = ou.forward_sample(x0, 0.0, z);
    CHECK(at0[0] == doctest::Approx(1.0));
    CHECK(at0[1] == doctest::Approx(0.0));

    const Vec half = ou.forward_sample(x0, std::log(2.0), zero);
    CHECK(half[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(half[1] == 0.0);

    const Vec origin{0.0, 0.0};
    const Vec late = ou.forward_sample(origin, 40.0, z);
    CHECK(late[0] == doctest::Approx(z[0]).epsilon(1e-12));
    CHECK(late[1] == doctest::Approx(z[1]).epsilon(1e-12));

    const Vec bad{1.0};
    CHECK_THROWS_AS(ou.forward_sample(bad, 1.0, z), std::invalid_argument);
}

TEST_CASE("log_transition_density: normalized Gaussian values") {
    const AffineKernel ou1 = AffineKernel::ou(1);
    // Zero exponent: y = e^{-t} x0.
    const double t = 0.8;
    const Vec x0{1.7};
    const Vec y{std::exp(-t) * 1.7};
    const double var = ou1.noise_variance(t);
    CHECK(ou1.log_transition_density(y, x0, t) ==
          doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi * var)).epsilon(1e-13));

    // d=1, sigma_t^2 = 1 (large t), y=1, x0=0.
    const Vec one{1.0}, zero{0.0};
    CHECK(ou1.log_transition_density(one, zero, 30.0) ==
          doctest::Approx(-0.5 - 0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-12));

    // d=2, sigma_t^2 = 0.5, y=(1,1), x0=0: hand evaluation gives -2 - log(pi).
    const AffineKernel ou2 = AffineKernel::ou(2);
    const Vec y2{1.0, 1.0}, x2{0.0, 0.0};
    CHECK(ou2.log_transition_density(y2, x2, 0.5 * std::log(2.0)) ==
          doctest::Approx(-2.0 - std::log(std::numbers::pi)).epsilon(1e-13));

    CHECK_THROWS_AS(ou1.log_transition_density(one, zero, 0.0), std::invalid_argument);
}

TEST_CASE("schedule validation") {
    CHECK_THROWS_AS(AffineKernel::vp(1, Schedule{{0.5}, {1.0}}), std::invalid_argument);
    CHECK_THROWS_AS(AffineKernel::vp(1, Schedule{{0.0, 0.0}, {1.0, 2.0}}),
                    std::invalid_argument);
    CHECK_THROWS_AS(AffineKernel::ve(1, Schedule{{0.0}, {-1.0}}), std::invalid_argument);
    // Piecewise integral: beta = 1 on [0,1), 3 afterwards.
    const AffineKernel vp = AffineKernel::vp(1, Schedule{{0.0, 1.0}, {1.0, 3.0}});
    CHECK(vp.phi(2.0) == doctest::Approx(std::exp(-0.5 * 4.0)).epsilon(1e-14));
}

// Gradient-semigroup consistency on a discretized 1-D density: the
// numerical gradient of log of the convolved density equals e^t times the
// posterior-weighted average of the initial score, up to quadrature error.
TEST_CASE("gradient-semigroup commutation on a quadrature grid") {
    const AffineKernel ou = AffineKernel::ou(1);
    const double t = 0.35;
    const double f = ou.phi(t);
    const double var = ou.noise_variance(t);

    // Bimodal initial density.
    auto p0 = [](double x) {
        const double a = std::exp(-0.5 * (x - 1.2) * (x - 1.2));
        const double b = std::exp(-0.5 * (x + 0.8) * (x + 0.8) / 0.49) / 0.7;
        return 0.6 * a + 0.4 * b;
    };
    auto s0 = [&](double x) {
        const double h = 1e-6;
        return (std::log(p0(x + h)) - std::log(p0(x - h))) / (2.0 * h);
    };

    const double lo = -9.0, hi = 9.0, dx = 1e-3;
    auto p_t = [&](double y) {
        double acc = 0.0;
        for (double x = lo; x <= hi; x += dx)
            acc += std::exp(-0.5 * (y - f * x) * (y - f * x) / var) * p0(x);
        return acc;  // common constants cancel in the log-gradient
    };

    for (double y : {-0.9, 0.1, 1.4}) {
        const double h = 1e-4;
        const double lhs = (std::log(p_t(y + h)) - std::log(p_t(y - h))) / (2.0 * h);

        double wsum = 0.0, acc = 0.0;
        for (double x = lo; x <= hi; x += dx) {
            const double w = std::exp(-0.5 * (y - f * x) * (y - f * x) / var) * p0(x);
            wsum += w;
            acc += w * s0(x);
        }
        const double rhs = ou.tsi_prefactor(t) * acc / wsum;
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
    }
}
