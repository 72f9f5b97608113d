#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "blendscore/rng.hpp"
#include "blendscore/snis.hpp"

using namespace blendscore;

namespace {

ReferenceBank bank_from_points(std::vector<Vec> rows) {
    ReferenceBank bank;
    bank.points = Matrix(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) bank.points.set_row(i, rows[i]);
    return bank;
}

}  // namespace

TEST_CASE("prior_weights: degenerate, symmetric, hand-computed") {
    const AffineKernel ou = AffineKernel::ou(1);

    const ReferenceBank single = bank_from_points({{0.7}});
    const WeightSet ws1 = prior_weights(single, ou, Vec{0.3}, 0.5);
    CHECK(ws1.w[0] == 1.0);
    CHECK(ws1.ess == doctest::Approx(1.0));

    // Two equidistant particles.
    const ReferenceBank pair = bank_from_points({{-1.0}, {1.0}});
    const WeightSet ws2 = prior_weights(pair, ou, Vec{0.0}, 0.7);
    CHECK(ws2.w[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(ws2.w[1] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(ws2.ess == doctest::Approx(2.0).epsilon(1e-14));

    // d=1, sigma_t^2 ~= 1 at large t, particles {0, 2 e^t}: the second sits
    // exactly two noise sigmas from y=0, so w1 = 1/(1+e^{-2}).
    const double t = 18.0;
    const ReferenceBank two = bank_from_points({{0.0}, {2.0 * std::exp(t)}});
    const WeightSet ws3 = prior_weights(two, ou, Vec{0.0}, t);
    CHECK(ws3.w[0] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-9));

    CHECK_THROWS_AS(prior_weights(pair, ou, Vec{0.0}, 0.0), std::invalid_argument);
    const Vec inf_query{std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS(prior_weights(pair, ou, inf_query, 0.5), std::runtime_error);
}

TEST_CASE("posterior_weights: tilting behavior") {
    const AffineKernel ou = AffineKernel::ou(1);
    ReferenceBank bank = bank_from_points({{-0.5}, {0.1}, {0.9}});
    const Vec y{0.2};
    const double t = 0.4;

    // Constant likelihood reproduces prior weights bit for bit.
    const WeightSet prior = prior_weights(bank, ou, y, t);
    bank.log_likelihoods = Vec{-3.7, -3.7, -3.7};
    const WeightSet tilted = posterior_weights(bank, ou, y, t);
    for (int i = 0; i < 3; ++i) CHECK(tilted.w[i] == prior.w[i]);
    CHECK(tilted.ess == prior.ess);

    // An impossible particle gets weight zero.
    bank.log_likelihoods = Vec{-1.0, -std::numeric_limits<double>::infinity(), -2.0};
    const WeightSet with_zero = posterior_weights(bank, ou, y, t);
    CHECK(with_zero.w[1] == 0.0);
    CHECK(with_zero.w[0] + with_zero.w[2] == doctest::Approx(1.0).epsilon(1e-15));

    // Brute-force ratio of the tilted weights.
    bank.log_likelihoods = Vec{-0.3, -1.1, -0.6};
    const WeightSet ws = posterior_weights(bank, ou, y, t);
    Vec direct(3);
    double total = 0.0;
    for (int i = 0; i < 3; ++i) {
        direct[i] = std::exp(ou.log_transition_density(y, bank.points.row(i), t) +
                             (*bank.log_likelihoods)[i]);
        total += direct[i];
    }
    for (int i = 0; i < 3; ++i)
        CHECK(ws.w[i] == doctest::Approx(direct[i] / total).epsilon(1e-12));

    ReferenceBank no_lik = bank_from_points({{0.0}});
    CHECK_THROWS_AS(posterior_weights(no_lik, ou, y, t), std::invalid_argument);
}

TEST_CASE("snis_normalize: shift invariance, bitwise on exact inputs") {
    // Dyadic log-weights so adding +-500 is exact in binary floating point.
    Vec base{-1.5, -2.25, 0.5, -0.125, -3.0};
    const WeightSet ref = snis_normalize(base);
    for (double shift : {500.0, -500.0, 256.0}) {
        Vec shifted = base;
        for (double& v : shifted) v += shift;
        const WeightSet ws = snis_normalize(shifted);
        for (std::size_t i = 0; i < base.size(); ++i) CHECK(ws.w[i] == ref.w[i]);
        CHECK(ws.ess == ref.ess);
        CHECK(ws.log_normalizer == doctest::Approx(ref.log_normalizer + shift).epsilon(1e-12));
    }
}

TEST_CASE("ess: pinned values and range invariant") {
    const WeightSet uniform = snis_normalize(Vec(8, 0.0));
    CHECK(ess(uniform) == doctest::Approx(8.0).epsilon(1e-14));

    const WeightSet one_hot = snis_normalize(Vec{0.0, -2000.0, -2000.0});
    CHECK(ess(one_hot) == doctest::Approx(1.0));

    const WeightSet mixed =
        snis_normalize(Vec{std::log(0.5), std::log(0.25), std::log(0.25)});
    CHECK(ess(mixed) == doctest::Approx(1.0 / 0.375).epsilon(1e-13));

    Rng rng(4);
    for (int rep = 0; rep < 50; ++rep) {
        Vec lw(17);
        for (auto& v : lw) v = 3.0 * rng.normal();
        const WeightSet ws = snis_normalize(lw);
        CHECK(ws.ess >= 1.0 - 1e-12);
        CHECK(ws.ess <= 17.0 + 1e-9);
    }
}

TEST_CASE("snis_mean: pinned values") {
    Matrix values(2, 1);
    values(0, 0) = 0.0;
    values(1, 0) = 4.0;
    const WeightSet ws = snis_normalize(Vec{std::log(0.75), std::log(0.25)});
    CHECK(snis_mean(ws, values)[0] == doctest::Approx(1.0).epsilon(1e-13));

    Matrix rows(3, 2);
    rows(0, 0) = 1; rows(0, 1) = 2;
    rows(1, 0) = 3; rows(1, 1) = 4;
    rows(2, 0) = 5; rows(2, 1) = 6;
    const WeightSet uniform = snis_normalize(Vec(3, 0.0));
    const Vec m = snis_mean(uniform, rows);
    CHECK(m[0] == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(m[1] == doctest::Approx(4.0).epsilon(1e-14));

    const WeightSet hot = snis_normalize(Vec{-4000.0, 0.0, -4000.0});
    const Vec h = snis_mean(hot, rows);
    CHECK(h[0] == 3.0);
    CHECK(h[1] == 4.0);
}

TEST_CASE("plugin_moments: degenerate arms, anticorrelation, brute force") {
    const WeightSet ws = snis_normalize(Vec{0.0, -0.3, -0.9, -0.2});
    Matrix a(4, 2), b(4, 2);
    // Constant a rows: zero variance in that arm.
    for (int i = 0; i < 4; ++i) {
        a(i, 0) = 2.0;
        a(i, 1) = -1.0;
        b(i, 0) = i;
        b(i, 1) = 0.5 * i;
    }
    const PluginMoments zero_arm = plugin_moments(ws, a, b);
    CHECK(zero_arm.sigma_c2 == doctest::Approx(0.0));
    CHECK(zero_arm.cov == doctest::Approx(0.0));
    CHECK(zero_arm.sigma_t2 > 0.0);

    // b = -a: perfectly anticorrelated arms.
    Rng rng(8);
    for (int i = 0; i < 4; ++i)
        for (int l = 0; l < 2; ++l) {
            a(i, l) = rng.normal();
            b(i, l) = -a(i, l);
        }
    const PluginMoments anti = plugin_moments(ws, a, b);
    CHECK(anti.cov == doctest::Approx(-anti.sigma_c2).epsilon(1e-12));
    CHECK(anti.sigma_t2 == doctest::Approx(anti.sigma_c2).epsilon(1e-12));

    // Brute-force oracle on a random instance.
    for (int i = 0; i < 4; ++i)
        for (int l = 0; l < 2; ++l) {
            a(i, l) = rng.normal();
            b(i, l) = rng.normal();
        }
    const PluginMoments pm = plugin_moments(ws, a, b);
    double sum_sq = 0.0;
    Vec mean_a(2, 0.0), mean_b(2, 0.0);
    for (int i = 0; i < 4; ++i) {
        sum_sq += ws.w[i] * ws.w[i];
        for (int l = 0; l < 2; ++l) {
            mean_a[l] += ws.w[i] * a(i, l);
            mean_b[l] += ws.w[i] * b(i, l);
        }
    }
    double saa = 0, sbb = 0, sab = 0;
    for (int i = 0; i < 4; ++i)
        for (int l = 0; l < 2; ++l) {
            const double da = a(i, l) - mean_a[l];
            const double db = b(i, l) - mean_b[l];
            saa += ws.w[i] * ws.w[i] * da * da;
            sbb += ws.w[i] * ws.w[i] * db * db;
            sab += ws.w[i] * ws.w[i] * da * db;
        }
    CHECK(pm.sigma_c2 == doctest::Approx(saa / (1 - sum_sq)).epsilon(1e-12));
    CHECK(pm.sigma_t2 == doctest::Approx(sbb / (1 - sum_sq)).epsilon(1e-12));
    CHECK(pm.cov == doctest::Approx(sab / (1 - sum_sq)).epsilon(1e-12));

    // Cauchy-Schwarz on random inputs.
    for (int rep = 0; rep < 100; ++rep) {
        Vec lw(6);
        for (auto& v : lw) v = rng.normal();
        const WeightSet w6 = snis_normalize(lw);
        Matrix ra(6, 3), rb(6, 3);
        for (int i = 0; i < 6; ++i)
            for (int l = 0; l < 3; ++l) {
                ra(i, l) = rng.normal();
                rb(i, l) = rng.normal();
            }
        const PluginMoments m = plugin_moments(w6, ra, rb);
        CHECK(std::abs(m.cov) <=
              std::sqrt(m.sigma_t2 * m.sigma_c2) * (1.0 + 1e-10) + 1e-14);
    }

    // ESS collapse signals an error.
    const WeightSet collapsed = snis_normalize(Vec{0.0, -5000.0, -5000.0, -5000.0});
    CHECK_THROWS_AS(plugin_moments(collapsed, a, b), std::domain_error);
}

TEST_CASE("median_of_means: single batch, outlier robustness, sort oracle") {
    const std::vector<Vec> single{{1.5, -2.0}};
    CHECK(median_of_means(single) == single[0]);

    const std::vector<Vec> three{{1.0, 10.0}, {1.2, 11.0}, {900.0, -500.0}};
    const Vec med = median_of_means(three);
    CHECK(med[0] == doctest::Approx(1.2));
    CHECK(med[1] == doctest::Approx(10.0));

    Rng rng(13);
    std::vector<Vec> five(5, Vec(3));
    for (auto& v : five)
        for (auto& x : v) x = rng.normal();
    const Vec m5 = median_of_means(five);
    for (int l = 0; l < 3; ++l) {
        Vec col(5);
        for (int k = 0; k < 5; ++k) col[k] = five[k][l];
        std::sort(col.begin(), col.end());
        CHECK(m5[l] == col[2]);
    }
}

TEST_CASE("split_bank: deterministic partition covering the bank") {
    ReferenceBank bank;
    bank.points = Matrix(10, 2);
    for (int i = 0; i < 10; ++i) {
        bank.points(i, 0) = i;
        bank.points(i, 1) = -i;
    }
    bank.log_likelihoods = Vec(10);
    for (int i = 0; i < 10; ++i) (*bank.log_likelihoods)[i] = 0.1 * i;

    const auto parts = split_bank(bank, 3, 77);
    const auto parts2 = split_bank(bank, 3, 77);
    std::size_t total = 0;
    std::vector<int> seen(10, 0);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        total += parts[k].size();
        for (std::size_t i = 0; i < parts[k].size(); ++i) {
            seen[static_cast<int>(parts[k].points(i, 0))]++;
            CHECK(parts[k].points(i, 0) == parts2[k].points(i, 0));
            CHECK((*parts[k].log_likelihoods)[i] ==
                  doctest::Approx(0.1 * parts[k].points(i, 0)));
        }
    }
    CHECK(total == 10);
    for (int c : seen) CHECK(c == 1);

    CHECK_THROWS_AS(split_bank(bank, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(split_bank(bank, 11, 1), std::invalid_argument);
}
