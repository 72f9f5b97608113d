#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace blendscore {

// Counter-style generator built on splitmix64. Substreams are derived by
// hashing (seed, ids...) so per-particle / per-step streams are identical no
// matter how work is split across threads. std::mt19937 has no cheap
// substream derivation and std::normal_distribution's consumption order is
// implementation defined, which would break the bitwise reproducibility the
// samplers promise; this generator is fully pinned down instead.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; pairs are generated eagerly and the
    // spare is cached so consumption order is deterministic.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    std::vector<double> normal_vec(std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = normal();
        return v;
    }

    void fill_normal(std::span<double> out) {
        for (auto& x : out) x = normal();
    }

    // Index of one categorical draw given cumulative-sum-free weights that
    // sum to 1 (small K, linear scan).
    std::size_t categorical(std::span<const double> probs) {
        const double u = uniform();
        double acc = 0.0;
        for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
            acc += probs[k];
            if (u < acc) return k;
        }
        return probs.empty() ? 0 : probs.size() - 1;
    }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Derive a substream for (seed, id0, id1, ...); order of ids matters.
inline Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t h = Rng::mix(seed + 0x9e3779b97f4a7c15ULL);
    for (std::uint64_t id : ids) h = Rng::mix(h ^ Rng::mix(id + 0x165667b19e3779f9ULL));
    return Rng(h);
}

}  // namespace blendscore
