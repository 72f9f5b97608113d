#include "blendscore/diffusion.hpp"

#include <cmath>
#include <numbers>

namespace blendscore {

void Schedule::validate() const {
    if (breakpoints.empty() || breakpoints.size() != values.size())
        throw std::invalid_argument("Schedule: breakpoints/values size mismatch");
    if (breakpoints.front() != 0.0)
        throw std::invalid_argument("Schedule: first breakpoint must be 0");
    for (std::size_t k = 1; k < breakpoints.size(); ++k)
        if (!(breakpoints[k] > breakpoints[k - 1]))
            throw std::invalid_argument("Schedule: breakpoints must be strictly increasing");
    for (double v : values)
        if (!(v > 0.0)) throw std::invalid_argument("Schedule: values must be positive");
}

namespace {
template <typename F>
double segment_integral(const Schedule& s, double t, F&& per_value) {
    double acc = 0.0;
    for (std::size_t k = 0; k < s.values.size(); ++k) {
        const double lo = s.breakpoints[k];
        if (lo >= t) break;
        const double hi =
            (k + 1 < s.breakpoints.size()) ? std::min(s.breakpoints[k + 1], t) : t;
        acc += per_value(s.values[k]) * (hi - lo);
    }
    return acc;
}
}  // namespace

double Schedule::integral(double t) const {
    return segment_integral(*this, t, [](double v) { return v; });
}

double Schedule::integral_squared(double t) const {
    return segment_integral(*this, t, [](double v) { return v * v; });
}

AffineKernel AffineKernel::ou(std::size_t dim) {
    return AffineKernel(KernelVariant::OU, dim, Schedule{});
}

AffineKernel AffineKernel::vp(std::size_t dim, Schedule beta) {
    beta.validate();
    return AffineKernel(KernelVariant::VP, dim, std::move(beta));
}

AffineKernel AffineKernel::ve(std::size_t dim, Schedule g) {
    g.validate();
    return AffineKernel(KernelVariant::VE, dim, std::move(g));
}

namespace {
void require_nonnegative_time(double t) {
    if (!(t >= 0.0)) throw std::invalid_argument("AffineKernel: t must be nonnegative");
}
}  // namespace

double AffineKernel::phi(double t) const {
    require_nonnegative_time(t);
    switch (variant_) {
        case KernelVariant::OU: return std::exp(-t);
        case KernelVariant::VP: return std::exp(-0.5 * schedule_.integral(t));
        case KernelVariant::VE: return 1.0;
    }
    return 1.0;
}

double AffineKernel::noise_variance(double t) const {
    require_nonnegative_time(t);
    switch (variant_) {
        case KernelVariant::OU: return -std::expm1(-2.0 * t);
        case KernelVariant::VP: {
            const double a = phi(t);
            return 1.0 - a * a;
        }
        case KernelVariant::VE: return schedule_.integral_squared(t);
    }
    return 0.0;
}

double AffineKernel::tsi_prefactor(double t) const {
    require_nonnegative_time(t);
    switch (variant_) {
        case KernelVariant::OU: return std::exp(t);
        case KernelVariant::VP: return std::exp(0.5 * schedule_.integral(t));
        case KernelVariant::VE: return 1.0;
    }
    return 1.0;
}

Vec AffineKernel::forward_sample(std::span<const double> x0, double t,
                                 std::span<const double> noise) const {
    check_dim(x0.size(), dim_, "forward_sample x0");
    check_dim(noise.size(), dim_, "forward_sample noise");
    const double f = phi(t);
    const double sigma = std::sqrt(noise_variance(t));
    Vec out(dim_);
    for (std::size_t l = 0; l < dim_; ++l) out[l] = f * x0[l] + sigma * noise[l];
    return out;
}

double AffineKernel::log_transition_density(std::span<const double> y,
                                            std::span<const double> x0, double t) const {
    check_dim(y.size(), dim_, "log_transition_density y");
    check_dim(x0.size(), dim_, "log_transition_density x0");
    if (!(t > 0.0))
        throw std::invalid_argument("log_transition_density: t must be positive (kernel degenerate at t=0)");
    const double f = phi(t);
    const double var = noise_variance(t);
    double sq = 0.0;
    for (std::size_t l = 0; l < dim_; ++l) {
        const double diff = y[l] - f * x0[l];
        sq += diff * diff;
    }
    const double d = static_cast<double>(dim_);
    return -0.5 * d * std::log(2.0 * std::numbers::pi * var) - 0.5 * sq / var;
}

}  // namespace blendscore
