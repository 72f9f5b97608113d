#include "blendscore/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>

#include <json.hpp>

#include "blendscore/parallel.hpp"

namespace blendscore {

using nlohmann::json;

Experiment experiment_from_string(const std::string& name) {
    if (name == "prior_sampling") return Experiment::PriorSampling;
    if (name == "posterior_sampling") return Experiment::PosteriorSampling;
    if (name == "correlation_curve") return Experiment::CorrelationCurve;
    if (name == "variance_profile") return Experiment::VarianceProfile;
    if (name == "regime_sweep") return Experiment::RegimeSweep;
    if (name == "rmse_vs_nref") return Experiment::RmseVsNref;
    throw std::invalid_argument("unknown experiment: " + name);
}

std::string to_string(Experiment e) {
    switch (e) {
        case Experiment::PriorSampling: return "prior_sampling";
        case Experiment::PosteriorSampling: return "posterior_sampling";
        case Experiment::CorrelationCurve: return "correlation_curve";
        case Experiment::VarianceProfile: return "variance_profile";
        case Experiment::RegimeSweep: return "regime_sweep";
        case Experiment::RmseVsNref: return "rmse_vs_nref";
    }
    return "?";
}

GridConfig GridConfig::preset(const std::string& name) {
    // Two grid settings ship as named presets: the main-text grid and the
    // wider regime-sweep grid.
    if (name == "main") return GridConfig{5e-4, 1.5, 30, GridSpacing::Log};
    if (name == "sweep") return GridConfig{3e-4, 2.5, 30, GridSpacing::Log};
    throw std::invalid_argument("unknown grid preset: " + name);
}

namespace {

ProxyKind proxy_kind_from_string(const std::string& s) {
    if (s == "diag") return ProxyKind::Diag;
    if (s == "lrd") return ProxyKind::LowRankDiag;
    throw std::invalid_argument("unknown proxy kind: " + s);
}

std::string to_string(ProxyKind k) {
    return k == ProxyKind::Diag ? "diag" : "lrd";
}

}  // namespace

HarnessConfig config_from_json(const std::string& text) {
    const json j = json::parse(text);
    HarnessConfig c;
    if (j.contains("experiment")) c.experiment = experiment_from_string(j["experiment"]);
    c.target = j.value("target", c.target);
    c.preset_seed = j.value("preset_seed", c.preset_seed);
    if (j.contains("grid")) {
        const auto& g = j["grid"];
        if (g.is_string()) {
            c.grid = GridConfig::preset(g.get<std::string>());
        } else {
            if (g.contains("preset")) c.grid = GridConfig::preset(g["preset"]);
            c.grid.t_min = g.value("t_min", c.grid.t_min);
            c.grid.t_max = g.value("t_max", c.grid.t_max);
            c.grid.steps = g.value("steps", c.grid.steps);
            if (g.contains("spacing"))
                c.grid.spacing = g["spacing"] == "linear" ? GridSpacing::Linear
                                                          : GridSpacing::Log;
        }
    }
    c.n_particles = j.value("n_particles", c.n_particles);
    if (j.contains("estimators"))
        c.estimators = j["estimators"].get<std::vector<std::string>>();
    if (j.contains("metrics"))
        c.metric_names = j["metrics"].get<std::vector<std::string>>();
    if (j.contains("n_ref")) {
        if (j["n_ref"].is_array())
            c.n_ref_schedule = j["n_ref"].get<std::vector<std::size_t>>();
        else
            c.n_ref_schedule = {j["n_ref"].get<std::size_t>()};
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("proxy")) {
        const auto& p = j["proxy"];
        c.proxy.k = p.value("k", c.proxy.k);
        if (p.contains("kind")) c.proxy.kind = proxy_kind_from_string(p["kind"]);
        c.proxy.rank = p.value("rank", c.proxy.rank);
        c.proxy.ridge_gamma = p.value("ridge_gamma", c.proxy.ridge_gamma);
        c.proxy.tail_floor_gamma = p.value("tail_floor_gamma", c.proxy.tail_floor_gamma);
        c.proxy.k_mix = p.value("k_mix", c.proxy.k_mix);
    }
    c.mom_batches = j.value("mom_batches", c.mom_batches);
    if (j.contains("dims")) c.dims = j["dims"].get<std::vector<std::size_t>>();
    if (j.contains("sigma_rels")) c.sigma_rels = j["sigma_rels"].get<Vec>();
    c.sigma_rel = j.value("sigma_rel", c.sigma_rel);
    c.signal_scale_samples = j.value("signal_scale_samples", c.signal_scale_samples);
    c.n_eval = j.value("n_eval", c.n_eval);
    c.n_queries = j.value("n_queries", c.n_queries);
    c.n_batches = j.value("n_batches", c.n_batches);
    c.n_metric_samples = j.value("n_metric_samples", c.n_metric_samples);
    if (j.contains("mala")) {
        const auto& m = j["mala"];
        c.mala.n_iters = m.value("n_iters", c.mala.n_iters);
        c.mala.burn_in = m.value("burn_in", c.mala.burn_in);
        c.mala.step_size = m.value("step_size", c.mala.step_size);
        c.mala.adapt = m.value("adapt", c.mala.adapt);
        c.mala.target_accept = m.value("target_accept", c.mala.target_accept);
    }
    c.mmd_kernel = j.value("mmd_kernel", c.mmd_kernel);
    c.ess_floor_fraction = j.value("ess_floor_fraction", c.ess_floor_fraction);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.paper_scale = j.value("paper_scale", c.paper_scale);
    c.n_threads = j.value("n_threads", c.n_threads);

    if (c.paper_scale) {
        // Paper-budget settings; desk-scale defaults stay CI-friendly.
        switch (c.experiment) {
            case Experiment::RegimeSweep: {
                c.dims = {3, 6, 12, 24};
                c.sigma_rels.clear();
                for (int i = 0; i < 24; ++i)
                    c.sigma_rels.push_back(
                        0.025 * std::pow(1.0 / 0.025, i / 23.0));
                c.n_ref_schedule = {4000};
                c.grid = GridConfig::preset("sweep");
                break;
            }
            case Experiment::PriorSampling:
            case Experiment::RmseVsNref:
                c.n_ref_schedule = {500, 1000, 2000, 4000, 8000, 16000};
                c.n_particles = 4000;
                break;
            default: break;
        }
    }
    if (c.seeds.empty()) throw std::invalid_argument("config: seeds must be nonempty");
    return c;
}

std::string config_to_json(const HarnessConfig& c) {
    json j;
    j["experiment"] = to_string(c.experiment);
    j["target"] = c.target;
    j["preset_seed"] = c.preset_seed;
    j["grid"] = {{"t_min", c.grid.t_min},
                 {"t_max", c.grid.t_max},
                 {"steps", c.grid.steps},
                 {"spacing", c.grid.spacing == GridSpacing::Log ? "log" : "linear"}};
    j["n_particles"] = c.n_particles;
    j["estimators"] = c.estimators;
    j["metrics"] = c.metric_names;
    j["n_ref"] = c.n_ref_schedule;
    j["seeds"] = c.seeds;
    j["proxy"] = {{"k", c.proxy.k},
                  {"kind", to_string(c.proxy.kind)},
                  {"rank", c.proxy.rank},
                  {"ridge_gamma", c.proxy.ridge_gamma},
                  {"tail_floor_gamma", c.proxy.tail_floor_gamma},
                  {"k_mix", c.proxy.k_mix}};
    j["mom_batches"] = c.mom_batches;
    j["dims"] = c.dims;
    j["sigma_rels"] = c.sigma_rels;
    j["sigma_rel"] = c.sigma_rel;
    j["signal_scale_samples"] = c.signal_scale_samples;
    j["n_eval"] = c.n_eval;
    j["n_queries"] = c.n_queries;
    j["n_batches"] = c.n_batches;
    j["n_metric_samples"] = c.n_metric_samples;
    j["mala"] = {{"n_iters", c.mala.n_iters},
                 {"burn_in", c.mala.burn_in},
                 {"step_size", c.mala.step_size},
                 {"adapt", c.mala.adapt},
                 {"target_accept", c.mala.target_accept}};
    j["mmd_kernel"] = c.mmd_kernel;
    j["ess_floor_fraction"] = c.ess_floor_fraction;
    j["out_dir"] = c.out_dir;
    j["paper_scale"] = c.paper_scale;
    return j.dump(2);
}

HarnessConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

std::string config_hash(const HarnessConfig& config) {
    const std::string text = config_to_json(config);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

GaussianMixture make_target(const std::string& name, std::uint64_t preset_seed) {
    auto parse_dim = [](const std::string& s, std::size_t prefix) {
        return static_cast<std::size_t>(std::stoul(s.substr(prefix)));
    };
    if (name.rfind("gauss", 0) == 0) {
        const std::size_t d = parse_dim(name, 5);
        return GaussianMixture(Vec{1.0},
                               {GaussianComponent{Vec(d, 0.0), Covariance::isotropic(d, 1.0)}});
    }
    if (name == "bimodal2") {
        // Two well-separated modes in the plane.
        return GaussianMixture(
            Vec{0.5, 0.5},
            {GaussianComponent{Vec{-1.5, 0.0}, Covariance::isotropic(2, 0.3)},
             GaussianComponent{Vec{1.5, 0.0}, Covariance::isotropic(2, 0.3)}});
    }
    if (name == "helix9") return helix_gmm(HelixGmmConfig{});
    if (name.rfind("spectral", 0) == 0) {
        SpectralGmmConfig cfg;
        cfg.dim = parse_dim(name, 8);
        cfg.seed = preset_seed;
        return spectral_gmm(cfg);
    }
    // Otherwise treat as a path to a mixture JSON document.
    std::ifstream in(name);
    if (!in) throw std::invalid_argument("unknown target preset or file: " + name);
    std::stringstream ss;
    ss << in.rdbuf();
    return mixture_from_json(ss.str());
}

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

EstimatorKind estimator_kind(const std::string& name) {
    if (name == "tweedie") return EstimatorKind::Tweedie;
    if (name == "tsi") return EstimatorKind::Tsi;
    if (name == "blend" || name == "blend_proxy") return EstimatorKind::Blend;
    throw std::invalid_argument("unknown estimator: " + name);
}

bool wants_metric(const HarnessConfig& c, const std::string& m) {
    return std::find(c.metric_names.begin(), c.metric_names.end(), m) !=
           c.metric_names.end();
}

// Exact-score reference bank drawn from the target.
ReferenceBank build_exact_bank(const GaussianMixture& target, std::size_t n_ref, Rng& rng) {
    ReferenceBank bank;
    bank.points = target.sample(n_ref, rng);
    bank.scores = Matrix(n_ref, target.dim());
    for (std::size_t i = 0; i < n_ref; ++i)
        bank.scores->set_row(i, target.score(bank.points.row(i)));
    return bank;
}

// Add the likelihood column and tilt the score column in place:
// s0^post(x) = s0(x) + grad log L(x).
void tilt_bank(ReferenceBank& bank, const LinearGaussianLikelihood& lik) {
    const std::size_t n = bank.size();
    Vec ll(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = bank.points.row(i);
        ll[i] = lik.log_likelihood(x);
        if (bank.scores) {
            const Vec g = lik.grad_log_likelihood(x);
            auto s = bank.scores->row(i);
            for (std::size_t l = 0; l < g.size(); ++l) s[l] += g[l];
        }
    }
    bank.log_likelihoods = std::move(ll);
}

KernelSpec build_mmd_kernel(const HarnessConfig& c, const Matrix& reference, Rng& rng) {
    if (c.mmd_kernel == "median")
        return KernelSpec::rbf(
            median_heuristic_bandwidths(reference, 1024, Vec{0.5, 1.0, 2.0}, rng));
    if (c.mmd_kernel == "spectral")
        return KernelSpec::rbf(
            Vec{0.5 * std::sqrt(static_cast<double>(reference.cols()) / 2.0)});
    return KernelSpec::rbf(Vec{std::stod(c.mmd_kernel)});
}

// Median-of-means estimate over pre-split bank blocks (B = 1 degenerates to
// the plain estimator). The reported ESS is the mean over blocks.
ScoreEstimate estimate_mom(const std::vector<ReferenceBank>& parts,
                           const AffineKernel& kernel, std::span<const double> y, double t,
                           EstimatorKind kind, WeightMode mode,
                           const EstimatorOptions& opts) {
    if (parts.size() == 1) return estimate_score(parts[0], kernel, y, t, kind, mode, opts);
    std::vector<Vec> batch;
    batch.reserve(parts.size());
    double ess_sum = 0.0;
    double lambda_sum = 0.0;
    bool collapsed = false;
    for (const auto& part : parts) {
        ScoreEstimate est = estimate_score(part, kernel, y, t, kind, mode, opts);
        ess_sum += est.ess;
        lambda_sum += est.lambda;
        collapsed = collapsed || est.ess_collapsed;
        batch.push_back(std::move(est.score));
    }
    ScoreEstimate out;
    out.score = median_of_means(batch);
    out.ess = ess_sum / static_cast<double>(parts.size());
    out.lambda = lambda_sum / static_cast<double>(parts.size());
    out.ess_collapsed = collapsed;
    return out;
}

struct CellSink {
    std::mutex mutex;
    std::vector<MetricCell> table;
    std::vector<CurveRow> curves;
    std::atomic<std::uint64_t> nfe{0};
    std::atomic<std::size_t> completed{0};

    void push(std::vector<MetricCell> cells, std::vector<CurveRow> rows = {}) {
        std::lock_guard lock(mutex);
        for (auto& c : cells) table.push_back(std::move(c));
        for (auto& r : rows) curves.push_back(std::move(r));
    }
};

void run_prior_sampling(const HarnessConfig& c, CellSink& sink) {
    const GaussianMixture target = make_target(c.target, c.preset_seed);
    const AffineKernel kernel = AffineKernel::ou(target.dim());
    const TimeGrid grid = c.grid.build();
    const bool rmse_only = c.experiment == Experiment::RmseVsNref;
    const std::size_t n_metric = c.n_metric_samples ? c.n_metric_samples : c.n_particles;

    struct Cell {
        std::uint64_t seed;
        std::size_t n_ref;
    };
    std::vector<Cell> cells;
    for (auto seed : c.seeds)
        for (auto n_ref : c.n_ref_schedule) cells.push_back({seed, n_ref});

    parallel_for(cells.size(), [&](std::size_t ci) {
        const auto [seed, n_ref] = cells[ci];
        Rng bank_rng = substream(seed, {0xba17u, n_ref});
        ReferenceBank exact_bank = build_exact_bank(target, n_ref, bank_rng);

        const bool needs_proxy =
            std::find(c.estimators.begin(), c.estimators.end(), "blend_proxy") !=
            c.estimators.end();
        ReferenceBank proxy_bank;
        if (needs_proxy) {
            ProxyConfig pc = c.proxy;
            pc.k = std::min(pc.k, n_ref - 1);
            pc.n_threads = 1;  // cells already run in parallel
            proxy_bank = bank_with_proxy(exact_bank.points, pc);
        }

        Rng metric_rng = substream(seed, {0xe7a1u, n_ref});
        Matrix exact_draws;
        KernelSpec mmd_spec = KernelSpec::rbf(Vec{1.0});
        if (!rmse_only) {
            exact_draws = target.sample(n_metric, metric_rng);
            mmd_spec = build_mmd_kernel(c, exact_draws, metric_rng);
        }
        const EstimatorOptions opts{c.ess_floor_fraction};
        const double tau_ess = c.ess_floor_fraction * static_cast<double>(n_ref);

        for (const auto& name : c.estimators) {
            const ReferenceBank& bank = name == "blend_proxy" ? proxy_bank : exact_bank;
            const EstimatorKind kind = estimator_kind(name);
            std::vector<ReferenceBank> parts;
            if (c.mom_batches > 1)
                parts = split_bank(bank, c.mom_batches, seed);
            else
                parts.push_back(bank);

            std::vector<MetricCell> rows;
            auto emit = [&](const std::string& metric, double value, bool dropped) {
                rows.push_back(MetricCell{name, n_ref, seed, target.dim(), kNan, metric,
                                          value, dropped});
            };

            if (!rmse_only && (wants_metric(c, "mmd") || wants_metric(c, "ksd"))) {
                SamplerConfig sc;
                sc.n_particles = c.n_particles;
                sc.grid = grid;
                sc.kind = kind;
                sc.mode = WeightMode::Prior;
                sc.seed = seed;  // shared across estimators: paired comparison
                sc.estimator = opts;
                sc.n_threads = 1;
                const SampleResult run =
                    c.mom_batches > 1
                        ? sample_with_score(
                              [&](std::span<const double> y, double t) {
                                  return estimate_mom(parts, kernel, y, t, kind,
                                                      WeightMode::Prior, opts)
                                      .score;
                              },
                              target.dim(), sc)
                        : sample(bank, kernel, sc);
                sink.nfe.fetch_add(run.nfe);
                if (wants_metric(c, "mmd"))
                    emit("mmd2", mmd2(run.particles, exact_draws, mmd_spec), false);
                if (wants_metric(c, "ksd")) {
                    const PointScoreFn sfn = [&](std::span<const double> x) {
                        return target.score(x);
                    };
                    emit("ksd2", ksd2(run.particles, sfn, KernelSpec::imq()), false);
                }
            }

            if (wants_metric(c, "score_rmse") || rmse_only) {
                Rng rmse_rng = substream(seed, {0xa53eu, n_ref});
                const EstimateFn est_fn = [&](std::span<const double> y, double t) {
                    return estimate_mom(parts, kernel, y, t, kind, WeightMode::Prior, opts);
                };
                const ExactScoreFn exact_fn = [&](std::span<const double> y, double t) {
                    return target.diffused(kernel, t).score(y);
                };
                const MarginalSamplerFn draw_pt = [&](double t, std::size_t n, Rng& r) {
                    const Matrix x0 = target.sample(n, r);
                    Matrix out(n, target.dim());
                    Vec z(target.dim());
                    for (std::size_t i = 0; i < n; ++i) {
                        r.fill_normal(z);
                        out.set_row(i, kernel.forward_sample(x0.row(i), t, z));
                    }
                    return out;
                };
                try {
                    const double rmse = score_rmse(est_fn, exact_fn, draw_pt, grid, c.n_eval,
                                                   rmse_rng, TimeFilterOptions{tau_ess});
                    emit("score_rmse", rmse, false);
                } catch (const std::exception&) {
                    emit("score_rmse", kNan, true);  // all knots ESS-filtered
                }
            }
            sink.push(std::move(rows));
            sink.completed.fetch_add(1);
        }
    }, c.n_threads);
}

void run_regime_sweep(const HarnessConfig& c, CellSink& sink) {
    struct DimContext {
        GaussianMixture prior;
        Matrix op;
        double signal;
    };
    std::map<std::size_t, DimContext> per_dim;
    for (auto d : c.dims) {
        SpectralGmmConfig cfg;
        cfg.dim = d;
        cfg.seed = c.preset_seed;
        GaussianMixture prior = spectral_gmm(cfg);
        Matrix op = inverse_index_operator(d);
        Rng rng = substream(c.preset_seed, {0x516eu, d});
        const double signal = signal_scale(prior, op, c.signal_scale_samples, rng);
        per_dim.emplace(d, DimContext{std::move(prior), std::move(op), signal});
    }

    struct Cell {
        std::size_t dim;
        double sigma_rel;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (auto d : c.dims)
        for (double sr : c.sigma_rels)
            for (auto seed : c.seeds) cells.push_back({d, sr, seed});

    const std::size_t n_ref = c.n_ref_schedule.front();
    const std::size_t n_metric = c.n_metric_samples ? c.n_metric_samples : c.n_particles;
    const TimeGrid grid = c.grid.build();

    parallel_for(cells.size(), [&](std::size_t ci) {
        const auto& cell = cells[ci];
        const DimContext& ctx = per_dim.at(cell.dim);
        const double sigma_abs = cell.sigma_rel * ctx.signal;

        Rng rng = substream(cell.seed, {0x5feeu, cell.dim,
                                        static_cast<std::uint64_t>(cell.sigma_rel * 1e6)});
        const Matrix truth = ctx.prior.sample(1, rng);
        Vec y_obs = matvec(ctx.op, truth.row(0));
        for (double& v : y_obs) v += sigma_abs * rng.normal();
        const LinearGaussianLikelihood lik{ctx.op, sigma_abs, y_obs};
        const GaussianMixture posterior = conjugate_posterior(ctx.prior, lik);

        ReferenceBank bank = build_exact_bank(ctx.prior, n_ref, rng);
        tilt_bank(bank, lik);

        const Matrix exact_a = posterior.sample(n_metric, rng);
        const Matrix exact_b = posterior.sample(n_metric, rng);
        const KernelSpec kspec = KernelSpec::rbf(
            Vec{0.5 * std::sqrt(static_cast<double>(cell.dim) / 2.0)});

        std::vector<MetricCell> rows;
        double floor2 = 0.0;
        bool floor_ok = true;
        try {
            floor2 = mmd2(exact_a, exact_b, kspec);
            floor_ok = floor2 > 0.0;
        } catch (const std::exception&) {
            floor_ok = false;
        }

        const AffineKernel kernel = AffineKernel::ou(cell.dim);
        for (const auto& name : c.estimators) {
            SamplerConfig sc;
            sc.n_particles = c.n_particles;
            sc.grid = grid;
            sc.kind = estimator_kind(name);
            sc.mode = WeightMode::Posterior;
            sc.seed = cell.seed;
            sc.estimator = EstimatorOptions{c.ess_floor_fraction};
            sc.n_threads = 1;
            const SampleResult run = sample(bank, kernel, sc);
            sink.nfe.fetch_add(run.nfe);
            MetricCell row{name, n_ref, cell.seed, cell.dim, cell.sigma_rel,
                           "log_mmd_ratio", kNan, true};
            if (floor_ok) {
                const double gen2 = std::max(mmd2(run.particles, exact_a, kspec), 0.0);
                if (gen2 > 0.0) {
                    row.value = 0.5 * (std::log(gen2) - std::log(floor2));
                    row.dropped = false;
                }
            }
            rows.push_back(std::move(row));
        }
        sink.push(std::move(rows));
        sink.completed.fetch_add(1);
    }, c.n_threads);
}

void run_correlation_curve(const HarnessConfig& c, CellSink& sink) {
    const GaussianMixture target = make_target(c.target, c.preset_seed);
    const AffineKernel kernel = AffineKernel::ou(target.dim());
    const TimeGrid grid = c.grid.build();
    const std::size_t n_ref = c.n_ref_schedule.front();
    const double tau_ess = c.ess_floor_fraction * static_cast<double>(n_ref);

    for (auto seed : c.seeds) {
        for (const bool use_proxy : {false, true}) {
            const BankFactoryFn factory = [&](std::size_t batch) {
                Rng rng = substream(seed, {0xfac7u, batch});
                ReferenceBank bank = build_exact_bank(target, n_ref, rng);
                if (use_proxy) {
                    ProxyConfig pc = c.proxy;
                    pc.k = std::min(pc.k, n_ref - 1);
                    pc.n_threads = 1;
                    bank = bank_with_proxy(bank.points, pc);
                }
                return bank;
            };
            const auto curve = error_correlation_curve(factory, kernel, target, grid,
                                                       c.n_queries, c.n_batches, seed,
                                                       TimeFilterOptions{tau_ess});
            std::vector<CurveRow> rows;
            const std::string name =
                std::string(use_proxy ? "rho_proxy" : "rho_exact") + "_seed" +
                std::to_string(seed);
            for (const auto& p : curve)
                rows.push_back(CurveRow{name, p.t, p.rho, p.mean_ess, p.kept});
            sink.push({}, std::move(rows));
            sink.completed.fetch_add(1);
        }
    }
}

void run_variance_profile(const HarnessConfig& c, CellSink& sink) {
    const GaussianMixture target = make_target(c.target, c.preset_seed);
    const AffineKernel kernel = AffineKernel::ou(target.dim());
    const TimeGrid grid = c.grid.build();
    const std::size_t n_ref = c.n_ref_schedule.front();
    const std::uint64_t seed = c.seeds.front();

    std::vector<CurveRow> rows;
    for (double t : grid.knots) {
        const auto f = variance_time_factors(t);
        rows.push_back(CurveRow{"tsi_time_factor", t, f.tsi, kNan, true});
        rows.push_back(CurveRow{"tweedie_time_factor", t, f.tweedie, kNan, true});
    }

    // Crossover by bisection on the log-ratio of the two factors.
    double lo = 1e-6, hi = 5.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const auto f = variance_time_factors(mid);
        (std::log(f.tsi) - std::log(f.tweedie) > 0.0 ? hi : lo) = mid;
    }
    std::vector<MetricCell> table;
    table.push_back(MetricCell{"factors", 0, 0, target.dim(), kNan, "t_star",
                               0.5 * (lo + hi), false});

    // Empirical per-estimator error second moments on the Gaussian target.
    Rng rng = substream(seed, {0x7a9u, n_ref});
    ReferenceBank bank = build_exact_bank(target, n_ref, rng);
    const double tau_ess = c.ess_floor_fraction * static_cast<double>(n_ref);
    Vec z(target.dim());
    for (double t : grid.knots) {
        const GaussianMixture diffused = target.diffused(kernel, t);
        double sq_t = 0.0, sq_c = 0.0, ess_sum = 0.0;
        for (std::size_t q = 0; q < c.n_eval; ++q) {
            const Matrix x0 = target.sample(1, rng);
            rng.fill_normal(z);
            const Vec y = kernel.forward_sample(x0.row(0), t, z);
            const Vec s = diffused.score(y);
            const ScoreEstimate twd =
                estimate_score(bank, kernel, y, t, EstimatorKind::Tweedie, WeightMode::Prior);
            const ScoreEstimate tsi =
                estimate_score(bank, kernel, y, t, EstimatorKind::Tsi, WeightMode::Prior);
            for (std::size_t l = 0; l < s.size(); ++l) {
                sq_t += (twd.score[l] - s[l]) * (twd.score[l] - s[l]);
                sq_c += (tsi.score[l] - s[l]) * (tsi.score[l] - s[l]);
            }
            ess_sum += twd.ess;
        }
        const double mean_ess = ess_sum / static_cast<double>(c.n_eval);
        const bool kept = mean_ess >= tau_ess;
        rows.push_back(CurveRow{"var_tweedie_emp", t,
                                sq_t / static_cast<double>(c.n_eval), mean_ess, kept});
        rows.push_back(CurveRow{"var_tsi_emp", t, sq_c / static_cast<double>(c.n_eval),
                                mean_ess, kept});
    }
    sink.push(std::move(table), std::move(rows));
    sink.completed.fetch_add(1);
}

void run_posterior_sampling(const HarnessConfig& c, CellSink& sink) {
    const GaussianMixture prior = make_target(c.target, c.preset_seed);
    const std::size_t d = prior.dim();
    const AffineKernel kernel = AffineKernel::ou(d);
    const Matrix op = inverse_index_operator(d);
    Rng sig_rng = substream(c.preset_seed, {0x516eu, d});
    const double signal = signal_scale(prior, op, c.signal_scale_samples, sig_rng);
    const double sigma_abs = c.sigma_rel * signal;
    const std::size_t n_ref = c.n_ref_schedule.front();
    const std::size_t n_metric = c.n_metric_samples ? c.n_metric_samples : c.n_particles;
    const TimeGrid grid = c.grid.build();

    parallel_for(c.seeds.size(), [&](std::size_t si) {
        const std::uint64_t seed = c.seeds[si];
        Rng rng = substream(seed, {0xb0517u});
        const Matrix truth = prior.sample(1, rng);
        const Vec y_clean = matvec(op, truth.row(0));
        Vec y_obs = y_clean;
        for (double& v : y_obs) v += sigma_abs * rng.normal();
        const LinearGaussianLikelihood lik{op, sigma_abs, y_obs};
        const GaussianMixture posterior = conjugate_posterior(prior, lik);

        ReferenceBank bank = build_exact_bank(prior, n_ref, rng);
        tilt_bank(bank, lik);

        const Matrix exact_a = posterior.sample(n_metric, rng);
        const Matrix exact_b = posterior.sample(n_metric, rng);
        Rng kern_rng = substream(seed, {0x4e1u});
        const KernelSpec kspec = build_mmd_kernel(c, exact_a, kern_rng);
        const double floor2 = mmd2(exact_a, exact_b, kspec);

        // Reference MALA chain on the exact posterior.
        const LogDensityFn lp = [&](std::span<const double> x) {
            return posterior.log_density(x);
        };
        const GradFn gr = [&](std::span<const double> x) { return posterior.score(x); };
        Rng mala_rng = substream(seed, {0x3a1au});
        const Matrix init = prior.sample(1, mala_rng);
        const MalaResult mala = mala_sample(lp, gr, init.row(0), c.mala, mala_rng);
        // Thin the chain down to the metric sample budget.
        Matrix mala_draws(std::min<std::size_t>(n_metric, mala.chain.rows()), d);
        {
            const std::size_t stride =
                std::max<std::size_t>(1, mala.chain.rows() / mala_draws.rows());
            for (std::size_t i = 0; i < mala_draws.rows(); ++i)
                mala_draws.set_row(i, mala.chain.row(std::min(i * stride,
                                                              mala.chain.rows() - 1)));
        }

        const ForwardFn fwd = [&](std::span<const double> x) { return matvec(op, x); };
        auto run_method = [&](const std::string& name, const Matrix& draws,
                              std::vector<MetricCell>& rows) {
            auto emit = [&](const std::string& metric, double value, bool dropped = false) {
                rows.push_back(MetricCell{name, n_ref, seed, d, c.sigma_rel, metric, value,
                                          dropped});
            };
            emit("mmd2_exact", mmd2(draws, exact_a, kspec));
            if (floor2 > 0.0)
                emit("log_mmd_ratio",
                     0.5 * (std::log(std::max(mmd2(draws, exact_a, kspec), 1e-300)) -
                            std::log(floor2)));
            else
                emit("log_mmd_ratio", kNan, true);
            emit("mmd2_mala", mmd2(draws, mala_draws, kspec));
            emit("rmse_alpha", rmse_alpha(draws, truth.row(0)));
            Vec mean(d, 0.0);
            for (std::size_t i = 0; i < draws.rows(); ++i)
                for (std::size_t l = 0; l < d; ++l) mean[l] += draws(i, l);
            for (double& v : mean) v /= static_cast<double>(draws.rows());
            emit("fwd_err", forward_error(fwd, mean, y_clean));
        };

        std::vector<MetricCell> rows;
        for (const auto& name : c.estimators) {
            SamplerConfig sc;
            sc.n_particles = c.n_particles;
            sc.grid = grid;
            sc.kind = estimator_kind(name);
            sc.mode = WeightMode::Posterior;
            sc.seed = seed;
            sc.estimator = EstimatorOptions{c.ess_floor_fraction};
            sc.n_threads = 1;
            const SampleResult run = sample(bank, kernel, sc);
            sink.nfe.fetch_add(run.nfe);
            run_method(name, run.particles, rows);
        }
        run_method("mala", mala_draws, rows);
        sink.push(std::move(rows));
        sink.completed.fetch_add(1);
    }, c.n_threads);
}

}  // namespace

RunResult run_experiment(const HarnessConfig& config) {
    const auto start = std::chrono::steady_clock::now();
    RunResult result;
    result.hash = config_hash(config);
    result.experiment = config.experiment;

    CellSink sink;
    switch (config.experiment) {
        case Experiment::PriorSampling:
        case Experiment::RmseVsNref:
            result.cells_total =
                config.seeds.size() * config.n_ref_schedule.size() * config.estimators.size();
            run_prior_sampling(config, sink);
            break;
        case Experiment::RegimeSweep:
            result.cells_total =
                config.dims.size() * config.sigma_rels.size() * config.seeds.size();
            run_regime_sweep(config, sink);
            break;
        case Experiment::CorrelationCurve:
            result.cells_total = config.seeds.size() * 2;
            run_correlation_curve(config, sink);
            break;
        case Experiment::VarianceProfile:
            result.cells_total = 1;
            run_variance_profile(config, sink);
            break;
        case Experiment::PosteriorSampling:
            result.cells_total = config.seeds.size();
            run_posterior_sampling(config, sink);
            break;
    }

    result.table = std::move(sink.table);
    result.curves = std::move(sink.curves);
    result.nfe = sink.nfe.load();
    result.cells_completed = sink.completed.load();

    // Deterministic output order regardless of cell scheduling.
    std::sort(result.table.begin(), result.table.end(), [](const MetricCell& a,
                                                           const MetricCell& b) {
        return std::tie(a.method, a.n_ref, a.seed, a.dim, a.sigma_rel, a.metric) <
               std::tie(b.method, b.n_ref, b.seed, b.dim, b.sigma_rel, b.metric);
    });
    std::sort(result.curves.begin(), result.curves.end(),
              [](const CurveRow& a, const CurveRow& b) {
                  return std::tie(a.curve, a.t) < std::tie(b.curve, b.t);
              });

    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

const char* const kResultsCsvHeader =
    "experiment,method,n_ref,seed,dim,sigma_rel,metric,value,dropped";
const char* const kCurveCsvHeader = "t,value,ess_mean,kept";

std::string resolve_out_dir(const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::path p(out_dir);
    if (p.is_relative()) {
        if (const char* root = std::getenv("BLENDSCORE_OUT_ROOT")) p = fs::path(root) / p;
    }
    return p.string();
}

void write_outputs(const RunResult& result, const HarnessConfig& config) {
    namespace fs = std::filesystem;
    const fs::path dir = resolve_out_dir(config.out_dir);
    fs::create_directories(dir);

    {
        std::ofstream out(dir / "results.csv", std::ios::trunc);
        out << kResultsCsvHeader << "\n";
        for (const auto& cell : result.table) {
            out << to_string(result.experiment) << ',' << cell.method << ',' << cell.n_ref
                << ',' << cell.seed << ',' << cell.dim << ',';
            if (std::isnan(cell.sigma_rel))
                out << "";
            else
                out << cell.sigma_rel;
            out << ',' << cell.metric << ',';
            if (std::isnan(cell.value))
                out << "";
            else
                out << std::setprecision(17) << cell.value;
            out << ',' << (cell.dropped ? 1 : 0) << "\n";
        }
    }

    std::map<std::string, std::vector<const CurveRow*>> by_curve;
    for (const auto& row : result.curves) by_curve[row.curve].push_back(&row);
    for (const auto& [name, rows] : by_curve) {
        std::ofstream out(dir / ("curve_" + name + ".csv"), std::ios::trunc);
        out << kCurveCsvHeader << "\n";
        for (const CurveRow* row : rows) {
            out << std::setprecision(17) << row->t << ',';
            if (std::isnan(row->value))
                out << "";
            else
                out << row->value;
            out << ',';
            if (std::isnan(row->ess_mean))
                out << "";
            else
                out << row->ess_mean;
            out << ',' << (row->kept ? 1 : 0) << "\n";
        }
    }

    json manifest;
    manifest["config_hash"] = result.hash;
    manifest["experiment"] = to_string(result.experiment);
    manifest["wall_seconds"] = result.wall_seconds;
    manifest["nfe"] = result.nfe;
    manifest["cells_total"] = result.cells_total;
    manifest["cells_completed"] = result.cells_completed;
    manifest["schema_version"] = 1;
    manifest["config"] = json::parse(config_to_json(config));
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    mf << manifest.dump(2) << "\n";
}

}  // namespace blendscore
