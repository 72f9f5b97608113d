#pragma once

#include <limits>
#include <string>

#include "blendscore/bank_io.hpp"
#include "blendscore/metrics.hpp"
#include "blendscore/proxy.hpp"
#include "blendscore/sampler.hpp"

namespace blendscore {

enum class Experiment {
    PriorSampling,
    PosteriorSampling,
    CorrelationCurve,
    VarianceProfile,
    RegimeSweep,
    RmseVsNref,
};

Experiment experiment_from_string(const std::string& name);
std::string to_string(Experiment e);

struct GridConfig {
    double t_min = 5e-4;
    double t_max = 1.5;
    std::size_t steps = 30;
    GridSpacing spacing = GridSpacing::Log;

    // Named presets: "main" = [5e-4, 1.5], "sweep" = [3e-4, 2.5].
    static GridConfig preset(const std::string& name);
    TimeGrid build() const { return make_time_grid(t_min, t_max, steps, spacing); }
};

struct HarnessConfig {
    Experiment experiment = Experiment::PriorSampling;
    std::string target = "gauss3";
    std::uint64_t preset_seed = 1234;  // fixes spectral means across seeds
    GridConfig grid;
    std::size_t n_particles = 1000;
    std::vector<std::string> estimators = {"tweedie", "tsi", "blend"};
    std::vector<std::string> metric_names = {"mmd", "ksd", "score_rmse"};
    std::vector<std::size_t> n_ref_schedule = {2000};
    std::vector<std::uint64_t> seeds = {0};
    ProxyConfig proxy;
    std::size_t mom_batches = 1;  // 1 = median-of-means off

    // regime sweep / posterior
    std::vector<std::size_t> dims = {3};
    Vec sigma_rels = {0.1, 0.2, 0.4};
    double sigma_rel = 0.2;
    std::size_t signal_scale_samples = 20000;

    std::size_t n_eval = 64;     // score-RMSE queries per knot
    std::size_t n_queries = 200; // correlation-curve queries per (t, batch)
    std::size_t n_batches = 2;   // correlation-curve independent banks
    std::size_t n_metric_samples = 0;  // 0 = n_particles
    MalaConfig mala{5000, 1000, 0.2, true, 0.574};

    std::string mmd_kernel = "median";  // "median", "spectral", or a number
    double ess_floor_fraction = 0.05;

    std::string out_dir = "runs/out";
    bool paper_scale = false;
    unsigned n_threads = 0;
};

HarnessConfig config_from_json(const std::string& text);
std::string config_to_json(const HarnessConfig& config);
HarnessConfig load_config(const std::string& path);

// FNV-1a hash of the canonical JSON form, recorded in every output.
std::string config_hash(const HarnessConfig& config);

struct MetricCell {
    std::string method;
    std::size_t n_ref = 0;
    std::uint64_t seed = 0;
    std::size_t dim = 0;
    double sigma_rel = std::numeric_limits<double>::quiet_NaN();
    std::string metric;
    double value = std::numeric_limits<double>::quiet_NaN();
    bool dropped = false;  // marked instead of omitted when a cell cannot be computed
};

struct CurveRow {
    std::string curve;
    double t;
    double value;
    double ess_mean;
    bool kept;
};

struct RunResult {
    std::string hash;
    Experiment experiment;
    std::vector<MetricCell> table;
    std::vector<CurveRow> curves;
    double wall_seconds = 0.0;
    std::uint64_t nfe = 0;
    std::size_t cells_total = 0;
    std::size_t cells_completed = 0;

    bool complete() const { return cells_completed == cells_total; }
};

// Built-in target presets: "gauss<d>", "bimodal2", "helix9", "spectral<d>",
// or a path to a mixture JSON document.
GaussianMixture make_target(const std::string& name, std::uint64_t preset_seed);

RunResult run_experiment(const HarnessConfig& config);

// results.csv + one curve_<name>.csv per curve + manifest.json under the
// output directory (BLENDSCORE_OUT_ROOT prefixes relative paths).
std::string resolve_out_dir(const std::string& out_dir);
void write_outputs(const RunResult& result, const HarnessConfig& config);

// Stable, versioned CSV headers (pinned by a golden-file test).
extern const char* const kResultsCsvHeader;
extern const char* const kCurveCsvHeader;

}  // namespace blendscore
