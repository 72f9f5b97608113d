#include <cstdio>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "blendscore/bank_io.hpp"
#include "blendscore/harness.hpp"
#include "blendscore/metrics.hpp"
#include "blendscore/simd_ops.hpp"

namespace {

using namespace blendscore;

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t n_ref = 0;
    std::string out_dir;
    std::string target;
    bool paper_scale = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("config", args.config_path, "experiment config JSON file");
    cmd->add_option("--seed", args.seed, "override the seed list with one seed")
        ->each([&](const std::string&) { args.seed_set = true; });
    cmd->add_option("--n-ref", args.n_ref, "override the reference-set size schedule");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--target", args.target, "target preset name or mixture JSON path");
    cmd->add_flag("--paper-scale", args.paper_scale, "use the full paper budgets");
}

int run(Experiment experiment, const CommonArgs& args) {
    HarnessConfig config;
    if (!args.config_path.empty()) config = load_config(args.config_path);
    config.experiment = experiment;
    if (args.seed_set) config.seeds = {args.seed};
    if (args.n_ref > 0) config.n_ref_schedule = {args.n_ref};
    if (!args.out_dir.empty()) config.out_dir = args.out_dir;
    if (!args.target.empty()) config.target = args.target;
    if (args.paper_scale) {
        // Re-parse so the paper-scale expansions apply on top of the file.
        nlohmann::json j = nlohmann::json::parse(config_to_json(config));
        j["paper_scale"] = true;
        config = config_from_json(j.dump());
        config.experiment = experiment;
    }

    const RunResult result = run_experiment(config);
    write_outputs(result, config);
    std::printf("%s: %zu/%zu cells, %.2fs, nfe=%llu, hash=%s -> %s\n",
                to_string(result.experiment).c_str(), result.cells_completed,
                result.cells_total, result.wall_seconds,
                static_cast<unsigned long long>(result.nfe), result.hash.c_str(),
                resolve_out_dir(config.out_dir).c_str());
    return result.complete() ? 0 : 1;
}

int run_metrics(const std::string& a_path, const std::string& b_path,
                const std::string& floor_path, const std::string& kernel,
                const std::string& out_path) {
    const Matrix a = load_bank(a_path).bank.points;
    const Matrix b = load_bank(b_path).bank.points;

    KernelSpec kspec = KernelSpec::rbf(Vec{1.0});
    if (kernel == "median") {
        Rng rng(0);
        kspec = KernelSpec::rbf(median_heuristic_bandwidths(b, 1024, Vec{0.5, 1.0, 2.0}, rng));
    } else if (kernel == "spectral") {
        kspec = KernelSpec::rbf(Vec{0.5 * std::sqrt(static_cast<double>(b.cols()) / 2.0)});
    } else {
        kspec = KernelSpec::rbf(Vec{std::stod(kernel)});
    }

    nlohmann::json out;
    out["mmd2"] = mmd2(a, b, kspec);
    if (!floor_path.empty()) {
        const Matrix f = load_bank(floor_path).bank.points;
        out["log_mmd_ratio"] = mmd_floor_ratio(a, b, f, kspec);
    }
    out["n_a"] = a.rows();
    out["n_b"] = b.rows();
    out["bandwidths"] = kspec.bandwidths;
    const std::string text = out.dump(2);
    if (out_path.empty()) {
        std::cout << text << "\n";
    } else {
        std::ofstream file(out_path, std::ios::trunc);
        file << text << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Variance-reduced nonparametric score estimation benchmarks"};
    app.require_subcommand(1);

    CommonArgs sample_args, sweep_args, corr_args, var_args, post_args;
    auto* cmd_sample =
        app.add_subcommand("sample", "prior sampling comparison (MMD/KSD/score RMSE)");
    add_common(cmd_sample, sample_args);
    bool rmse_only = false;
    cmd_sample->add_flag("--rmse-only", rmse_only, "skip sampling, score RMSE only");

    auto* cmd_sweep = app.add_subcommand("sweep", "posterior regime sweep over noise levels");
    add_common(cmd_sweep, sweep_args);

    auto* cmd_corr =
        app.add_subcommand("correlate", "error-correlation curve rho(t)");
    add_common(cmd_corr, corr_args);

    auto* cmd_var =
        app.add_subcommand("variance-profile", "variance time factors and crossover");
    add_common(cmd_var, var_args);

    auto* cmd_post =
        app.add_subcommand("posterior", "posterior sampling vs MALA reference");
    add_common(cmd_post, post_args);

    auto* cmd_metrics = app.add_subcommand("metrics", "MMD between two sample files");
    std::string a_path, b_path, floor_path, kernel = "median", out_path;
    cmd_metrics->add_option("--a", a_path, "generated samples (bank file)")->required();
    cmd_metrics->add_option("--b", b_path, "reference samples (bank file)")->required();
    cmd_metrics->add_option("--floor", floor_path, "second reference set for the MMD floor");
    cmd_metrics->add_option("--kernel", kernel, "median | spectral | <sigma>");
    cmd_metrics->add_option("--out", out_path, "write metrics JSON here instead of stdout");

    bool show_backend = false;
    app.add_flag("--backend", show_backend, "print the active SIMD backend");

    CLI11_PARSE(app, argc, argv);
    if (show_backend) std::fprintf(stderr, "simd backend: %s\n", simd::backend_name());

    try {
        if (cmd_sample->parsed())
            return run(rmse_only ? Experiment::RmseVsNref : Experiment::PriorSampling,
                       sample_args);
        if (cmd_sweep->parsed()) return run(Experiment::RegimeSweep, sweep_args);
        if (cmd_corr->parsed()) return run(Experiment::CorrelationCurve, corr_args);
        if (cmd_var->parsed()) return run(Experiment::VarianceProfile, var_args);
        if (cmd_post->parsed()) return run(Experiment::PosteriorSampling, post_args);
        if (cmd_metrics->parsed())
            return run_metrics(a_path, b_path, floor_path, kernel, out_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
