#pragma once

// Config-driven pipelines behind the command-line tool: simulation, the
// transition-matrix sampler over an (n, kappa) grid, nested emission fits,
// the fully Bayesian comparison, spectral estimates and diagnostics. Each
// command writes its artifacts under <out>/<run-id>/ and a manifest.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cuthmm/dpm.hpp"
#include "cuthmm/io.hpp"

namespace cuthmm {

/// Normal or finite normal mixture emission law.
struct EmissionSpec {
    std::vector<double> weights{1.0};
    std::vector<double> means{0.0};
    std::vector<double> sds{1.0};

    double pdf(double y) const;
    double cdf(double y) const;
    double sample(Rng& rng) const;
};

enum class Scale { AsConfigured, Smoke, Desk, Full };
Scale scale_from_string(const std::string& name);
std::string to_string(Scale scale);

struct ExperimentConfig {
    struct Model {
        int states = 2;
        Eigen::MatrixXd q_star;
        std::vector<EmissionSpec> emissions;
    } model;
    struct Data {
        long n = 10000;
        std::uint64_t seed = 20240501;
        std::vector<long> sizes{1000, 2500, 5000, 10000};  // prefixes of the series
        std::string input;  // optional one-column CSV used instead of simulation
    } data;
    struct Partition {
        std::vector<int> levels{1, 2, 3, 4, 6, 7};
        std::string transform = "sigmoid-linear";
    } partition;
    struct Pi1 {
        double gamma = 1.0;
        double beta = 1.0;
        long iterations = 150000;
        long burn_in = 10000;
        long thin = 20;
    } pi1;
    struct Pi2 {
        DpmHyper hyper;
        int interior = 10;
        std::map<long, int> levels{{1000, 2}, {2500, 3}, {5000, 3}, {10000, 4}};
        int default_level = 3;
        int level_for(long n) const;
    } pi2;
    struct Full {
        std::vector<long> sizes{2500, 10000};
        double gamma = 1.0;
        long iterations = 70000;
        long burn_in = 10000;
        long thin = 10;
    } full;
    struct Spectral {
        int level = 3;
        int restarts = 50;
        int iterations = 100;
    } spectral;
    struct Diagnostics {
        std::vector<long> sizes{1000, 2500, 5000, 10000};
        int reference_level = 2;
        std::vector<double> alphas{0.05, 0.1};
        std::vector<int> information_levels{1, 2, 3};
        double em_tol = 1e-9;
        int em_max_iter = 20000;
        int smoothing_draws = 200;
    } diagnostics;
    struct Outputs {
        std::string directory = "out";
        int grid_points = 512;
        double band_level = 0.9;
        bool density_draws = false;
    } outputs;
    std::uint64_t seed = 1;  // sampler seed; data.seed drives simulation

    /// The simulation study defaults.
    static ExperimentConfig defaults();
    /// Throws ConfigError naming the offending field.
    void validate() const;
};

/// Overlays `j` on the defaults. Unknown keys and wrong types raise ConfigError.
ExperimentConfig config_from_json(const Json& j);
Json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const fs::path& path);

/// Sets the sampler iteration counts to the study counts divided by 100
/// (smoke), 10 (desk) or 1 (full).
void apply_scale(ExperimentConfig& config, Scale scale);

/// 16 hex digits of a 64-bit FNV-1a hash of the canonical config without
/// the output directory. The run id is its first 12 digits.
std::string config_hash(const ExperimentConfig& config);

/// Independent stream seed for one grid cell of one stage.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

struct RunContext {
    ExperimentConfig config;
    fs::path run_dir;
    std::string hash;
    std::string run_id;
    Scale scale = Scale::AsConfigured;
    int jobs = 1;

    /// Applies the scale, validates, and places the run under outputs.directory.
    RunContext(ExperimentConfig cfg, Scale scale = Scale::AsConfigured, int jobs = 1);

    fs::path data_dir() const { return run_dir / "data"; }
    fs::path pi1_dir() const { return run_dir / "pi1"; }
    fs::path pi2_dir() const { return run_dir / "pi2"; }
    fs::path spectral_dir() const { return run_dir / "spectral"; }
    fs::path diagnostics_dir() const { return run_dir / "diagnostics"; }

    fs::path observations_path() const { return data_dir() / "observations.csv"; }
    fs::path store_csv(long n, int level) const;
    fs::path store_json(long n, int level) const;
    fs::path cut_dir(long n, int level) const;
    fs::path full_dir(long n) const;
};

/// Relative paths of the files a command wrote, sorted.
using Outputs = std::vector<std::string>;

Outputs cmd_simulate(const RunContext& ctx);
Outputs cmd_fit_q(const RunContext& ctx);
Outputs cmd_fit_emissions(const RunContext& ctx);
Outputs cmd_fit_full(const RunContext& ctx);
Outputs cmd_spectral(const RunContext& ctx);
Outputs cmd_diagnose(const RunContext& ctx);

/// Runs one named command, writes config.json and manifests/<command>.json,
/// and returns the manifest.
Json run_command(const std::string& command, const RunContext& ctx);
/// simulate, fit-q, fit-emissions, fit-full, spectral and diagnose in order.
Json reproduce_paper(const RunContext& ctx);

std::vector<std::string> command_names();

}  // namespace cuthmm
