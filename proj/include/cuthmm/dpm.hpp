#pragma once

// Truncated Dirichlet-process mixtures of Gaussians for the emission
// densities, sampled conditionally on transition-matrix draws (nested MCMC)
// or jointly with Q (the fully Bayesian comparison sampler).
//
// Each state r has S_max locations mu(j, r), a single variance v(r) shared by
// its components and weights W(., r) ~ Dirichlet(M0 / S_max, ...).

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cuthmm/histogram_gibbs.hpp"
#include "cuthmm/hmm.hpp"
#include "cuthmm/random.hpp"

namespace cuthmm {

struct DpmHyper {
    double concentration = 1.0;  // M0
    double mu_c = 0.0;
    double sigma_c2 = 1.0;
    double alpha_sigma = 1.0;
    double beta_sigma = 1.0;
    int s_max = 0;  // 0 selects floor(sqrt(n))

    void validate() const;
    /// Truncation level for a series of length n.
    int truncation(int n) const;
};

struct DpmEmissionState {
    Eigen::MatrixXd mu;  // S_max x R
    Eigen::VectorXd v;   // R
    Eigen::MatrixXd w;   // S_max x R, columns sum to one
    std::vector<int> s;  // component allocation per observation
    LatentPath x;

    int states() const { return static_cast<int>(mu.cols()); }
    int components() const { return static_cast<int>(mu.rows()); }
};

/// Emission parameters retained for one draw.
struct DpmDraw {
    Eigen::MatrixXd mu;
    Eigen::VectorXd v;
    Eigen::MatrixXd w;

    /// Mixture mean sum_j W(j, r) mu(j, r) per state.
    Eigen::VectorXd state_means() const;
    DpmDraw permuted(const std::vector<int>& perm) const;
};

DpmDraw snapshot(const DpmEmissionState& state);

struct NestedConfig {
    int interior_iterations = 10;  // C
    std::uint64_t seed = 1;
    void validate() const;
};

struct DensityGridDraws {
    std::vector<double> grid;
    std::vector<RowMatrix> values;  // per draw: R x grid density values

    std::size_t draws() const { return values.size(); }
};

/// Grid with `points` equispaced values on [min(y) - 3 sd(y), max(y) + 3 sd(y)].
std::vector<double> default_grid(std::span<const double> y, int points = 512);

/// Per-state density values, R x grid.
RowMatrix density_eval(const DpmDraw& draw, std::span<const double> grid);

/// n x R table of log f_r(y_t) under the mixture.
EmissionLogDensityTable mixture_log_density_table(const DpmDraw& draw, std::span<const double> y);

/// Draws the initial state: path by a quantile split of y, v and W from the
/// prior, mu from the base measure, allocations from W.
DpmEmissionState initial_dpm_state(std::span<const double> y, int states, const DpmHyper& hyper, Rng& rng);

/// Forward filter over composite states (r, j), index r * S_max + j, using
/// the rank-R structure of the composite transition Q(r, r') W(j', r').
FilterResult composite_forward_filter(const DpmEmissionState& state, const TransitionMatrix& q,
                                      const StateDistribution& initial, std::span<const double> y);
/// Same filter built from the explicit (R S_max)^2 composite transition.
FilterResult composite_forward_filter_reference(const DpmEmissionState& state, const TransitionMatrix& q,
                                                const StateDistribution& initial, std::span<const double> y);

/// Samples (s, x) jointly from their exact conditional.
void sample_allocations(DpmEmissionState& state, const TransitionMatrix& q, const StateDistribution& initial,
                        std::span<const double> y, Rng& rng);

/// One pass: locations, variances, weights, then (s, x) jointly.
DpmEmissionState interior_sweep(DpmEmissionState state, const TransitionMatrix& q, std::span<const double> y,
                                const DpmHyper& hyper, Rng& rng);

struct NestedResult {
    std::vector<DpmDraw> draws;
    DensityGridDraws densities;
    int s_max = 0;
};

/// For each transition draw run C interior sweeps at fixed Q, warm-started
/// from the previous exterior index, and keep the final state.
NestedResult nested_run(const DrawStore& q_draws, std::span<const double> y, const DpmHyper& hyper,
                        const NestedConfig& config, std::span<const double> grid = {});

struct Band {
    Eigen::VectorXd mean;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

/// Per-state pointwise mean and equal-tailed `level` bands across draws.
std::vector<Band> pointwise_bands(const DensityGridDraws& draws, double level);

struct FullBayesConfig {
    long iterations = 70000;
    long burn_in = 10000;
    long thin = 10;
    std::uint64_t seed = 1;
    void validate() const;
    long retained() const { return (iterations - burn_in) / thin; }
};

struct FullBayesResult {
    DrawStore store;  // omega slots hold 1 x R per-state emission means
    std::vector<DpmDraw> draws;
    DensityGridDraws densities;
    int s_max = 0;
};

/// Joint sampler for (Q, f): Q is redrawn from its Dirichlet conditional
/// given the latent path at the top of every sweep.
FullBayesResult full_bayes_run(std::span<const double> y, int states, const DpmHyper& hyper,
                               const Eigen::MatrixXd& transition_prior, const FullBayesConfig& config,
                               std::span<const double> grid = {});

/// log of the joint posterior density of (Q, mu, v, W) given y, up to a constant.
double dpm_log_posterior(const TransitionMatrix& q, const DpmDraw& draw, std::span<const double> y,
                         const DpmHyper& hyper, const Eigen::MatrixXd& transition_prior);

}  // namespace cuthmm
