#pragma once

// Gibbs sampler for the transition matrix under the histogram emission
// model. The sampler works on coarsened data: emissions are multinomial
// with bin probabilities omega(m, r), and the 1/|I_m| density factors of the
// piecewise-constant model cancel from every conditional.

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "cuthmm/hmm.hpp"
#include "cuthmm/partition.hpp"
#include "cuthmm/random.hpp"

namespace cuthmm {

struct DirichletHyper {
    Eigen::MatrixXd gamma;  // R x R, row i is the prior on Q(i, .)
    Eigen::MatrixXd beta;   // kappa x R, column r is the prior on omega(., r)

    static DirichletHyper uniform(int states, int bins, double value = 1.0);
    void validate(int states, int bins) const;
};

struct Pi1Config {
    long iterations = 150000;
    long burn_in = 10000;
    long thin = 20;
    std::uint64_t seed = 1;

    void validate() const;
    long retained() const { return (iterations - burn_in) / thin; }
};

/// Ordered collection of parameter draws with relabeling record.
///
/// For histogram runs `omega` holds the kappa x R bin weights of each draw.
/// Stores produced by the fully Bayesian sampler put a 1 x R row of
/// per-state emission means there instead, which is what relabeling uses.
struct DrawStore {
    std::vector<Eigen::MatrixXd> q;
    std::vector<Eigen::MatrixXd> omega;
    std::vector<double> log_posterior;
    std::vector<long> iteration;
    std::vector<std::vector<int>> relabeling;
    long relabel_reference_index = -1;

    // Metadata carried into the persisted JSON.
    std::uint64_t seed = 0;
    Pi1Config config;
    int states = 0;
    int bins = 0;
    int partition_level = 0;

    std::size_t size() const { return q.size(); }
    bool empty() const { return q.empty(); }
    void push_back(Eigen::MatrixXd q_draw, Eigen::MatrixXd omega_draw, double log_post, long iter);
};

struct SufficientCounts {
    Eigen::MatrixXd transitions;  // R x R, n_ij
    Eigen::MatrixXd bin_counts;   // kappa x R, N_m^(i)
};

SufficientCounts sufficient_counts(const LatentPath& x, const CoarsenedSeries& bins, int states, int kappa);

struct Pi1State {
    TransitionMatrix q;
    Eigen::MatrixXd omega;
    LatentPath x;
};

/// Log emission table log omega(y_t, r) for coarsened data.
EmissionLogDensityTable multinomial_emission_table(const Eigen::MatrixXd& omega, const CoarsenedSeries& bins);

/// Initial law used by the sampler for X_1. Holding it fixed keeps the
/// Dirichlet update of Q an exact full conditional.
StateDistribution sampler_initial_law(int states);

/// Q | x, omega | x and y, then x | Q, omega, y by forward filtering,
/// backward sampling. With empty data only the parameter draws happen.
Pi1State gibbs_sweep(Pi1State state, const CoarsenedSeries& bins, int kappa, const DirichletHyper& hyper, Rng& rng);

/// Quantile-split initialization of the latent path.
LatentPath initial_latent_path(const CoarsenedSeries& bins, int states, int kappa, Rng& rng);

/// log Pi_1(Q, omega | y) up to the evidence constant.
double log_posterior(const TransitionMatrix& q, const Eigen::MatrixXd& omega, const CoarsenedSeries& bins,
                     const DirichletHyper& hyper);

DrawStore run_chain(const CoarsenedSeries& bins, const DirichletHyper& hyper, const Pi1Config& config, int states,
                    const DyadicPartition& partition);

/// Squared distance used to align draws: sum over Q entries plus omega entries.
double relabel_distance(const Eigen::MatrixXd& q_a, const Eigen::MatrixXd& omega_a, const Eigen::MatrixXd& q_b,
                        const Eigen::MatrixXd& omega_b);

Eigen::MatrixXd permute_transition(const Eigen::MatrixXd& q, const std::vector<int>& perm);
Eigen::MatrixXd permute_columns(const Eigen::MatrixXd& m, const std::vector<int>& perm);

/// All permutations of {0..R-1} in lexicographic order.
std::vector<std::vector<int>> all_permutations(int states);

/// Aligns every draw to the maximum-a-posteriori draw. Ties go to the
/// lexicographically smallest permutation.
DrawStore relabel_draws(DrawStore store);

struct QSummary {
    Eigen::MatrixXd mean;
    Eigen::MatrixXd lower;
    Eigen::MatrixXd upper;
    double alpha = 0.1;
};

/// Equal-tailed empirical quantile (linear interpolation between order statistics).
double empirical_quantile(std::vector<double> values, double prob);

QSummary summarize(const DrawStore& store, double alpha);

struct BinTuningResult {
    int recommended_bins = 0;
    std::map<int, bool> accepted;  // per kappa
};

/// Largest kappa whose posterior keeps the reference-kappa posterior mean
/// inside the central (1 - 2 alpha) part of every 1 - alpha credible
/// interval, scanning kappa upward from the reference and stopping at the
/// first rejection. Labels are aligned to the reference run first.
BinTuningResult bin_tuning_heuristic(const std::map<int, DrawStore>& stores, int reference_bins,
                                     const std::vector<double>& alphas = {0.05, 0.1});

}  // namespace cuthmm
