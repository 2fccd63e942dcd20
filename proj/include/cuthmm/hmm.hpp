#pragma once

// Exact computations for finite-state hidden Markov models: stationary law,
// scaled forward filtering, smoothing, forward-filtering backward-sampling
// and simulation. States are 0-based throughout.

#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cuthmm/random.hpp"

namespace cuthmm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row-stochastic R x R matrix. Construction validates entries and row sums.
class TransitionMatrix {
public:
    static constexpr double kRowTolerance = 1e-12;

    TransitionMatrix() = default;
    explicit TransitionMatrix(Eigen::MatrixXd entries);

    /// Rescales each row to sum to one before validating. Use for matrices
    /// that are stochastic up to rounding (e.g. Dirichlet draws).
    static TransitionMatrix normalized(Eigen::MatrixXd entries);

    int states() const { return static_cast<int>(entries_.rows()); }
    const Eigen::MatrixXd& matrix() const { return entries_; }
    double operator()(int from, int to) const { return entries_(from, to); }

    /// Q' with Q'(i, j) = Q(perm[i], perm[j]).
    TransitionMatrix permuted(const std::vector<int>& perm) const;

private:
    Eigen::MatrixXd entries_;
};

/// Probability vector over hidden states.
class StateDistribution {
public:
    static constexpr double kSumTolerance = 1e-12;

    StateDistribution() = default;
    explicit StateDistribution(Eigen::VectorXd probs);

    static StateDistribution uniform(int states);

    int states() const { return static_cast<int>(probs_.size()); }
    const Eigen::VectorXd& probs() const { return probs_; }
    double operator[](int r) const { return probs_(r); }

private:
    Eigen::VectorXd probs_;
};

/// n x R table of log f_r(y_t). Entries are finite or -inf.
class EmissionLogDensityTable {
public:
    EmissionLogDensityTable() = default;
    explicit EmissionLogDensityTable(RowMatrix log_values);

    int length() const { return static_cast<int>(values_.rows()); }
    int states() const { return static_cast<int>(values_.cols()); }
    const RowMatrix& values() const { return values_; }

private:
    RowMatrix values_;
};

struct FilterResult {
    RowMatrix filtered;                  // P(X_t = r | Y_{1:t})
    Eigen::VectorXd log_norm_constants;  // log P(Y_t | Y_{1:t-1})
    double log_likelihood = 0.0;
};

using LatentPath = std::vector<int>;

/// Emission sampler for one hidden state.
using EmissionSampler = std::function<double(Rng&)>;

/// Invariant distribution of an ergodic chain. Throws NonErgodic when the
/// chain is reducible or periodic, or the linear system is singular.
StateDistribution stationary_distribution(const TransitionMatrix& q);

/// True if some power of Q is strictly positive (irreducible and aperiodic).
bool is_ergodic(const TransitionMatrix& q);

FilterResult forward_filter(const TransitionMatrix& q, const StateDistribution& initial,
                            const EmissionLogDensityTable& emissions);
/// Uses the stationary distribution of q as initial law.
FilterResult forward_filter(const TransitionMatrix& q, const EmissionLogDensityTable& emissions);
/// Same filter on likelihoods already divided by their per-step maximum;
/// shift(t) is the log of that maximum.
FilterResult forward_filter_scaled(const TransitionMatrix& q, const StateDistribution& initial,
                                   const RowMatrix& scaled, const Eigen::VectorXd& shift);

/// Log-likelihood only; cheaper than forward_filter since nothing is stored.
double log_likelihood(const TransitionMatrix& q, const StateDistribution& initial,
                      const EmissionLogDensityTable& emissions);

/// n x R matrix of P(X_t = r | Y_{1:n}).
RowMatrix smoothing_probabilities(const TransitionMatrix& q, const StateDistribution& initial,
                                  const EmissionLogDensityTable& emissions);
RowMatrix smoothing_probabilities(const TransitionMatrix& q, const EmissionLogDensityTable& emissions);

/// Exact draw of X_{1:n} given Y_{1:n} by forward filtering, backward sampling.
LatentPath sample_latent_path(const TransitionMatrix& q, const StateDistribution& initial,
                              const EmissionLogDensityTable& emissions, Rng& rng);

/// Draws backward from an already computed filter.
LatentPath sample_latent_path(const TransitionMatrix& q, const FilterResult& filter, Rng& rng);

struct SimulatedSeries {
    LatentPath states;
    std::vector<double> observations;
};

/// X_1 ~ p_Q, X_{t+1} ~ Q(X_t, .), Y_t ~ F_{X_t}.
SimulatedSeries simulate_hmm(const TransitionMatrix& q, const std::vector<EmissionSampler>& emissions,
                             int n, Rng& rng);

}  // namespace cuthmm
