#pragma once

// Desk-scale checks of the asymptotic behaviour of the samplers: maximum
// likelihood on the coarsened model, observed information, normal
// approximation of the transition posterior, refinement monotonicity,
// L1 emission error and smoothing error.

#include <map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cuthmm/dpm.hpp"
#include "cuthmm/histogram_gibbs.hpp"
#include "cuthmm/hmm.hpp"
#include "cuthmm/partition.hpp"

namespace cuthmm {

struct MleResult {
    Eigen::MatrixXd q_hat;       // R x R
    Eigen::MatrixXd omega_hat;   // kappa x R
    Eigen::VectorXd initial;     // fitted law of X_1
    double log_likelihood = 0.0;
    int iterations = 0;
    bool converged = false;      // false when max_iter was reached
    std::vector<double> trace;   // log-likelihood before each update, then final
};

struct BaumWelchOptions {
    double tol = 1e-8;
    int max_iter = 2000;
};

/// Deterministic starting point: sticky Q and bin weights tilted towards
/// low bins for low states.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> default_em_start(const CoarsenedSeries& bins, int states, int kappa);

/// EM for the multinomial HMM with a free initial law. Stops when the
/// log-likelihood gain drops below tol; returns the last iterate with
/// converged = false after max_iter updates.
MleResult baum_welch(const CoarsenedSeries& bins, int states, int kappa, const Eigen::MatrixXd& q_init,
                     const Eigen::MatrixXd& omega_init, const BaumWelchOptions& options = {});

/// Permutes the MLE labels to best match a reference (Q, omega) in the relabeling distance.
MleResult align_mle(const MleResult& mle, const Eigen::MatrixXd& q_ref, const Eigen::MatrixXd& omega_ref);

struct FisherEstimate {
    Eigen::MatrixXd j;            // observed information per observation, free coordinates
    Eigen::MatrixXd j_tilde_inv;  // transition block of j^{-1}, R(R-1) square
    double step = 0.0;
    long n = 0;
    int fixed_coordinates = 0;    // emission weights below kBoundaryWeight, held fixed
};

/// Emission weights below this are treated as lying on the boundary.
inline constexpr double kBoundaryWeight = 1e-6;

/// Free coordinates: Q(r, s) for s < R-1 at index r (R-1) + s, then
/// omega(m, r) for m < kappa-1 at R (R-1) + r (kappa-1) + m.
Eigen::VectorXd pack_free(const Eigen::MatrixXd& q, const Eigen::MatrixXd& omega);
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> unpack_free(const Eigen::VectorXd& theta, int states, int kappa);

/// Stationary-start log-likelihood of the coarsened series.
double coarsened_log_likelihood(const Eigen::MatrixXd& q, const Eigen::MatrixXd& omega, const CoarsenedSeries& bins);

/// J = -(1/n) times the central-difference Hessian of the log-likelihood
/// at the MLE. Transition coordinates follow pack_free. In each emission
/// column the largest weight is the implied one, and weights below
/// kBoundaryWeight are held fixed. Each step is min(step, a quarter of the
/// coordinate and of its implied entry). Throws SingularInformation if
/// cond(J) > 1e10 and DomainError if a transition entry is on the boundary.
FisherEstimate observed_information(const CoarsenedSeries& bins, const MleResult& mle, double step = 1e-4);

struct BvmReport {
    std::vector<std::pair<int, int>> entries;  // free Q entries (r, s)
    std::vector<double> ks;                    // per entry
    Eigen::VectorXd cov_eigenvalues;           // of (n Cov_post) J_tilde, ascending
    double cov_ratio_min = 0.0;
    double cov_ratio_max = 0.0;
    long draws = 0;
    long n = 0;
};

/// Standardized draws (Q_draw - Q_mle) / sd_post per free entry against
/// N(0, 1), and the spread of n Cov_post relative to J_tilde^{-1}. Store,
/// MLE and information must share one labeling.
BvmReport bvm_compare(const DrawStore& store, const MleResult& mle, const FisherEstimate& fisher, long n);

/// Per-entry posterior sds, R x R.
Eigen::MatrixXd posterior_sd(const DrawStore& store);

struct RefinementReport {
    std::vector<int> bins;                 // ascending kappa
    std::vector<Eigen::MatrixXd> sds;      // per kappa
    double slack = 0.15;
    bool monotone = true;
};

/// Stores are aligned to the smallest-kappa store by their posterior mean
/// of Q; monotone when every sd at the next kappa is at most (1 + slack)
/// times the sd at the previous one.
RefinementReport refinement_monotonicity(const std::map<int, DrawStore>& stores, double slack = 0.15);

struct L1Report {
    std::vector<double> per_state;   // indexed by true state
    std::vector<int> permutation;    // estimate row matched to each true state
};

/// Trapezoid L1 distance per state after the permutation minimizing total L1.
L1Report l1_density_error(const RowMatrix& estimate, const RowMatrix& truth, std::span<const double> grid);

struct SmoothingReport {
    std::vector<double> per_draw_mean_tv;
    double posterior_mean_tv = 0.0;   // mean over t for the averaged smoothing matrix
    double posterior_max_tv = 0.0;
    std::vector<int> permutation;
};

/// Mean and max over t of the total-variation distance between rows.
std::pair<double, double> smoothing_tv(const RowMatrix& a, const RowMatrix& b);

/// Smoothing matrix of each cut-posterior draw: transition draw k paired
/// with emission draw k, stationary initial law.
std::vector<RowMatrix> cut_smoothing_draws(const DrawStore& store, const std::vector<DpmDraw>& draws,
                                           std::span<const double> y);

/// Compares per-draw smoothing matrices to the oracle after aligning the
/// column labels of their average to the oracle.
SmoothingReport smoothing_error(const std::vector<RowMatrix>& draw_smoothing, const RowMatrix& oracle);

}  // namespace cuthmm
