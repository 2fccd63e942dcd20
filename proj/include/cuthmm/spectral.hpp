#pragma once

// Spectral method-of-moments estimator for multinomial HMMs: moment
// tensors of three consecutive observations, split-sample symmetrisation,
// whitening, tensor power method with deflation, de-whitening and label
// fixing against a reference estimate.

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "cuthmm/hmm.hpp"
#include "cuthmm/partition.hpp"
#include "cuthmm/random.hpp"

namespace cuthmm {

/// Dense third-order tensor, row-major in (i, j, k).
class Tensor3 {
public:
    Tensor3() = default;
    Tensor3(int d0, int d1, int d2) : dims_{d0, d1, d2}, data_(static_cast<std::size_t>(d0) * d1 * d2, 0.0) {}

    int dim(int axis) const { return dims_[axis]; }
    double& operator()(int i, int j, int k) { return data_[index(i, j, k)]; }
    double operator()(int i, int j, int k) const { return data_[index(i, j, k)]; }
    const std::vector<double>& data() const { return data_; }

    double sum() const;
    double frobenius_norm() const;
    double max_abs_diff(const Tensor3& other) const;

    /// [T(A, B, C)]_{ijk} = sum_{rst} T_{rst} A_{ri} B_{sj} C_{tk}.
    Tensor3 multilinear(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::MatrixXd& c) const;
    /// T(I, u, u) for a cubic tensor.
    Eigen::VectorXd contract_two(const Eigen::VectorXd& u) const;
    /// T(u, u, u).
    double contract_three(const Eigen::VectorXd& u) const;
    /// this -= weight * u (x) u (x) u.
    void subtract_rank_one(double weight, const Eigen::VectorXd& u);
    /// Average over the six mode permutations of a cubic tensor.
    Tensor3 symmetrized() const;

private:
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k;
    }
    int dims_[3] = {0, 0, 0};
    std::vector<double> data_;
};

struct MomentTensors {
    int kappa = 0;
    Eigen::MatrixXd e12;  // E[Y_1 (x) Y_2]
    Eigen::MatrixXd e13;  // E[Y_1 (x) Y_3]
    Eigen::MatrixXd e23;  // E[Y_2 (x) Y_3]
    Tensor3 e123;
};

/// Sliding-window averages over consecutive pairs and triples. Throws TooShort if n < 3.
MomentTensors empirical_tensors(const CoarsenedSeries& bins, int kappa);

/// Exact moments of a stationary HMM with emission matrix omega (kappa x R).
MomentTensors population_tensors(const TransitionMatrix& q, const Eigen::MatrixXd& omega);

enum class SymmetrizeView { Third, Second };

struct SymmetrizedMoments {
    Eigen::MatrixXd pair;   // symmetric second moment sum_i p_i m_i m_i^T
    Tensor3 triple;         // symmetric third moment sum_i p_i m_i (x) m_i (x) m_i
    Eigen::MatrixXd a;      // transform applied to the first view
    Eigen::MatrixXd b;      // transform applied to the other non-target view
};

/// Transforms estimated on `first` are applied to the moments of `second`.
/// View Third targets m_i = (Omega Q^T)_i, view Second targets m_i = Omega_i.
/// Throws SingularMoment when a moment matrix to invert has rank-R
/// condition number above 1e8.
SymmetrizedMoments symmetrize(const MomentTensors& first, const MomentTensors& second, int states,
                              SymmetrizeView view = SymmetrizeView::Third);

struct WhitenedTensor {
    Tensor3 t;              // R x R x R
    Eigen::MatrixXd w;      // kappa x R with W^T M2 W = I
    Eigen::MatrixXd w_pinv; // Moore-Penrose inverse of W^T (kappa x R)
    Eigen::VectorXd eigenvalues;  // top-R eigenvalues of the symmetrised pair moment
};

/// The whitened tensor is projected onto symmetric tensors. Throws
/// RankDeficient if the R-th eigenvalue of the pair moment is below 1e-8
/// times the first.
WhitenedTensor whiten(const Eigen::MatrixXd& pair, const Tensor3& triple, int states);

struct PowerMethodOptions {
    int restarts = 50;
    int iterations = 100;
};

struct EigenPairs {
    Eigen::VectorXd values;   // lambda_i
    Eigen::MatrixXd vectors;  // R x R, column i is u_i
    double deflation_residual = 0.0;
};

EigenPairs tensor_power_method(const Tensor3& t, int states, const PowerMethodOptions& options, Rng& rng);

struct SpectralEstimate {
    TransitionMatrix q_hat;
    Eigen::MatrixXd omega_hat;        // kappa x R, columns on the simplex
    std::vector<int> permutation;     // label fix applied to the second-view components
    std::vector<double> singular_values;
    double deflation_residual = 0.0;
};

struct Reference {
    Eigen::MatrixXd q;      // R x R
    Eigen::MatrixXd omega;  // kappa x R
};

/// Columns lambda_i W^+ u_i, i.e. the de-whitened components.
Eigen::MatrixXd dewhiten(const EigenPairs& pairs, const WhitenedTensor& whitened);

/// Mixing weights of the hidden state behind both views, estimated from
/// each view's power-method eigenvalues as lambda_i^{-2}.
struct ViewWeights {
    Eigen::VectorXd second;
    Eigen::VectorXd third;
};

/// Combines the two symmetrisation runs. With a reference, both component
/// sets are aligned to it by the max-column squared distance. Without one,
/// the second-view labels are kept and the third-view permutation minimises
/// the mismatch between the two weight estimates plus the distance of the
/// second-view weights from stationarity under the implied Q.
SpectralEstimate recover_parameters(const Eigen::MatrixXd& xi_third, const Eigen::MatrixXd& xi_second,
                                    const std::optional<Reference>& reference,
                                    const std::optional<ViewWeights>& weights = std::nullopt);

struct SpectralOptions {
    PowerMethodOptions power;
    std::uint64_t seed = 1;
};

/// Full pipeline on observed bins with a half/half sample split.
SpectralEstimate spectral_estimate(const CoarsenedSeries& bins, int kappa, int states,
                                   const std::optional<Reference>& reference, const SpectralOptions& options = {});

/// Same pipeline on exact population moments.
SpectralEstimate spectral_estimate_population(const TransitionMatrix& q, const Eigen::MatrixXd& omega,
                                              const std::optional<Reference>& reference,
                                              const SpectralOptions& options = {});

}  // namespace cuthmm
