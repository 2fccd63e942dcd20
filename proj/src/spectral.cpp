#include "cuthmm/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cuthmm/errors.hpp"
#include "cuthmm/histogram_gibbs.hpp"

namespace cuthmm {

double Tensor3::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor3::frobenius_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

double Tensor3::max_abs_diff(const Tensor3& other) const {
    if (data_.size() != other.data_.size()) throw InvalidArgument("tensor shapes differ");
    double m = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) m = std::max(m, std::abs(data_[i] - other.data_[i]));
    return m;
}

Tensor3 Tensor3::multilinear(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::MatrixXd& c) const {
    if (a.rows() != dims_[0] || b.rows() != dims_[1] || c.rows() != dims_[2])
        throw InvalidArgument("multilinear transform: dimension mismatch");
    const int o0 = static_cast<int>(a.cols());
    const int o1 = static_cast<int>(b.cols());
    const int o2 = static_cast<int>(c.cols());
    // Contract one mode at a time: O(d^3 o) instead of O(d^3 o^3).
    Tensor3 step1(dims_[0], dims_[1], o2);
    for (int r = 0; r < dims_[0]; ++r)
        for (int s = 0; s < dims_[1]; ++s)
            for (int t = 0; t < dims_[2]; ++t) {
                const double v = (*this)(r, s, t);
                if (v == 0.0) continue;
                for (int k = 0; k < o2; ++k) step1(r, s, k) += v * c(t, k);
            }
    Tensor3 step2(dims_[0], o1, o2);
    for (int r = 0; r < dims_[0]; ++r)
        for (int s = 0; s < dims_[1]; ++s)
            for (int j = 0; j < o1; ++j) {
                const double bj = b(s, j);
                if (bj == 0.0) continue;
                for (int k = 0; k < o2; ++k) step2(r, j, k) += step1(r, s, k) * bj;
            }
    Tensor3 out(o0, o1, o2);
    for (int r = 0; r < dims_[0]; ++r)
        for (int i = 0; i < o0; ++i) {
            const double ai = a(r, i);
            if (ai == 0.0) continue;
            for (int j = 0; j < o1; ++j)
                for (int k = 0; k < o2; ++k) out(i, j, k) += step2(r, j, k) * ai;
        }
    return out;
}

Eigen::VectorXd Tensor3::contract_two(const Eigen::VectorXd& u) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dims_[0]);
    for (int i = 0; i < dims_[0]; ++i)
        for (int j = 0; j < dims_[1]; ++j)
            for (int k = 0; k < dims_[2]; ++k) out(i) += (*this)(i, j, k) * u(j) * u(k);
    return out;
}

double Tensor3::contract_three(const Eigen::VectorXd& u) const { return u.dot(contract_two(u)); }

void Tensor3::subtract_rank_one(double weight, const Eigen::VectorXd& u) {
    for (int i = 0; i < dims_[0]; ++i)
        for (int j = 0; j < dims_[1]; ++j)
            for (int k = 0; k < dims_[2]; ++k) (*this)(i, j, k) -= weight * u(i) * u(j) * u(k);
}

MomentTensors empirical_tensors(const CoarsenedSeries& bins, int kappa) {
    const std::size_t n = bins.size();
    if (n < 3) throw TooShort("moment tensors need at least 3 observations, got " + std::to_string(n));
    MomentTensors out{kappa, Eigen::MatrixXd::Zero(kappa, kappa), Eigen::MatrixXd::Zero(kappa, kappa),
                      Eigen::MatrixXd::Zero(kappa, kappa), Tensor3(kappa, kappa, kappa)};
    for (int b : bins)
        if (b < 0 || b >= kappa) throw InvalidArgument("bin index out of range");
    for (std::size_t t = 0; t + 1 < n; ++t) out.e12(bins[t], bins[t + 1]) += 1.0;
    for (std::size_t t = 0; t + 2 < n; ++t) {
        out.e13(bins[t], bins[t + 2]) += 1.0;
        out.e23(bins[t + 1], bins[t + 2]) += 1.0;
        out.e123(bins[t], bins[t + 1], bins[t + 2]) += 1.0;
    }
    out.e12 /= static_cast<double>(n - 1);
    const double triples = static_cast<double>(n - 2);
    out.e13 /= triples;
    out.e23 /= triples;
    Tensor3 scaled(kappa, kappa, kappa);
    for (int i = 0; i < kappa; ++i)
        for (int j = 0; j < kappa; ++j)
            for (int k = 0; k < kappa; ++k) scaled(i, j, k) = out.e123(i, j, k) / triples;
    out.e123 = std::move(scaled);
    return out;
}

MomentTensors population_tensors(const TransitionMatrix& q, const Eigen::MatrixXd& omega) {
    const int r = q.states();
    const int kappa = static_cast<int>(omega.rows());
    if (omega.cols() != r) throw InvalidArgument("omega must be kappa x R");
    const Eigen::VectorXd p = stationary_distribution(q).probs();
    const Eigen::MatrixXd& qm = q.matrix();
    const Eigen::MatrixXd dq = p.asDiagonal() * qm;
    MomentTensors out{kappa, omega * dq * omega.transpose(), omega * dq * qm * omega.transpose(),
                      omega * dq * omega.transpose(), Tensor3(r, r, r)};
    // Core tensor over hidden states, then map each mode through omega.
    Tensor3 core(r, r, r);
    for (int a = 0; a < r; ++a)
        for (int b = 0; b < r; ++b)
            for (int c = 0; c < r; ++c) core(a, b, c) = p(a) * qm(a, b) * qm(b, c);
    const Eigen::MatrixXd ot = omega.transpose();
    out.e123 = core.multilinear(ot, ot, ot);
    return out;
}

namespace {

// Rank-R pseudo-inverse; throws SingularMoment if sigma_1 / sigma_R > 1e8.
Eigen::MatrixXd rank_pinv(const Eigen::MatrixXd& m, int rank, const char* what) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    if (sv.size() < rank) throw SingularMoment(std::string(what) + " has fewer than R singular values");
    const double top = sv(0);
    const double rth = sv(rank - 1);
    if (!(rth > 0.0) || top / rth > 1e8)
        throw SingularMoment(std::string(what) + " is numerically singular (condition " + std::to_string(top / rth) + ")");
    const Eigen::MatrixXd u = svd.matrixU().leftCols(rank);
    const Eigen::MatrixXd v = svd.matrixV().leftCols(rank);
    return v * sv.head(rank).cwiseInverse().asDiagonal() * u.transpose();
}

std::vector<int> align_columns(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& reference) {
    // Max over columns of the squared column distance, minimised over permutations.
    const auto perms = all_permutations(static_cast<int>(estimate.cols()));
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> best_perm = perms.front();
    for (const auto& perm : perms) {
        double worst = 0.0;
        for (Eigen::Index i = 0; i < estimate.cols(); ++i)
            worst = std::max(worst, (estimate.col(perm[i]) - reference.col(i)).squaredNorm());
        if (worst < best) {
            best = worst;
            best_perm = perm;
        }
    }
    return best_perm;
}

Eigen::MatrixXd project_columns_to_simplex(Eigen::MatrixXd m) {
    m = m.cwiseMax(0.0);
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double s = m.col(c).sum();
        if (s > 0.0)
            m.col(c) /= s;
        else
            m.col(c).setConstant(1.0 / static_cast<double>(m.rows()));
    }
    return m;
}

Eigen::MatrixXd pinv_checked_omega(const Eigen::MatrixXd& omega) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(omega, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double smallest = sv(sv.size() - 1);
    if (!(smallest > 1e-8 * sv(0))) throw SingularOmega("estimated emission matrix is not invertible");
    return svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
}

SpectralEstimate finish(const Eigen::MatrixXd& omega_aligned, const Eigen::MatrixXd& xi_third_aligned,
                        std::vector<int> permutation) {
    const Eigen::MatrixXd omega_pinv = pinv_checked_omega(omega_aligned);
    Eigen::MatrixXd q_hat = (omega_pinv * xi_third_aligned).transpose();
    q_hat = project_columns_to_simplex(q_hat.transpose()).transpose();
    SpectralEstimate out{TransitionMatrix::normalized(q_hat), project_columns_to_simplex(omega_aligned),
                         std::move(permutation), {}, 0.0};
    return out;
}

}  // namespace

SymmetrizedMoments symmetrize(const MomentTensors& first, const MomentTensors& second, int states,
                              SymmetrizeView view) {
    const int kappa = first.kappa;
    if (second.kappa != kappa) throw InvalidArgument("split halves use different alphabets");
    if (states > kappa) throw InvalidArgument("need at least R bins");
    const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(kappa, kappa);
    SymmetrizedMoments out;
    if (view == SymmetrizeView::Third) {
        // A maps E[Y1 | X2] to E[Y3 | X2]; B maps E[Y2 | X2] to E[Y3 | X2].
        out.a = first.e23.transpose() * rank_pinv(first.e12, states, "E12");
        out.b = first.e13.transpose() * rank_pinv(first.e12.transpose(), states, "E21");
        out.pair = out.a * second.e12 * out.b.transpose();
        out.triple = second.e123.multilinear(out.a.transpose(), out.b.transpose(), identity);
    } else {
        out.a = first.e23 * rank_pinv(first.e13, states, "E13");
        out.b = first.e12.transpose() * rank_pinv(first.e13.transpose(), states, "E31");
        out.pair = out.a * second.e13 * out.b.transpose();
        out.triple = second.e123.multilinear(out.a.transpose(), identity, out.b.transpose());
    }
    return out;
}

Tensor3 Tensor3::symmetrized() const {
    const int d = dims_[0];
    if (dims_[1] != d || dims_[2] != d) throw InvalidArgument("symmetrization needs a cubic tensor");
    Tensor3 out(d, d, d);
    const Tensor3& t = *this;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            for (int k = 0; k < d; ++k)
                out(i, j, k) = (t(i, j, k) + t(i, k, j) + t(j, i, k) + t(j, k, i) + t(k, i, j) + t(k, j, i)) / 6.0;
    return out;
}

WhitenedTensor whiten(const Eigen::MatrixXd& pair, const Tensor3& triple, int states) {
    const Eigen::MatrixXd sym = 0.5 * (pair + pair.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    const Eigen::Index k = sym.rows();
    if (k < states) throw RankDeficient("pair moment smaller than R");
    // Eigenvalues are ascending; take the top R in descending order.
    Eigen::VectorXd lambda(states);
    Eigen::MatrixXd u(k, states);
    for (int i = 0; i < states; ++i) {
        lambda(i) = eig.eigenvalues()(k - 1 - i);
        u.col(i) = eig.eigenvectors().col(k - 1 - i);
    }
    if (!(lambda(states - 1) > 1e-8 * lambda(0)) || !(lambda(0) > 0.0))
        throw RankDeficient("pair moment has fewer than R significant eigenvalues");
    WhitenedTensor out;
    out.w = u * lambda.cwiseSqrt().cwiseInverse().asDiagonal();
    out.w_pinv = u * lambda.cwiseSqrt().asDiagonal();
    out.eigenvalues = lambda;
    // Sampling noise breaks the symmetry of the whitened tensor; the power
    // method needs a symmetric one.
    out.t = triple.multilinear(out.w, out.w, out.w).symmetrized();
    return out;
}

EigenPairs tensor_power_method(const Tensor3& t, int states, const PowerMethodOptions& options, Rng& rng) {
    const int d = t.dim(0);
    if (t.dim(1) != d || t.dim(2) != d) throw InvalidArgument("tensor power method needs a cubic tensor");
    if (options.restarts < 1 || options.iterations < 1) throw InvalidArgument("power method needs restarts, iterations >= 1");
    Tensor3 work = t;
    EigenPairs out{Eigen::VectorXd(states), Eigen::MatrixXd(d, states), 0.0};
    std::normal_distribution<double> normal(0.0, 1.0);

    auto iterate = [&](Eigen::VectorXd u, double& last_move) {
        last_move = std::numeric_limits<double>::infinity();
        for (int it = 0; it < options.iterations; ++it) {
            Eigen::VectorXd next = work.contract_two(u);
            const double norm = next.norm();
            if (!(norm > 0.0)) break;
            next /= norm;
            last_move = (next - u).norm();
            u = std::move(next);
        }
        return u;
    };

    for (int round = 0; round < states; ++round) {
        double best_lambda = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd best_u;
        bool any_converged = false;
        for (int restart = 0; restart < options.restarts; ++restart) {
            Eigen::VectorXd u(d);
            for (int i = 0; i < d; ++i) u(i) = normal(rng);
            u.normalize();
            double move = 0.0;
            u = iterate(std::move(u), move);
            if (move <= 1e-6) any_converged = true;
            double lambda = work.contract_three(u);
            if (lambda < 0.0) {
                u = -u;
                lambda = -lambda;
            }
            if (lambda > best_lambda) {
                best_lambda = lambda;
                best_u = u;
            }
        }
        if (!any_converged)
            throw NonConvergence("no restart converged in deflation round " + std::to_string(round));
        double move = 0.0;
        best_u = iterate(std::move(best_u), move);
        best_lambda = work.contract_three(best_u);
        if (best_lambda < 0.0) {
            best_u = -best_u;
            best_lambda = -best_lambda;
        }
        out.values(round) = best_lambda;
        out.vectors.col(round) = best_u;
        work.subtract_rank_one(best_lambda, best_u);
    }
    out.deflation_residual = work.frobenius_norm();
    return out;
}

Eigen::MatrixXd dewhiten(const EigenPairs& pairs, const WhitenedTensor& whitened) {
    return whitened.w_pinv * pairs.vectors * pairs.values.asDiagonal();
}

SpectralEstimate recover_parameters(const Eigen::MatrixXd& xi_third, const Eigen::MatrixXd& xi_second,
                                    const std::optional<Reference>& reference,
                                    const std::optional<ViewWeights>& weights) {
    const int r = static_cast<int>(xi_second.cols());
    if (reference) {
        const std::vector<int> tau2 = align_columns(xi_second, reference->omega);
        const std::vector<int> tau3 = align_columns(xi_third, reference->omega * reference->q.transpose());
        return finish(permute_columns(xi_second, tau2), permute_columns(xi_third, tau3), tau2);
    }
    // No reference: keep second-view labels. Any row permutation of Q is
    // stochastic, so the third-view labels come from the state weights: both
    // views estimate the same weights, which must also be stationary for Q.
    if (!weights || weights->second.size() != r || weights->third.size() != r)
        throw InvalidArgument("label fixing needs a reference or the state weights of both views");
    const Eigen::VectorXd p = weights->second / weights->second.sum();
    const Eigen::VectorXd p3 = weights->third / weights->third.sum();
    const Eigen::MatrixXd omega = xi_second;
    const Eigen::MatrixXd omega_pinv = pinv_checked_omega(omega);
    std::vector<int> identity(r);
    for (int i = 0; i < r; ++i) identity[i] = i;
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> best_tau = identity;
    for (const auto& tau : all_permutations(r)) {
        const Eigen::MatrixXd q_hat = (omega_pinv * permute_columns(xi_third, tau)).transpose();
        Eigen::VectorXd p3_tau(r);
        for (int i = 0; i < r; ++i) p3_tau(i) = p3(tau[i]);
        const double score = (p3_tau - p).squaredNorm() + (q_hat.transpose() * p - p).squaredNorm() +
                             (q_hat.rowwise().sum() - Eigen::VectorXd::Ones(r)).squaredNorm() +
                             q_hat.cwiseMin(0.0).squaredNorm();
        if (score < best) {
            best = score;
            best_tau = tau;
        }
    }
    return finish(omega, permute_columns(xi_third, best_tau), identity);
}

namespace {

SpectralEstimate run_pipeline(const MomentTensors& first, const MomentTensors& second, int states,
                              const std::optional<Reference>& reference, const SpectralOptions& options) {
    Rng rng(options.seed);
    const SymmetrizedMoments third = symmetrize(first, second, states, SymmetrizeView::Third);
    const SymmetrizedMoments middle = symmetrize(first, second, states, SymmetrizeView::Second);
    const WhitenedTensor w3 = whiten(third.pair, third.triple, states);
    const WhitenedTensor w2 = whiten(middle.pair, middle.triple, states);
    const EigenPairs e3 = tensor_power_method(w3.t, states, options.power, rng);
    const EigenPairs e2 = tensor_power_method(w2.t, states, options.power, rng);
    // lambda_i = p_i^{-1/2} in both views.
    const ViewWeights weights{e2.values.array().square().inverse().matrix(), e3.values.array().square().inverse().matrix()};
    SpectralEstimate est = recover_parameters(dewhiten(e3, w3), dewhiten(e2, w2), reference, weights);
    est.singular_values.assign(w3.eigenvalues.data(), w3.eigenvalues.data() + w3.eigenvalues.size());
    est.deflation_residual = std::max(e3.deflation_residual, e2.deflation_residual);
    return est;
}

}  // namespace

SpectralEstimate spectral_estimate(const CoarsenedSeries& bins, int kappa, int states,
                                   const std::optional<Reference>& reference, const SpectralOptions& options) {
    const std::size_t n = bins.size();
    const std::size_t half = (n + 1) / 2;
    if (half < 3 || n - half < 3) throw TooShort("spectral estimation needs at least 6 observations");
    const CoarsenedSeries first(bins.begin(), bins.begin() + static_cast<std::ptrdiff_t>(half));
    const CoarsenedSeries second(bins.begin() + static_cast<std::ptrdiff_t>(half), bins.end());
    return run_pipeline(empirical_tensors(first, kappa), empirical_tensors(second, kappa), states, reference, options);
}

SpectralEstimate spectral_estimate_population(const TransitionMatrix& q, const Eigen::MatrixXd& omega,
                                              const std::optional<Reference>& reference,
                                              const SpectralOptions& options) {
    const MomentTensors pop = population_tensors(q, omega);
    return run_pipeline(pop, pop, q.states(), reference, options);
}

}  // namespace cuthmm
