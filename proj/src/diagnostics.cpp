#include "cuthmm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cuthmm/errors.hpp"
#include "cuthmm/stats.hpp"

namespace cuthmm {

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> default_em_start(const CoarsenedSeries& bins, int states, int kappa) {
    if (states < 1 || kappa < 1) throw InvalidArgument("need R >= 1 and kappa >= 1");
    Eigen::MatrixXd q = Eigen::MatrixXd::Constant(states, states, states > 1 ? 0.2 / (states - 1) : 1.0);
    if (states > 1) q.diagonal().setConstant(0.8);
    Eigen::VectorXd counts = Eigen::VectorXd::Ones(kappa);
    for (int b : bins) {
        if (b < 0 || b >= kappa) throw InvalidArgument("bin index out of range");
        counts(b) += 1.0;
    }
    Eigen::MatrixXd omega(kappa, states);
    for (int r = 0; r < states; ++r) {
        const double centre = states > 1 ? static_cast<double>(r) / (states - 1) - 0.5 : 0.0;
        for (int m = 0; m < kappa; ++m) {
            const double pos = kappa > 1 ? static_cast<double>(m) / (kappa - 1) - 0.5 : 0.0;
            omega(m, r) = counts(m) * std::exp(2.0 * centre * pos);
        }
        omega.col(r) /= omega.col(r).sum();
    }
    return {q, omega};
}

namespace {

struct ForwardBackward {
    Eigen::MatrixXd alpha;   // n x R, normalized filtered laws
    Eigen::MatrixXd beta;    // n x R, scaled backward messages
    Eigen::VectorXd scale;   // per-step normalizers
    double log_likelihood = 0.0;
};

ForwardBackward forward_backward(const Eigen::MatrixXd& q, const Eigen::MatrixXd& omega, const Eigen::VectorXd& init,
                                 const CoarsenedSeries& bins) {
    const int n = static_cast<int>(bins.size());
    const int r = static_cast<int>(q.rows());
    ForwardBackward fb{Eigen::MatrixXd(n, r), Eigen::MatrixXd(n, r), Eigen::VectorXd(n), 0.0};
    Eigen::RowVectorXd a = init.transpose().cwiseProduct(omega.row(bins[0]));
    for (int t = 0; t < n; ++t) {
        if (t > 0) a = (fb.alpha.row(t - 1) * q).cwiseProduct(omega.row(bins[t]));
        const double c = a.sum();
        if (!(c > 0.0)) throw ZeroLikelihood("observation " + std::to_string(t) + " has zero probability");
        fb.scale(t) = c;
        fb.alpha.row(t) = a / c;
        fb.log_likelihood += std::log(c);
    }
    fb.beta.row(n - 1).setOnes();
    for (int t = n - 2; t >= 0; --t) {
        const Eigen::RowVectorXd e = omega.row(bins[t + 1]).cwiseProduct(fb.beta.row(t + 1));
        fb.beta.row(t) = (q * e.transpose()).transpose() / fb.scale(t + 1);
    }
    return fb;
}

}  // namespace

MleResult baum_welch(const CoarsenedSeries& bins, int states, int kappa, const Eigen::MatrixXd& q_init,
                     const Eigen::MatrixXd& omega_init, const BaumWelchOptions& options) {
    if (bins.empty()) throw TooShort("EM needs at least one observation");
    if (q_init.rows() != states || q_init.cols() != states || omega_init.rows() != kappa || omega_init.cols() != states)
        throw InvalidArgument("EM start has the wrong shape");
    if (options.max_iter < 1 || !(options.tol > 0.0)) throw InvalidArgument("EM needs max_iter >= 1 and tol > 0");
    const int n = static_cast<int>(bins.size());
    for (int b : bins)
        if (b < 0 || b >= kappa) throw InvalidArgument("bin index out of range");

    MleResult out;
    out.q_hat = q_init;
    out.omega_hat = omega_init;
    out.initial = Eigen::VectorXd::Constant(states, 1.0 / states);

    ForwardBackward fb = forward_backward(out.q_hat, out.omega_hat, out.initial, bins);
    out.trace.push_back(fb.log_likelihood);
    for (int it = 1; it <= options.max_iter; ++it) {
        Eigen::MatrixXd trans = Eigen::MatrixXd::Zero(states, states);
        Eigen::MatrixXd emit = Eigen::MatrixXd::Zero(kappa, states);
        for (int t = 0; t < n; ++t) {
            const Eigen::RowVectorXd g = fb.alpha.row(t).cwiseProduct(fb.beta.row(t));
            emit.row(bins[t]) += g / g.sum();
            if (t + 1 < n) {
                const Eigen::RowVectorXd e = out.omega_hat.row(bins[t + 1]).cwiseProduct(fb.beta.row(t + 1));
                trans += (fb.alpha.row(t).transpose() * e).cwiseProduct(out.q_hat) / fb.scale(t + 1);
            }
        }
        const Eigen::RowVectorXd g0 = fb.alpha.row(0).cwiseProduct(fb.beta.row(0));
        out.initial = (g0 / g0.sum()).transpose();
        for (int i = 0; i < states; ++i) {
            const double s = trans.row(i).sum();
            if (s > 0.0) out.q_hat.row(i) = trans.row(i) / s;
            const double e = emit.col(i).sum();
            if (e > 0.0) out.omega_hat.col(i) = emit.col(i) / e;
        }
        fb = forward_backward(out.q_hat, out.omega_hat, out.initial, bins);
        out.trace.push_back(fb.log_likelihood);
        out.iterations = it;
        if (fb.log_likelihood - out.trace[out.trace.size() - 2] < options.tol) {
            out.converged = true;
            break;
        }
    }
    out.log_likelihood = fb.log_likelihood;
    return out;
}

MleResult align_mle(const MleResult& mle, const Eigen::MatrixXd& q_ref, const Eigen::MatrixXd& omega_ref) {
    const int r = static_cast<int>(mle.q_hat.rows());
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> best_perm;
    for (const auto& perm : all_permutations(r)) {
        const double d = relabel_distance(permute_transition(mle.q_hat, perm), permute_columns(mle.omega_hat, perm),
                                          q_ref, omega_ref);
        if (d < best) {
            best = d;
            best_perm = perm;
        }
    }
    MleResult out = mle;
    out.q_hat = permute_transition(mle.q_hat, best_perm);
    out.omega_hat = permute_columns(mle.omega_hat, best_perm);
    Eigen::VectorXd init(r);
    for (int i = 0; i < r; ++i) init(i) = mle.initial(best_perm[i]);
    out.initial = init;
    return out;
}

Eigen::VectorXd pack_free(const Eigen::MatrixXd& q, const Eigen::MatrixXd& omega) {
    const int r = static_cast<int>(q.rows());
    const int kappa = static_cast<int>(omega.rows());
    Eigen::VectorXd theta(r * (r - 1) + r * (kappa - 1));
    for (int i = 0; i < r; ++i)
        for (int s = 0; s + 1 < r; ++s) theta(i * (r - 1) + s) = q(i, s);
    const int offset = r * (r - 1);
    for (int i = 0; i < r; ++i)
        for (int m = 0; m + 1 < kappa; ++m) theta(offset + i * (kappa - 1) + m) = omega(m, i);
    return theta;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> unpack_free(const Eigen::VectorXd& theta, int states, int kappa) {
    if (theta.size() != states * (states - 1) + states * (kappa - 1)) throw InvalidArgument("free vector has wrong length");
    Eigen::MatrixXd q(states, states);
    for (int i = 0; i < states; ++i) {
        double rest = 1.0;
        for (int s = 0; s + 1 < states; ++s) {
            q(i, s) = theta(i * (states - 1) + s);
            rest -= q(i, s);
        }
        q(i, states - 1) = rest;
    }
    const int offset = states * (states - 1);
    Eigen::MatrixXd omega(kappa, states);
    for (int i = 0; i < states; ++i) {
        double rest = 1.0;
        for (int m = 0; m + 1 < kappa; ++m) {
            omega(m, i) = theta(offset + i * (kappa - 1) + m);
            rest -= omega(m, i);
        }
        omega(kappa - 1, i) = rest;
    }
    return {q, omega};
}

double coarsened_log_likelihood(const Eigen::MatrixXd& q, const Eigen::MatrixXd& omega, const CoarsenedSeries& bins) {
    if ((q.array() < 0.0).any() || (omega.array() < 0.0).any())
        throw DomainError("log-likelihood evaluated outside the parameter space");
    const TransitionMatrix tm(q);
    const Eigen::VectorXd p = stationary_distribution(tm).probs();
    return forward_backward(q, omega, p, bins).log_likelihood;
}

FisherEstimate observed_information(const CoarsenedSeries& bins, const MleResult& mle, double step) {
    if (!(step > 0.0)) throw InvalidArgument("finite-difference step must be positive");
    const int r = static_cast<int>(mle.q_hat.rows());
    const int kappa = static_cast<int>(mle.omega_hat.rows());
    if ((mle.q_hat.array() <= 0.0).any()) throw DomainError("transition estimate lies on the boundary of the simplex");

    // Transition coordinates keep the pack_free layout. Each emission column
    // drops its largest entry, which absorbs the perturbations, and holds
    // entries below kBoundaryWeight fixed.
    struct Coordinate {
        int row;
        int col;
        int implied;  // row of the entry that absorbs the perturbation
    };
    std::vector<Coordinate> coords;
    for (int i = 0; i < r; ++i)
        for (int s = 0; s + 1 < r; ++s) coords.push_back({i, s, r - 1});
    const int qd = static_cast<int>(coords.size());
    int fixed = 0;
    for (int i = 0; i < r; ++i) {
        Eigen::Index top = 0;
        mle.omega_hat.col(i).maxCoeff(&top);
        for (int m = 0; m < kappa; ++m) {
            if (m == top) continue;
            if (mle.omega_hat(m, i) < kBoundaryWeight)
                ++fixed;
            else
                coords.push_back({m, i, static_cast<int>(top)});
        }
    }
    const int d = static_cast<int>(coords.size());
    Eigen::VectorXd theta(d), h_step(d);
    for (int c = 0; c < d; ++c) {
        const auto& k = coords[static_cast<std::size_t>(c)];
        const bool is_q = c < qd;
        const double value = is_q ? mle.q_hat(k.row, k.col) : mle.omega_hat(k.row, k.col);
        const double absorb = is_q ? mle.q_hat(k.row, k.implied) : mle.omega_hat(k.implied, k.col);
        theta(c) = value;
        // Steps stay inside the simplex.
        h_step(c) = std::min({step, 0.25 * value, 0.25 * absorb});
    }

    auto ll = [&](const Eigen::VectorXd& point) {
        Eigen::MatrixXd q = mle.q_hat, omega = mle.omega_hat;
        for (int c = 0; c < d; ++c) {
            const auto& k = coords[static_cast<std::size_t>(c)];
            const double delta = point(c) - theta(c);
            if (c < qd) {
                q(k.row, k.col) += delta;
                q(k.row, k.implied) -= delta;
            } else {
                omega(k.row, k.col) += delta;
                omega(k.implied, k.col) -= delta;
            }
        }
        if ((q.array() <= 0.0).any() || (omega.array() < 0.0).any())
            throw DomainError("finite-difference step leaves the parameter space");
        return coarsened_log_likelihood(q, omega, bins);
    };

    const double f0 = ll(theta);
    Eigen::VectorXd plus(d), minus(d);
    for (int i = 0; i < d; ++i) {
        Eigen::VectorXd p = theta;
        p(i) += h_step(i);
        plus(i) = ll(p);
        p(i) = theta(i) - h_step(i);
        minus(i) = ll(p);
    }
    Eigen::MatrixXd h(d, d);
    for (int i = 0; i < d; ++i) {
        h(i, i) = (plus(i) - 2.0 * f0 + minus(i)) / (h_step(i) * h_step(i));
        for (int j = i + 1; j < d; ++j) {
            Eigen::VectorXd p = theta;
            p(i) += h_step(i);
            p(j) += h_step(j);
            const double fpp = ll(p);
            p(j) = theta(j) - h_step(j);
            const double fpm = ll(p);
            p(i) = theta(i) - h_step(i);
            const double fmm = ll(p);
            p(j) = theta(j) + h_step(j);
            const double fmp = ll(p);
            h(i, j) = h(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h_step(i) * h_step(j));
        }
    }
    const double n = static_cast<double>(bins.size());
    FisherEstimate out;
    out.j = -h / n;
    out.step = step;
    out.n = static_cast<long>(bins.size());
    out.fixed_coordinates = fixed;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (out.j + out.j.transpose()));
    const Eigen::VectorXd ev = eig.eigenvalues();
    const double top = ev.cwiseAbs().maxCoeff();
    const double low = ev.cwiseAbs().minCoeff();
    if (!(low > 0.0) || top / low > 1e10)
        throw SingularInformation("observed information has condition number " + std::to_string(top / low));
    const Eigen::MatrixXd inv = out.j.fullPivLu().inverse();
    out.j_tilde_inv = inv.topLeftCorner(qd, qd);
    out.j_tilde_inv = 0.5 * (out.j_tilde_inv + out.j_tilde_inv.transpose()).eval();
    return out;
}

BvmReport bvm_compare(const DrawStore& store, const MleResult& mle, const FisherEstimate& fisher, long n) {
    if (store.size() < 2) throw InvalidArgument("normal-approximation check needs at least two draws");
    const int r = static_cast<int>(mle.q_hat.rows());
    const int qd = r * (r - 1);
    if (fisher.j_tilde_inv.rows() != qd) throw InvalidArgument("information and MLE disagree on R");
    const long draws = static_cast<long>(store.size());
    Eigen::MatrixXd samples(draws, qd);
    for (long k = 0; k < draws; ++k)
        for (int i = 0; i < r; ++i)
            for (int s = 0; s + 1 < r; ++s) samples(k, i * (r - 1) + s) = store.q[static_cast<std::size_t>(k)](i, s);

    BvmReport out;
    out.draws = draws;
    out.n = n;
    for (int i = 0; i < r; ++i)
        for (int s = 0; s + 1 < r; ++s) {
            const int c = i * (r - 1) + s;
            std::vector<double> column(samples.col(c).data(), samples.col(c).data() + draws);
            const double sd = std::sqrt(variance(column));
            for (double& v : column) v = sd > 0.0 ? (v - mle.q_hat(i, s)) / sd : 0.0;
            out.entries.emplace_back(i, s);
            out.ks.push_back(ks_statistic_normal(std::move(column)));
        }
    if (qd == 0) return out;
    // Generalized eigenvalues of n Cov_post against J_tilde^{-1}.
    const Eigen::MatrixXd cov = static_cast<double>(n) * sample_covariance(samples);
    Eigen::LLT<Eigen::MatrixXd> llt(fisher.j_tilde_inv);
    if (llt.info() != Eigen::Success) throw SingularInformation("transition block of the inverse information is not positive definite");
    const Eigen::MatrixXd l = llt.matrixL();
    const Eigen::MatrixXd linv = l.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(qd, qd));
    const Eigen::MatrixXd m = linv * cov * linv.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
    out.cov_eigenvalues = eig.eigenvalues();
    out.cov_ratio_min = out.cov_eigenvalues.minCoeff();
    out.cov_ratio_max = out.cov_eigenvalues.maxCoeff();
    return out;
}

Eigen::MatrixXd posterior_sd(const DrawStore& store) {
    if (store.size() < 2) throw InvalidArgument("posterior sd needs at least two draws");
    const Eigen::Index r = store.q.front().rows();
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(r, r);
    for (const auto& q : store.q) mean += q;
    mean /= static_cast<double>(store.size());
    Eigen::MatrixXd ss = Eigen::MatrixXd::Zero(r, r);
    for (const auto& q : store.q) ss += (q - mean).cwiseAbs2();
    return (ss / static_cast<double>(store.size() - 1)).cwiseSqrt();
}

namespace {

Eigen::MatrixXd mean_q(const DrawStore& store) {
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(store.q.front().rows(), store.q.front().cols());
    for (const auto& q : store.q) mean += q;
    return mean / static_cast<double>(store.size());
}

}  // namespace

RefinementReport refinement_monotonicity(const std::map<int, DrawStore>& stores, double slack) {
    RefinementReport out;
    out.slack = slack;
    if (stores.empty()) return out;
    const Eigen::MatrixXd reference = mean_q(stores.begin()->second);
    for (const auto& [kappa, store] : stores) {
        const Eigen::MatrixXd m = mean_q(store);
        double best = std::numeric_limits<double>::infinity();
        std::vector<int> best_perm;
        for (const auto& perm : all_permutations(static_cast<int>(m.rows()))) {
            const double d = (permute_transition(m, perm) - reference).squaredNorm();
            if (d < best) {
                best = d;
                best_perm = perm;
            }
        }
        out.bins.push_back(kappa);
        out.sds.push_back(permute_transition(posterior_sd(store), best_perm));
    }
    for (std::size_t k = 1; k < out.sds.size(); ++k)
        if ((out.sds[k].array() > (1.0 + slack) * out.sds[k - 1].array()).any()) out.monotone = false;
    return out;
}

L1Report l1_density_error(const RowMatrix& estimate, const RowMatrix& truth, std::span<const double> grid) {
    if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols() ||
        estimate.cols() != static_cast<Eigen::Index>(grid.size()))
        throw InvalidArgument("density curves and grid disagree in shape");
    const int r = static_cast<int>(truth.rows());
    Eigen::MatrixXd dist(r, r);  // dist(a, b): estimate row a vs truth row b
    std::vector<double> diff(grid.size());
    for (int a = 0; a < r; ++a)
        for (int b = 0; b < r; ++b) {
            for (std::size_t g = 0; g < grid.size(); ++g)
                diff[g] = std::abs(estimate(a, static_cast<Eigen::Index>(g)) - truth(b, static_cast<Eigen::Index>(g)));
            dist(a, b) = trapezoid(grid, diff);
        }
    L1Report out;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& perm : all_permutations(r)) {
        double total = 0.0;
        for (int b = 0; b < r; ++b) total += dist(perm[b], b);
        if (total < best) {
            best = total;
            out.permutation = perm;
        }
    }
    for (int b = 0; b < r; ++b) out.per_state.push_back(dist(out.permutation[b], b));
    return out;
}

std::pair<double, double> smoothing_tv(const RowMatrix& a, const RowMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() == 0)
        throw InvalidArgument("smoothing matrices disagree in shape");
    double total = 0.0, worst = 0.0;
    for (Eigen::Index t = 0; t < a.rows(); ++t) {
        const double tv = 0.5 * (a.row(t) - b.row(t)).cwiseAbs().sum();
        total += tv;
        worst = std::max(worst, tv);
    }
    return {total / static_cast<double>(a.rows()), worst};
}

SmoothingReport smoothing_error(const std::vector<RowMatrix>& draw_smoothing, const RowMatrix& oracle) {
    if (draw_smoothing.empty()) throw InvalidArgument("smoothing error needs at least one draw");
    RowMatrix average = RowMatrix::Zero(oracle.rows(), oracle.cols());
    for (const auto& s : draw_smoothing) {
        if (s.rows() != oracle.rows() || s.cols() != oracle.cols())
            throw InvalidArgument("smoothing matrices disagree in shape");
        average += s;
    }
    average /= static_cast<double>(draw_smoothing.size());

    SmoothingReport out;
    const int r = static_cast<int>(oracle.cols());
    double best = std::numeric_limits<double>::infinity();
    for (const auto& perm : all_permutations(r)) {
        const double tv = smoothing_tv(permute_columns(average, perm), oracle).first;
        if (tv < best) {
            best = tv;
            out.permutation = perm;
        }
    }
    const auto [mean_tv, max_tv] = smoothing_tv(permute_columns(average, out.permutation), oracle);
    out.posterior_mean_tv = mean_tv;
    out.posterior_max_tv = max_tv;
    for (const auto& s : draw_smoothing)
        out.per_draw_mean_tv.push_back(smoothing_tv(permute_columns(s, out.permutation), oracle).first);
    return out;
}

std::vector<RowMatrix> cut_smoothing_draws(const DrawStore& store, const std::vector<DpmDraw>& draws,
                                           std::span<const double> y) {
    if (store.size() != draws.size()) throw InvalidArgument("transition and emission draws must pair up");
    std::vector<RowMatrix> out;
    out.reserve(draws.size());
    for (std::size_t k = 0; k < draws.size(); ++k)
        out.push_back(smoothing_probabilities(TransitionMatrix::normalized(store.q[k]),
                                              mixture_log_density_table(draws[k], y)));
    return out;
}

}  // namespace cuthmm
