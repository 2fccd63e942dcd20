#include <cmath>

#include "doctest.h"
#include "oracles.hpp"

#include "cuthmm/diagnostics.hpp"
#include "cuthmm/errors.hpp"
#include "cuthmm/stats.hpp"

using namespace cuthmm;

namespace {

Eigen::MatrixXd truth_q() {
    Eigen::MatrixXd q(2, 2);
    q << 0.7, 0.3, 0.2, 0.8;
    return q;
}

CoarsenedSeries simulate_bins(const Eigen::MatrixXd& q, const Eigen::MatrixXd& omega, int n, Rng& rng) {
    const int r = static_cast<int>(q.rows());
    std::vector<EmissionSampler> samplers;
    for (int s = 0; s < r; ++s) {
        const Eigen::VectorXd col = omega.col(s);
        samplers.push_back([col](Rng& g) {
            std::vector<double> w(col.data(), col.data() + col.size());
            return static_cast<double>(categorical_draw(g, w));
        });
    }
    const auto sim = simulate_hmm(TransitionMatrix(q), samplers, n, rng);
    CoarsenedSeries bins(sim.observations.size());
    for (std::size_t t = 0; t < bins.size(); ++t) bins[t] = static_cast<int>(sim.observations[t]);
    return bins;
}

}  // namespace

TEST_SUITE("diagnostics") {

TEST_CASE("stats helpers") {
    CHECK(normal_quantile(0.95) == doctest::Approx(1.6448536).epsilon(1e-7));
    CHECK(normal_cdf(0.0) == 0.5);
    CHECK(chi_square_sf(3.841458820694124, 1.0) == doctest::Approx(0.05).epsilon(1e-9));
    const std::vector<double> x{0.0, 1.0};
    const std::vector<double> f{1.0, 3.0};
    CHECK(trapezoid(x, f) == 2.0);
    Rng rng(1);
    std::vector<double> z(5000);
    for (auto& v : z) v = normal_draw(rng, 0.0, 1.0);
    CHECK(ks_statistic_normal(z) < 1.36 / std::sqrt(5000.0));
    for (auto& v : z) v += 0.5;
    CHECK(ks_statistic_normal(z) > 0.15);
    std::vector<double> iid(10000);
    for (auto& v : iid) v = normal_draw(rng, 0.0, 1.0);
    CHECK(batch_means_se(iid) == doctest::Approx(0.01).epsilon(0.25));
}

TEST_CASE("EM with identity emissions recovers transition frequencies") {
    Rng rng(3);
    const Eigen::MatrixXd omega = Eigen::MatrixXd::Identity(2, 2);
    const CoarsenedSeries bins = simulate_bins(truth_q(), omega, 3000, rng);
    Eigen::MatrixXd freq = Eigen::MatrixXd::Zero(2, 2);
    for (std::size_t t = 1; t < bins.size(); ++t) freq(bins[t - 1], bins[t]) += 1.0;
    for (int i = 0; i < 2; ++i) freq.row(i) /= freq.row(i).sum();
    // Identity emissions pin the path, so one step lands on the frequencies
    // and the next leaves them unchanged.
    const auto mle = baum_welch(bins, 2, 2, Eigen::MatrixXd::Constant(2, 2, 0.5), omega);
    CHECK(mle.converged);
    CHECK(mle.iterations <= 2);
    CHECK((mle.q_hat - freq).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((mle.omega_hat - omega).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("EM is monotone and reports non-convergence") {
    Rng rng(4);
    const auto part = build_partition(TransformG0::sigmoid_linear(), 3);
    Eigen::MatrixXd omega(8, 2);
    omega.col(0) = oracle::normal_bin_probs(part.edges(), -1.0, 1.0);
    omega.col(1) = oracle::normal_bin_probs(part.edges(), 1.0, 1.0);
    const CoarsenedSeries bins = simulate_bins(truth_q(), omega, 2000, rng);
    const auto [q0, w0] = default_em_start(bins, 2, 8);
    const auto mle = baum_welch(bins, 2, 8, q0, w0);
    CHECK(mle.converged);
    for (std::size_t k = 1; k < mle.trace.size(); ++k)
        CHECK(mle.trace[k] >= mle.trace[k - 1] - 1e-10 * std::abs(mle.trace[k - 1]));
    const auto capped = baum_welch(bins, 2, 8, q0, w0, {1e-12, 3});
    CHECK_FALSE(capped.converged);
    CHECK(capped.iterations == 3);
}

TEST_CASE("free-coordinate packing round trip") {
    Rng rng(5);
    const Eigen::MatrixXd q = oracle::random_stochastic(rng, 3, 3);
    const Eigen::MatrixXd omega = oracle::random_stochastic(rng, 3, 5).transpose();
    const Eigen::VectorXd theta = pack_free(q, omega);
    CHECK(theta.size() == 3 * 2 + 3 * 4);
    const auto [q2, w2] = unpack_free(theta, 3, 5);
    CHECK((q2 - q).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((w2 - omega).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("observed information with identity emissions") {
    // Nearly deterministic emissions: kappa = R, omega close to identity
    // keeps the MLE interior. The Q block then approaches the multinomial
    // information of the transition frequencies, p_r / Q_rs + p_r / Q_rR.
    Rng rng(6);
    Eigen::MatrixXd omega(2, 2);
    omega << 0.999, 0.001, 0.001, 0.999;
    const CoarsenedSeries bins = simulate_bins(truth_q(), omega, 50000, rng);
    const auto [q0, w0] = default_em_start(bins, 2, 2);
    const auto mle = baum_welch(bins, 2, 2, q0, w0, {1e-10, 5000});
    const auto aligned = align_mle(mle, truth_q(), omega);
    const auto fisher = observed_information(bins, aligned, 1e-5);
    const Eigen::Vector2d p(0.4, 0.6);
    for (int r = 0; r < 2; ++r) {
        const double expected = p(r) / truth_q()(r, 0) + p(r) / truth_q()(r, 1);
        CHECK(fisher.j(r, r) == doctest::Approx(expected).epsilon(0.05));
    }
    CHECK((fisher.j - fisher.j.transpose()).cwiseAbs().maxCoeff() <= 1e-4 * fisher.j.cwiseAbs().maxCoeff());
}

TEST_CASE("observed information symmetry and step stability") {
    Rng rng(7);
    const auto part = build_partition(TransformG0::sigmoid_linear(), 2);
    Eigen::MatrixXd omega(4, 2);
    omega.col(0) = oracle::normal_bin_probs(part.edges(), -1.0, 1.0);
    omega.col(1) = oracle::normal_bin_probs(part.edges(), 1.0, 1.0);
    const CoarsenedSeries bins = simulate_bins(truth_q(), omega, 5000, rng);
    const auto [q0, w0] = default_em_start(bins, 2, 4);
    const auto mle = baum_welch(bins, 2, 4, q0, w0);
    const auto f1 = observed_information(bins, mle, 1e-4);
    const auto f2 = observed_information(bins, mle, 5e-5);
    CHECK((f1.j - f1.j.transpose()).cwiseAbs().maxCoeff() <= 1e-4 * f1.j.cwiseAbs().maxCoeff());
    CHECK((f1.j_tilde_inv - f2.j_tilde_inv).cwiseAbs().maxCoeff() <= 0.01 * f1.j_tilde_inv.cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(f1.j);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-4 * eig.eigenvalues().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_t(f1.j_tilde_inv);
    CHECK(eig_t.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("observed information holds boundary emission weights fixed") {
    Rng rng(11);
    Eigen::MatrixXd omega(3, 2);
    omega << 0.6, 0.0, 0.4, 0.3, 0.0, 0.7;
    const CoarsenedSeries bins = simulate_bins(truth_q(), omega, 4000, rng);
    const auto mle = baum_welch(bins, 2, 3, truth_q(), omega);
    CHECK(mle.omega_hat(2, 0) == 0.0);
    CHECK(mle.omega_hat(0, 1) == 0.0);
    const auto fisher = observed_information(bins, mle);
    CHECK(fisher.fixed_coordinates == 2);
    CHECK(fisher.j.rows() == 2 + 2);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fisher.j_tilde_inv);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
    MleResult edge = mle;
    edge.q_hat << 1.0, 0.0, 0.2, 0.8;
    CHECK_THROWS_AS(observed_information(bins, edge), DomainError);
}

TEST_CASE("normal-approximation report on exact Gaussian draws") {
    Rng rng(8);
    MleResult mle;
    mle.q_hat = truth_q();
    mle.omega_hat = Eigen::MatrixXd::Constant(2, 2, 0.5);
    FisherEstimate fisher;
    fisher.j_tilde_inv = Eigen::Matrix2d::Identity() * 0.5;
    const long n = 2000;
    DrawStore store;
    const int draws = 4000;
    for (int d = 0; d < draws; ++d) {
        Eigen::MatrixXd q = truth_q();
        q(0, 0) += normal_draw(rng, 0.0, std::sqrt(0.5 / n));
        q(1, 0) += normal_draw(rng, 0.0, std::sqrt(0.5 / n));
        q(0, 1) = 1.0 - q(0, 0);
        q(1, 1) = 1.0 - q(1, 0);
        store.push_back(q, Eigen::MatrixXd(), 0.0, d);
    }
    const auto rep = bvm_compare(store, mle, fisher, n);
    REQUIRE(rep.ks.size() == 2);
    for (double ks : rep.ks) CHECK(ks <= 1.36 / std::sqrt(static_cast<double>(draws)));
    CHECK(rep.cov_ratio_min > 0.9);
    CHECK(rep.cov_ratio_max < 1.1);

    // Relabeling store, MLE and information together leaves the report unchanged.
    const std::vector<int> swap{1, 0};
    DrawStore swapped = store;
    for (auto& q : swapped.q) q = permute_transition(q, swap);
    MleResult mle_s = mle;
    mle_s.q_hat = permute_transition(mle.q_hat, swap);
    FisherEstimate fisher_s = fisher;  // Q00 <-> 1 - Q11, Q10 <-> 1 - Q01: same covariance up to order
    Eigen::Matrix2d a;
    a << 0.0, -1.0, -1.0, 0.0;
    fisher_s.j_tilde_inv = a * fisher.j_tilde_inv * a.transpose();
    const auto rep_s = bvm_compare(swapped, mle_s, fisher_s, n);
    CHECK(rep_s.ks[0] == doctest::Approx(rep.ks[1]).epsilon(1e-9));
    CHECK(rep_s.ks[1] == doctest::Approx(rep.ks[0]).epsilon(1e-9));
    CHECK(rep_s.cov_ratio_max == doctest::Approx(rep.cov_ratio_max).epsilon(1e-9));
}

TEST_CASE("refinement monotonicity") {
    Rng rng(9);
    auto make = [&](double sd) {
        DrawStore s;
        for (int d = 0; d < 3000; ++d) {
            Eigen::MatrixXd q = truth_q();
            const double e0 = normal_draw(rng, 0.0, sd), e1 = normal_draw(rng, 0.0, sd);
            q(0, 0) += e0;
            q(0, 1) -= e0;
            q(1, 0) += e1;
            q(1, 1) -= e1;
            s.push_back(q, Eigen::MatrixXd(), 0.0, d);
        }
        return s;
    };
    CHECK(refinement_monotonicity({{4, make(0.02)}}).monotone);
    CHECK(refinement_monotonicity({{2, make(0.02)}, {4, make(0.02)}, {8, make(0.02)}}).monotone);
    CHECK(refinement_monotonicity({{2, make(0.03)}, {4, make(0.02)}, {8, make(0.015)}}).monotone);
    CHECK_FALSE(refinement_monotonicity({{2, make(0.02)}, {4, make(0.03)}}).monotone);
}

TEST_CASE("L1 density error") {
    std::vector<double> grid(4001);
    for (std::size_t g = 0; g < grid.size(); ++g) grid[g] = -10.0 + 20.0 * static_cast<double>(g) / 4000.0;
    RowMatrix a(2, 4001), b(2, 4001);
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const auto gi = static_cast<Eigen::Index>(g);
        a(0, gi) = oracle::normal_pdf(grid[g], 0.0, 1.0);
        a(1, gi) = oracle::normal_pdf(grid[g], 3.0, 1.0);
        b(0, gi) = oracle::normal_pdf(grid[g], 0.1, 1.0);
        b(1, gi) = oracle::normal_pdf(grid[g], 3.0, 1.0);
    }
    const auto self = l1_density_error(a, a, grid);
    CHECK(self.per_state[0] < 1e-6);
    const auto shifted = l1_density_error(a, b, grid);
    const double expect = 2.0 * (oracle::normal_cdf(0.05) - oracle::normal_cdf(-0.05));
    CHECK(shifted.per_state[0] == doctest::Approx(expect).epsilon(1e-3 / expect));
    CHECK(std::abs(shifted.per_state[0] - 0.0797) < 1e-3);
    // Symmetric and label-free.
    RowMatrix a_swapped(2, 4001);
    a_swapped.row(0) = a.row(1);
    a_swapped.row(1) = a.row(0);
    const auto perm = l1_density_error(a_swapped, b, grid);
    CHECK(perm.permutation == std::vector<int>{1, 0});
    CHECK(perm.per_state[0] == doctest::Approx(l1_density_error(b, a, grid).per_state[0]).epsilon(1e-12));
}

TEST_CASE("smoothing error") {
    Rng rng(10);
    const auto sim = simulate_hmm(TransitionMatrix(truth_q()),
                                  {[](Rng& g) { return normal_draw(g, -1.0, 1.0); },
                                   [](Rng& g) { return normal_draw(g, 1.0, 1.0); }},
                                  200, rng);
    RowMatrix logs(200, 2);
    for (int t = 0; t < 200; ++t) {
        logs(t, 0) = std::log(oracle::normal_pdf(sim.observations[static_cast<std::size_t>(t)], -1.0, 1.0));
        logs(t, 1) = std::log(oracle::normal_pdf(sim.observations[static_cast<std::size_t>(t)], 1.0, 1.0));
    }
    const EmissionLogDensityTable table(logs);
    const RowMatrix oracle_s = smoothing_probabilities(TransitionMatrix(truth_q()), table);
    const auto same = smoothing_error({oracle_s, oracle_s}, oracle_s);
    CHECK(same.posterior_mean_tv == 0.0);

    Eigen::MatrixXd bumped = truth_q();
    bumped(0, 0) += 0.01;
    bumped.row(0) /= bumped.row(0).sum();
    const RowMatrix pert = smoothing_probabilities(TransitionMatrix(bumped), table);
    const auto rep = smoothing_error({pert}, oracle_s);
    CHECK(rep.posterior_mean_tv > 0.0);
    CHECK(rep.posterior_mean_tv <= 0.05);
    // Direct computation oracle.
    double direct = 0.0;
    for (int t = 0; t < 200; ++t) direct += std::abs(pert(t, 0) - oracle_s(t, 0));
    CHECK(rep.posterior_mean_tv == doctest::Approx(direct / 200.0).epsilon(1e-12));
}

}
