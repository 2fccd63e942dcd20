#include <cmath>

#include "doctest.h"
#include "oracles.hpp"

#include "cuthmm/errors.hpp"
#include "cuthmm/histogram_gibbs.hpp"
#include "cuthmm/stats.hpp"

using namespace cuthmm;

namespace {

DrawStore gaussian_store(Rng& rng, const Eigen::MatrixXd& centre, double sd, int draws) {
    DrawStore store;
    for (int d = 0; d < draws; ++d) {
        Eigen::MatrixXd q = centre;
        for (int i = 0; i < q.rows(); ++i) {
            const double e = normal_draw(rng, 0.0, sd);
            q(i, 0) += e;
            q(i, 1) -= e;
        }
        store.push_back(q, Eigen::MatrixXd(), 0.0, d);
    }
    return store;
}

Eigen::MatrixXd truth_q() {
    Eigen::MatrixXd q(2, 2);
    q << 0.7, 0.3, 0.2, 0.8;
    return q;
}

}  // namespace

TEST_SUITE("histogram_gibbs") {

TEST_CASE("sufficient counts") {
    const auto c = sufficient_counts({0, 0, 1}, {0, 1, 1}, 2, 2);
    Eigen::MatrixXd n(2, 2), big_n(2, 2);
    n << 1, 1, 0, 0;
    big_n << 1, 0, 1, 1;
    CHECK(c.transitions == n);
    CHECK(c.bin_counts == big_n);

    const auto constant = sufficient_counts({1, 1, 1, 1, 1}, {0, 1, 0, 1, 0}, 2, 2);
    CHECK(constant.transitions(1, 1) == 4.0);
    CHECK(constant.transitions.sum() == 4.0);
    CHECK(sufficient_counts({0}, {1}, 2, 2).transitions.sum() == 0.0);
    CHECK_THROWS(sufficient_counts({0, 1}, {1}, 2, 2));
}

TEST_CASE("sweep without data draws from the prior") {
    Eigen::MatrixXd q0(2, 2);
    q0 << 0.5, 0.5, 0.5, 0.5;
    const auto hyper = DirichletHyper::uniform(2, 2);
    Rng rng(21);
    const int draws = 40000;
    std::vector<double> prior(draws);
    Pi1State s{TransitionMatrix(q0), Eigen::MatrixXd(), LatentPath{}};
    for (auto& v : prior) {
        s = gibbs_sweep(std::move(s), CoarsenedSeries{}, 2, hyper, rng);
        v = s.q(0, 0);
    }
    // Uniform on [0, 1]: mean 1/2, variance 1/12, fourth central moment 1/80.
    CHECK(std::abs(mean(prior) - 0.5) < 3.0 * std::sqrt(1.0 / 12.0 / draws));
    CHECK(std::abs(variance(prior) - 1.0 / 12.0) < 3.0 * std::sqrt((1.0 / 80.0 - 1.0 / 144.0) / draws));
}

TEST_CASE("conditional draws in the sweep use the path counts") {
    const LatentPath x{0, 0, 0, 0, 1, 1};
    const CoarsenedSeries bins{0, 0, 1, 0, 1, 1};
    Eigen::MatrixXd q0(2, 2);
    q0 << 0.5, 0.5, 0.5, 0.5;
    const auto hyper = DirichletHyper::uniform(2, 2);
    Rng rng(5);
    const int draws = 40000;
    std::vector<double> q00(draws), w00(draws);
    for (int d = 0; d < draws; ++d) {
        Pi1State s{TransitionMatrix(q0), Eigen::MatrixXd(), x};
        s = gibbs_sweep(std::move(s), bins, 2, hyper, rng);
        q00[static_cast<std::size_t>(d)] = s.q(0, 0);
        w00[static_cast<std::size_t>(d)] = s.omega(0, 0);
    }
    // Path counts 0->0 three times and 0->1 once: Q(0, .) ~ Dir(1 + 3, 1 + 1),
    // mean 2 / 3, variance 8 / 252.
    CHECK(std::abs(mean(q00) - 2.0 / 3.0) < 3.0 * std::sqrt(8.0 / 252.0 / draws));
    // omega(., 0) ~ Dir(1 + 3, 1 + 1) from bins {0, 0, 1, 0} in state 0.
    CHECK(std::abs(mean(w00) - 4.0 / 6.0) < 3.0 * std::sqrt(8.0 / 252.0 / draws));
    // Fourth central moment of Beta(4, 2) is 1 / 378; se of the sample variance follows.
    const double se_var = std::sqrt((1.0 / 378.0 - std::pow(8.0 / 252.0, 2)) / draws);
    CHECK(std::abs(variance(q00) - 8.0 / 252.0) < 3.0 * se_var);
}

TEST_CASE("run_chain retained draws and determinism") {
    const auto part = build_partition(TransformG0::sigmoid_linear(), 1);
    Rng rng(9);
    std::vector<double> y(60);
    for (auto& v : y) v = normal_draw(rng, 0.0, 1.5);
    const auto bins = coarsen(part, y);
    const auto hyper = DirichletHyper::uniform(2, 2);
    Pi1Config cfg{12, 10, 2, 3};
    CHECK(run_chain(bins, hyper, cfg, 2, part).size() == 1);
    cfg = Pi1Config{150000, 10000, 20, 1};
    CHECK(cfg.retained() == 7000);
    cfg = Pi1Config{300, 100, 4, 77};
    const auto a = run_chain(bins, hyper, cfg, 2, part);
    const auto b = run_chain(bins, hyper, cfg, 2, part);
    REQUIRE(a.size() == 50);
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a.q[k] == b.q[k]);
        CHECK(a.omega[k] == b.omega[k]);
        CHECK(a.iteration[k] == b.iteration[k]);
        CHECK((a.q[k].rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
        CHECK((a.omega[k].colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    }
    CHECK_THROWS_AS(run_chain(bins, hyper, Pi1Config{10, 10, 1, 1}, 2, part), ConfigError);
    CHECK_THROWS_AS(run_chain(bins, hyper, Pi1Config{20, 10, 0, 1}, 2, part), ConfigError);
}

TEST_CASE("log posterior is permutation invariant") {
    Rng rng(12);
    const CoarsenedSeries bins{0, 3, 2, 2, 1, 0, 3, 3, 1};
    const auto hyper = DirichletHyper::uniform(2, 4, 1.5);
    const Eigen::MatrixXd q = oracle::random_stochastic(rng, 2, 2);
    const Eigen::MatrixXd omega = oracle::random_stochastic(rng, 2, 4).transpose();
    const std::vector<int> swap{1, 0};
    CHECK(log_posterior(TransitionMatrix(q), omega, bins, hyper) ==
          doctest::Approx(log_posterior(TransitionMatrix(permute_transition(q, swap)), permute_columns(omega, swap), bins, hyper))
              .epsilon(1e-12));
}

TEST_CASE("relabeling") {
    Rng rng(30);
    DrawStore aligned = gaussian_store(rng, truth_q(), 0.02, 400);
    for (std::size_t k = 0; k < aligned.size(); ++k) aligned.log_posterior[k] = -static_cast<double>(k);
    const DrawStore same = relabel_draws(aligned);
    for (const auto& p : same.relabeling) CHECK(p == std::vector<int>{0, 1});

    DrawStore single;
    single.push_back(truth_q(), Eigen::MatrixXd(), 0.0, 1);
    CHECK(relabel_draws(single).relabeling[0] == std::vector<int>{0, 1});

    DrawStore mixed = aligned;
    const std::vector<int> swap{1, 0};
    for (std::size_t k = 1; k < mixed.size(); k += 2) mixed.q[k] = permute_transition(mixed.q[k], swap);
    const DrawStore fixed = relabel_draws(mixed);
    CHECK(fixed.relabel_reference_index == 0);
    Eigen::MatrixXd even = Eigen::MatrixXd::Zero(2, 2), odd = Eigen::MatrixXd::Zero(2, 2);
    for (std::size_t k = 0; k < fixed.size(); ++k) {
        CHECK(fixed.relabeling[k] == (k % 2 ? swap : std::vector<int>{0, 1}));
        (k % 2 ? odd : even) += fixed.q[k];
    }
    even /= 200.0;
    odd /= 200.0;
    CHECK((even - odd).cwiseAbs().maxCoeff() < 4.0 * 0.02 * std::sqrt(2.0 / 200.0));
}

TEST_CASE("summaries") {
    DrawStore same;
    for (int k = 0; k < 10; ++k) same.push_back(truth_q(), Eigen::MatrixXd(), 0.0, k);
    const auto s = summarize(same, 0.1);
    CHECK(s.lower == truth_q());
    CHECK(s.upper == truth_q());

    Rng rng(40);
    DrawStore g;
    for (int k = 0; k < 20000; ++k) {
        Eigen::MatrixXd q = truth_q();
        q(0, 0) = normal_draw(rng, 0.7, 0.01);
        q(0, 1) = 1.0 - q(0, 0);
        g.push_back(q, Eigen::MatrixXd(), 0.0, k);
    }
    const auto gs = summarize(g, 0.1);
    CHECK(gs.lower(0, 0) == doctest::Approx(0.7 - 0.01 * 1.6448536).epsilon(1e-3));
    CHECK(gs.upper(0, 0) == doctest::Approx(0.7 + 0.01 * 1.6448536).epsilon(1e-3));
    const auto med = summarize(g, 1.0);
    CHECK(med.lower(0, 0) == med.upper(0, 0));
    CHECK(empirical_quantile({1.0, 2.0, 3.0, 4.0}, 0.5) == doctest::Approx(2.5));
}

TEST_CASE("bin tuning heuristic") {
    Rng rng(50);
    std::map<int, DrawStore> tight;
    for (int k : {2, 4, 8, 16}) tight[k] = gaussian_store(rng, truth_q(), 0.01, 2000);
    CHECK(bin_tuning_heuristic(tight, 4).recommended_bins == 16);

    std::map<int, DrawStore> biased = tight;
    Eigen::MatrixXd off = truth_q();
    off(0, 0) += 0.1;
    off(0, 1) -= 0.1;
    biased[8] = gaussian_store(rng, off, 0.01, 2000);
    const auto res = bin_tuning_heuristic(biased, 4);
    CHECK(res.recommended_bins == 4);
    CHECK_FALSE(res.accepted.at(8));
    CHECK_FALSE(res.accepted.at(16));

    // Stores labelled the other way round are aligned first.
    std::map<int, DrawStore> swapped = tight;
    for (auto& q : swapped[16].q) q = permute_transition(q, {1, 0});
    CHECK(bin_tuning_heuristic(swapped, 4).recommended_bins == 16);

    std::map<int, DrawStore> one{{4, tight[4]}};
    CHECK_THROWS_AS(bin_tuning_heuristic(one, 4), InsufficientStores);
    CHECK_THROWS_AS(bin_tuning_heuristic(tight, 32), InsufficientStores);
}

}
