#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"

#include "cuthmm/errors.hpp"
#include "cuthmm/partition.hpp"

using namespace cuthmm;

TEST_SUITE("partition") {

TEST_CASE("sigmoid-linear constants") {
    const auto g = TransformG0::sigmoid_linear();
    const double s3 = 1.0 / (1.0 + std::exp(-3.0));
    CHECK(g.zeta() == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(g.eta() == doctest::Approx((s3 - (1.0 - s3)) / 6.0).epsilon(1e-14));
    CHECK(g.eta() == doctest::Approx(0.150858).epsilon(1e-6));
    CHECK(g.eval(0.0) == doctest::Approx(0.5).epsilon(1e-15));
    // Continuity at the joins.
    CHECK(std::abs(g.eval(3.0 - 1e-12) - g.eval(3.0 + 1e-12)) < 1e-10);
    CHECK(std::abs(g.eval(-3.0 - 1e-12) - g.eval(-3.0 + 1e-12)) < 1e-10);
}

TEST_CASE("transform symmetry, round trip and monotonicity") {
    for (const auto& g : {TransformG0::sigmoid_linear(), TransformG0::pure_sigmoid()}) {
        for (double y : {-9.0, -3.0, -2.5, -0.1, 0.0, 0.7, 1.7, 3.0, 4.2, 12.0}) {
            CHECK(g.eval(-y) == doctest::Approx(1.0 - g.eval(y)).epsilon(1e-13));
            CHECK(std::abs(g.inverse(g.eval(y)) - y) < 1e-10);
        }
        double prev = -1.0;
        for (double y = -10.0; y <= 10.0; y += 0.01) {
            CHECK(g.eval(y) > prev);
            prev = g.eval(y);
        }
    }
}

TEST_CASE("inverse domain") {
    const auto g = TransformG0::sigmoid_linear();
    CHECK_THROWS_AS(g.inverse(0.0), DomainError);
    CHECK_THROWS_AS(g.inverse(1.0), DomainError);
    CHECK_THROWS_AS(g.inverse(-0.2), DomainError);
}

TEST_CASE("dyadic partitions") {
    const auto g = TransformG0::sigmoid_linear();
    const auto p1 = build_partition(g, 1);
    CHECK(p1.bins() == 2);
    CHECK(std::abs(p1.edges()[1]) < 1e-12);
    CHECK(build_partition(g, 3).bins() == 8);
    CHECK(p1.unit_width() == 0.5);
    for (int m = 1; m < 6; ++m) {
        const auto coarse = build_partition(g, m);
        const auto fine = build_partition(g, m + 1);
        CHECK(coarse.edges().front() == -std::numeric_limits<double>::infinity());
        CHECK(coarse.edges().back() == std::numeric_limits<double>::infinity());
        for (std::size_t k = 0; k < coarse.edges().size(); ++k) {
            if (std::isinf(coarse.edges()[k])) continue;
            CHECK(std::abs(coarse.edges()[k] - fine.edges()[2 * k]) < 1e-12);
        }
        CHECK(std::is_sorted(fine.edges().begin(), fine.edges().end()));
    }
    CHECK_THROWS(build_partition(g, 0));
}

TEST_CASE("coarsening") {
    const auto p2 = build_partition(TransformG0::sigmoid_linear(), 2);
    const std::vector<double> y{0.0, -1e300, 1e300, -std::numeric_limits<double>::infinity()};
    const auto b = coarsen(p2, y);
    CHECK(b[0] == 2);  // G0(0) = 0.5 opens the third bin
    CHECK(b[1] == 0);
    CHECK(b[2] == 3);
    CHECK(b[3] == 0);

    const auto p5 = build_partition(TransformG0::sigmoid_linear(), 5);
    Rng rng(3);
    std::vector<double> sample(2000);
    for (auto& v : sample) v = normal_draw(rng, 0.0, 3.0);
    std::sort(sample.begin(), sample.end());
    const auto bins = coarsen(p5, sample);
    CHECK(std::is_sorted(bins.begin(), bins.end()));
    std::vector<int> counts(32, 0);
    for (int k : bins) {
        REQUIRE(k >= 0);
        REQUIRE(k < 32);
        ++counts[static_cast<std::size_t>(k)];
    }
    int total = 0;
    for (int c : counts) total += c;
    CHECK(total == 2000);
}

TEST_CASE("bin probabilities sum to one") {
    const auto p = build_partition(TransformG0::sigmoid_linear(), 4);
    CHECK(oracle::normal_bin_probs(p.edges(), 0.3, 1.2).sum() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("admissibility") {
    const auto p1 = build_partition(TransformG0::sigmoid_linear(), 1);
    const CdfFunction f1 = [](double y) { return oracle::normal_cdf(y, -1.0, 1.0); };
    const CdfFunction f2 = [](double y) { return oracle::normal_cdf(y, 1.0, 1.0); };
    const auto ok = admissibility_check(p1, {f1, f2});
    CHECK(ok.rank == 2);
    CHECK(ok.admissible);
    // Determinant oracle of the 2 x 2 bin-probability matrix.
    const double det = oracle::normal_cdf(1.0) * (1.0 - oracle::normal_cdf(-1.0)) -
                       (1.0 - oracle::normal_cdf(1.0)) * oracle::normal_cdf(-1.0);
    CHECK(std::abs(det) > 0.1);
    CHECK(ok.singular_values[0] * ok.singular_values[1] == doctest::Approx(std::abs(det)).epsilon(1e-10));

    const auto dup = admissibility_check(build_partition(TransformG0::sigmoid_linear(), 3), {f1, f1});
    CHECK(dup.rank < 2);
    CHECK_FALSE(dup.admissible);
    CHECK(admissibility_check(p1, {f2}).rank == 1);
}

}
