#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"

#include "cuthmm/errors.hpp"
#include "cuthmm/io.hpp"

using namespace cuthmm;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "cuthmm_io_tests";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("missing artifacts name the path") {
    const fs::path p = scratch("does_not_exist.csv");
    fs::remove(p);
    try {
        require_file(p);
        FAIL("expected MissingArtifact");
    } catch (const MissingArtifact& e) {
        CHECK(std::string(e.what()).find(p.string()) != std::string::npos);
    }
    CHECK_THROWS_AS(read_json(p), MissingArtifact);
    CHECK_THROWS_AS(read_csv(p), MissingArtifact);
}

TEST_CASE("matrices and partitions") {
    Rng rng(1);
    const Eigen::MatrixXd m = oracle::random_stochastic(rng, 3, 4);
    CHECK(matrix_from_json(matrix_to_json(m)) == m);
    const auto part = build_partition(TransformG0::sigmoid_linear(), 3);
    const Json j = partition_to_json(part);
    CHECK(j["edges"].front() == "-inf");
    CHECK(j["edges"].back() == "inf");
    const auto back = partition_from_json(j);
    CHECK(back.edges() == part.edges());
    const fs::path p = scratch("part.json");
    write_json(p, j);
    CHECK(read_json(p) == j);
}

TEST_CASE("series and paths") {
    const std::vector<double> y{0.1, -2.5, 1e-300, 3.0 / 7.0};
    const fs::path p = scratch("y.csv");
    write_series(p, y);
    CHECK(read_series(p) == y);
    const LatentPath x{0, 1, 1, 0};
    write_path(scratch("x.csv"), x);
    CHECK(read_path(scratch("x.csv")) == x);
    write_text(scratch("bare.csv"), "0.5\n-1\n");
    CHECK(read_series(scratch("bare.csv")) == std::vector<double>{0.5, -1.0});
}

TEST_CASE("draw store round trip") {
    Rng rng(2);
    DrawStore s;
    s.seed = 42;
    s.config = Pi1Config{100, 20, 4, 42};
    s.states = 2;
    s.bins = 4;
    s.partition_level = 2;
    for (int k = 0; k < 5; ++k)
        s.push_back(oracle::random_stochastic(rng, 2, 2), oracle::random_stochastic(rng, 2, 4).transpose(),
                    -10.0 * k - 0.125, 20 + 4 * k);
    s.relabeling[3] = {1, 0};
    s.relabel_reference_index = 2;
    const fs::path csv = scratch("q.csv"), js = scratch("q.json");
    write_draw_store(s, csv, js, partition_to_json(build_partition(TransformG0::sigmoid_linear(), 2)));
    const DrawStore b = read_draw_store(csv, js);
    REQUIRE(b.size() == s.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
        CHECK(b.q[k] == s.q[k]);
        CHECK(b.omega[k] == s.omega[k]);
        CHECK(b.log_posterior[k] == s.log_posterior[k]);
        CHECK(b.iteration[k] == s.iteration[k]);
        CHECK(b.relabeling[k] == s.relabeling[k]);
    }
    CHECK(b.seed == 42);
    CHECK(b.relabel_reference_index == 2);
    CHECK(b.config.iterations == 100);
    CHECK(b.bins == 4);
    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header.rfind("iter,Q_1_1,Q_1_2,Q_2_1,Q_2_2,omega_1_1,", 0) == 0);
    CHECK(header.find(",omega_4_2,log_posterior,relabel") != std::string::npos);
}

TEST_CASE("emission and density artifacts") {
    Rng rng(3);
    std::vector<DpmDraw> draws(2);
    for (auto& d : draws) {
        d.mu = Eigen::MatrixXd::Random(3, 2);
        d.v = Eigen::Vector2d(0.5, 1.25);
        d.w = oracle::random_stochastic(rng, 2, 3).transpose();
    }
    write_emission_draws(draws, scratch("em.csv"));
    const auto eb = read_emission_draws(scratch("em.csv"));
    REQUIRE(eb.size() == 2);
    for (std::size_t k = 0; k < 2; ++k) {
        CHECK(eb[k].mu == draws[k].mu);
        CHECK(eb[k].v == draws[k].v);
        CHECK(eb[k].w == draws[k].w);
    }

    DensityGridDraws dens;
    dens.grid = {-1.0, 0.0, 1.0};
    for (int k = 0; k < 3; ++k) dens.values.push_back(RowMatrix::Random(2, 3).cwiseAbs());
    write_density_draws(dens, scratch("dens.csv"));
    const auto table = read_csv(scratch("dens.csv"));
    CHECK(table.column("density") == 4);
    CHECK_THROWS(table.column("missing"));
    const auto db = read_density_draws(scratch("dens.csv"));
    CHECK(db.grid == dens.grid);
    REQUIRE(db.values.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) CHECK(db.values[k] == dens.values[k]);

    const auto bands = pointwise_bands(dens, 0.9);
    write_density_bands(bands, dens.grid, scratch("bands.csv"));
    std::vector<double> grid;
    const auto bb = read_density_bands(scratch("bands.csv"), &grid);
    CHECK(grid == dens.grid);
    REQUIRE(bb.size() == bands.size());
    for (std::size_t r = 0; r < bands.size(); ++r) {
        CHECK(bb[r].mean == bands[r].mean);
        CHECK(bb[r].lower == bands[r].lower);
        CHECK(bb[r].upper == bands[r].upper);
    }
}

TEST_CASE("json records") {
    SpectralEstimate est{TransitionMatrix(Eigen::Matrix2d::Identity() * 0.5 + Eigen::Matrix2d::Constant(0.25)),
                         Eigen::MatrixXd::Constant(4, 2, 0.25), {1, 0}, {2.5, 1.5}, 1e-9};
    const auto eb = spectral_from_json(spectral_to_json(est));
    CHECK(eb.q_hat.matrix() == est.q_hat.matrix());
    CHECK(eb.omega_hat == est.omega_hat);
    CHECK(eb.permutation == est.permutation);
    CHECK(eb.singular_values == est.singular_values);
    CHECK(eb.deflation_residual == est.deflation_residual);

    DpmHyper h;
    h.concentration = 2.0;
    h.s_max = 17;
    h.sigma_c2 = 9.0;
    const Json hj = dpm_hyper_to_json(h);
    CHECK(hj.contains("M0"));
    const auto hb = dpm_hyper_from_json(hj);
    CHECK(hb.concentration == 2.0);
    CHECK(hb.s_max == 17);
    CHECK(hb.sigma_c2 == 9.0);

    MleResult mle;
    mle.q_hat = Eigen::Matrix2d::Constant(0.5);
    mle.omega_hat = Eigen::MatrixXd::Constant(4, 2, 0.25);
    mle.initial = Eigen::Vector2d(0.5, 0.5);
    mle.log_likelihood = -123.5;
    mle.iterations = 7;
    mle.converged = true;
    const auto mb = mle_from_json(mle_to_json(mle));
    CHECK(mb.q_hat == mle.q_hat);
    CHECK(mb.omega_hat == mle.omega_hat);
    CHECK(mb.log_likelihood == mle.log_likelihood);
    CHECK(mb.converged);

    BinTuningResult bt;
    bt.recommended_bins = 8;
    bt.accepted = {{4, true}, {8, true}, {16, false}};
    const Json bj = bin_tuning_to_json(bt);
    CHECK(bj["recommended_kappa"] == 8);
    CHECK(bj["accepted"]["16"] == false);
}

}
