#include <fstream>
#include <set>

#include "doctest.h"

#include "cuthmm/errors.hpp"
#include "cuthmm/experiment.hpp"

using namespace cuthmm;

namespace {

long retained(long iterations, long burn_in, long thin) { return (iterations - burn_in) / thin; }

}  // namespace

TEST_SUITE("experiment") {
    TEST_CASE("defaults validate and match the shipped config") {
        const ExperimentConfig d = ExperimentConfig::defaults();
        CHECK_NOTHROW(d.validate());
        std::ifstream in(fs::path(CUTHMM_SOURCE_DIR) / "config" / "study.json");
        REQUIRE(in);
        Json shipped = Json::parse(in);
        shipped.erase("$schema");
        CHECK(shipped == config_to_json(d));
        CHECK(config_to_json(load_config(fs::path(CUTHMM_SOURCE_DIR) / "config" / "study.json")) == shipped);
    }

    TEST_CASE("json round trip preserves the config") {
        Json j = Json::parse(R"({"data": {"n": 600, "sizes": [300, 600]}, "pi2": {"levels": {"300": 2, "600": 3}},
                                 "partition": {"levels": [1, 2, 3], "transform": "pure-sigmoid"}})");
        const ExperimentConfig c = config_from_json(j);
        CHECK(c.data.n == 600);
        CHECK(c.pi2.level_for(300) == 2);
        CHECK(c.partition.transform == "pure-sigmoid");
        CHECK(config_to_json(config_from_json(config_to_json(c))) == config_to_json(c));
    }

    TEST_CASE("invalid configs raise ConfigError") {
        CHECK_THROWS_AS(config_from_json(Json::parse(R"({"data": {"n": 0}})")), ConfigError);
        CHECK_THROWS_AS(config_from_json(Json::parse(R"({"pi1": {"iters": 5}})")), ConfigError);
        CHECK_THROWS_AS(config_from_json(Json::parse(R"({"pi1": {"thin": "ten"}})")), ConfigError);
        CHECK_THROWS_AS(config_from_json(Json::parse(R"({"partition": {"transform": "tanh"}})")), ConfigError);
        CHECK_THROWS_AS(scale_from_string("huge"), ConfigError);
    }

    TEST_CASE("hash ignores the output directory and tracks content") {
        ExperimentConfig a = ExperimentConfig::defaults();
        ExperimentConfig b = a;
        b.outputs.directory = "elsewhere";
        CHECK(config_hash(a) == config_hash(b));
        CHECK(config_hash(a).size() == 16);
        b.seed = a.seed + 1;
        CHECK(config_hash(a) != config_hash(b));
        const RunContext ctx(a);
        CHECK(ctx.run_id == config_hash(a).substr(0, 12));
        CHECK(ctx.run_dir == fs::path("out") / ctx.run_id);
    }

    TEST_CASE("scales divide the study counts") {
        for (const auto& [scale, factor] : {std::pair{Scale::Full, 1L}, {Scale::Desk, 10L}, {Scale::Smoke, 100L}}) {
            ExperimentConfig c = ExperimentConfig::defaults();
            c.pi1.iterations = 7;
            apply_scale(c, scale);
            CHECK(retained(c.pi1.iterations, c.pi1.burn_in, c.pi1.thin) == 7000 / factor);
            CHECK(retained(c.full.iterations, c.full.burn_in, c.full.thin) == 6000 / factor);
            CHECK(c.pi2.interior == 10);
        }
        ExperimentConfig c = ExperimentConfig::defaults();
        c.pi1.iterations = 77;
        apply_scale(c, Scale::AsConfigured);
        CHECK(c.pi1.iterations == 77);
    }

    TEST_CASE("derived seeds are distinct and reproducible") {
        std::set<std::uint64_t> seen;
        for (std::uint64_t stage = 0; stage < 4; ++stage)
            for (std::uint64_t n : {1000u, 2500u, 5000u, 10000u})
                for (std::uint64_t level : {1u, 2u, 3u}) seen.insert(derive_seed(1, {stage, n, level}));
        CHECK(seen.size() == 48);
        CHECK(derive_seed(7, {1, 2}) == derive_seed(7, {1, 2}));
        CHECK(derive_seed(7, {1, 2}) != derive_seed(8, {1, 2}));
    }

    TEST_CASE("artifact paths follow the layout") {
        const RunContext ctx(ExperimentConfig::defaults());
        CHECK(ctx.store_csv(1000, 2) == ctx.run_dir / "pi1" / "n1000_k4" / "draws.csv");
        CHECK(ctx.cut_dir(10000, 4) == ctx.run_dir / "pi2" / "n10000_k16");
        CHECK(ctx.full_dir(2500) == ctx.run_dir / "pi2" / "full" / "n2500");
    }

    TEST_CASE("missing transition store is reported by path") {
        ExperimentConfig c = config_from_json(Json::parse(R"({"data": {"n": 300, "sizes": [300]}})"));
        c.outputs.directory = (fs::temp_directory_path() / "cuthmm_experiment_tests").string();
        fs::remove_all(c.outputs.directory);
        const RunContext ctx(c);
        run_command("simulate", ctx);
        try {
            run_command("fit-emissions", ctx);
            FAIL("expected MissingArtifact");
        } catch (const MissingArtifact& e) {
            CHECK(std::string(e.what()).find("draws.csv") != std::string::npos);
        }
    }
}
