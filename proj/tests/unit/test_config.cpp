#include <filesystem>

#include "doctest.h"
#include "mfnn/config.hpp"
#include "mfnn/error.hpp"
#include "mfnn/experiment.hpp"
#include "mfnn/io.hpp"

using namespace mfnn;
using nlohmann::json;

TEST_CASE("TOML subset") {
    const json j = parse_toml(R"(# experiment
kind = "pde_solve"   # trailing comment
seed = 42
mode = "local_bsde"

[arch]
type = "cylindrical"
outer_hidden = [10, 10,]
latent = 20

[problem]
T = 0.1
kappa = 2e-1
a = -0.5
grid.lo = -1.3
grid.hi = 1.3
grid.K = 200

[solver]
warm_start = false
iterations = 1_000
name = "a \"quoted\" word"
inline = { lo = -1.0, K = 3 }
)");
    CHECK(j["kind"] == "pde_solve");
    CHECK(j["seed"] == 42);
    CHECK(j["arch"]["outer_hidden"] == json::array({10, 10}));
    CHECK(j["problem"]["kappa"].get<double>() == 0.2);
    CHECK(j["problem"]["a"].get<double>() == -0.5);
    CHECK(j["problem"]["grid"]["K"] == 200);
    CHECK(j["solver"]["warm_start"] == false);
    CHECK(j["solver"]["iterations"] == 1000);
    CHECK(j["solver"]["name"] == "a \"quoted\" word");
    CHECK(j["solver"]["inline"]["K"] == 3);

    CHECK_THROWS_AS(parse_toml("x = "), Error);
    CHECK_THROWS_AS(parse_toml("x = 1\nx = 2"), Error);
    CHECK_THROWS_AS(parse_toml("[a\nx = 1"), Error);
    CHECK_THROWS_AS(parse_toml("x = \"open"), Error);
    CHECK_THROWS_AS(parse_toml("x = 1 2"), Error);
    CHECK_THROWS_AS(parse_toml("x = 1\n[x]\ny = 2"), Error);
}

TEST_CASE("experiment configs: defaults and round trip") {
    const ExperimentConfig s = parse_experiment(json{{"kind", "static_fit"}, {"target", "D"}});
    CHECK(s.target == TargetCase::D);
    CHECK(s.train.samples == 10000);
    CHECK(s.train.batch_measures == 20);
    CHECK(s.train.arch.arch == Arch::cylindrical);
    const ExperimentConfig a = parse_experiment(json{{"kind", "static_fit"}, {"target", "A"}});
    CHECK(a.train.samples == 5000);

    const ExperimentConfig p = parse_experiment(
        json{{"kind", "pde_solve"}, {"seed", 3}, {"problem", {{"N_T", 4}}}, {"evaluation", {{"steps", {0, 4}}}}});
    CHECK(p.problem.steps == 4);
    CHECK(p.problem.grid == BinGrid(-1.3, 1.3, 200));
    CHECK(p.solver.seed == 3);

    for (const auto& c : {s, a, p, parse_experiment(json{{"kind", "property_suite"}})}) {
        const json once = to_json(c);
        CHECK(to_json(parse_experiment(once)) == once);
    }
    // A manifest carries its config.
    CHECK(to_json(parse_experiment(json{{"tool", "mfnn"}, {"config", to_json(p)}})) == to_json(p));
}

TEST_CASE("experiment configs: rejections") {
    auto bad = [](const json& j) {
        try {
            parse_experiment(j);
        } catch (const Error& e) {
            return e.kind() == ErrorKind::config_invalid;
        }
        return false;
    };
    CHECK(bad(json{{"kind", "nope"}}));
    CHECK(bad(json::object()));
    CHECK(bad(json{{"kind", "static_fit"}, {"typo", 1}}));
    CHECK(bad(json{{"kind", "static_fit"}, {"training", {{"samples", -5}}}}));
    CHECK(bad(json{{"kind", "static_fit"}, {"training", {{"lr", "fast"}}}}));
    CHECK(bad(json{{"kind", "static_fit"}, {"training", {{"grid", {{"lo", 1}, {"hi", 0}, {"K", 3}}}}}}));
    CHECK(bad(json{{"kind", "static_fit"}, {"target", "Z"}}));
    CHECK(bad(json{{"kind", "pde_solve"}, {"mode", "sideways"}}));
    CHECK(bad(json{{"kind", "pde_solve"}, {"arch", {{"type", "deeponet"}}}}));
    CHECK(bad(json{{"kind", "pde_solve"}, {"evaluation", {{"steps", {11}}}}}));
    CHECK(bad(json{{"kind", "pde_solve"}, {"problem", {{"T", -1.0}}}}));
    CHECK(bad(json{{"kind", "property_suite"}, {"residual", {{"N_T", {5}}}}}));
    CHECK(bad(json{{"kind", "static_fit"}, {"evaluation", {{"tests", {4}}}}}));
}

TEST_CASE("csv and serialization helpers") {
    CHECK(format_double(0.1) == "0.10000000000000001");
    CHECK(format_double(1.0) == "1");
    CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
    CsvTable t({"a", "b"});
    t.add_row({"1", "2"});
    CHECK(t.str() == "a,b\n1,2\n");
    CHECK_THROWS_AS(t.add_row({"1"}), Error);

    const BinDensity d(BinGrid(0.0, 2.0, 2), {0.25, 0.75});
    const json j = to_json(d);
    CHECK(j["K"] == 2);
    const BinDensity back = bin_density_from_json(j);
    CHECK(back.grid() == d.grid());
    CHECK(back.level(1) == 0.75);
    CHECK_THROWS_AS(bin_density_from_json(json{{"lo", 0}, {"hi", 1}, {"K", 2}, {"p", {5.0, 5.0}}}), Error);
}

TEST_CASE("loglog slope") {
    const std::vector<double> x{0.1, 0.01, 0.001};
    const std::vector<double> y{3e-2, 3e-4, 3e-6};
    CHECK(loglog_slope(x, y) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("shipped configs load") {
    std::size_t count = 0;
    for (const auto& e : std::filesystem::directory_iterator(MFNN_CONFIG_DIR)) {
        CAPTURE(e.path().string());
        const ExperimentConfig c = load_experiment(e.path().string());
        CHECK(to_json(parse_experiment(to_json(c))) == to_json(c));
        ++count;
    }
    CHECK(count >= 6);
}
