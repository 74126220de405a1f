#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gbpmap/config.hpp"

using namespace gbpmap;

TEST_CASE("defaults round-trip through the resolved INI text") {
    const Config def;
    const Config back = Config::from_ini(def.to_ini());
    CHECK(back.to_ini() == def.to_ini());
    CHECK(back.content_hash() == def.content_hash());
}

TEST_CASE("values parse into the right sections") {
    const Config cfg = Config::from_ini(
        "[run]\n"
        "steps = 500\n"
        "[comm]\n"
        "d_comm = 0.25\n"
        "boundary_strategy = line\n"
        "[kernel]\n"
        "family = product\n"
        "lengthscale = 0.7\n");
    CHECK(cfg.run.steps == 500);
    CHECK(cfg.comm.d_comm == doctest::Approx(0.25));
    CHECK(cfg.comm.boundary_strategy == "line");
    CHECK(cfg.kernel.family == "product");
    CHECK(cfg.kernel.lengthscale == doctest::Approx(0.7));
}

TEST_CASE("unknown keys are errors naming the key") {
    try {
        Config::from_ini("[run]\nstep_count = 10\n");
        CHECK(false);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("run.step_count") != std::string::npos);
    }
    CHECK_THROWS_AS(Config::from_ini("[nope]\nx = 1\n"), ConfigError);
}

TEST_CASE("malformed values are rejected") {
    CHECK_THROWS_AS(Config::from_ini("[run]\nsteps = many\n"), ConfigError);
    CHECK_THROWS_AS(Config::from_ini("[comm]\nd_comm = fast\n"), ConfigError);
    CHECK_THROWS_AS(Config::from_ini("[hyper]\nenabled = maybe\n"), ConfigError);
    CHECK_THROWS_AS(Config::from_ini("[run]\nsteps\n"), ConfigError);
}

TEST_CASE("validation rejects out-of-range settings") {
    CHECK_THROWS_AS(Config::from_ini("[run]\nscheduler = gpu\n"), ConfigError);
    CHECK_THROWS_AS(Config::from_ini("[robots]\ndamping = 1.5\n"), ConfigError);
    CHECK_THROWS_AS(Config::from_ini("[noise]\nsigma = 0\n"), ConfigError);
    CHECK_THROWS_AS(Config::from_ini("[field]\nresolution = 200\n"), ConfigError);
    CHECK_THROWS_AS(Config::from_ini("[eval]\nmode = nearest\n"), ConfigError);
}

TEST_CASE("content hash tracks config changes") {
    Config a;
    Config b;
    b.run.steps = 999;
    CHECK(a.content_hash() != b.content_hash());
}

TEST_CASE("manifest JSON round trip preserves the resolved config") {
    Config cfg;
    cfg.run.steps = 77;
    RunManifest m;
    m.subcommand = "async";
    m.seeds = {0, 1, 2};
    m.resolved_config = cfg.to_ini();
    m.config_hash = cfg.content_hash();
    m.out_dir = "/tmp/out";

    const std::string path = "/tmp/gbpmap_manifest_test.json";
    {
        std::ofstream os(path);
        os << m.to_json();
    }
    const RunManifest back = RunManifest::from_json_file(path);
    CHECK(back.subcommand == "async");
    CHECK(back.seeds == std::vector<std::uint64_t>{0, 1, 2});
    CHECK(back.config_hash == m.config_hash);
    CHECK(Config::from_ini(back.resolved_config).run.steps == 77);
    CHECK(looks_like_manifest(path));
    std::remove(path.c_str());
}

TEST_CASE("comments and blank lines are ignored") {
    const Config cfg = Config::from_ini(
        "# top comment\n"
        "\n"
        "[run]\n"
        "; another comment\n"
        "steps = 10\n");
    CHECK(cfg.run.steps == 10);
}
