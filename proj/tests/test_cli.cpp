#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "ksd/commands.hpp"
#include "ksd/errors.hpp"

using namespace ksd;
using doctest::Approx;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

json hard_sphere_config() {
    return json::parse(R"({
      "potential": {"kind": "hard-sphere", "params": {"a": 1.0}},
      "envelope": {
        "s": 1.0,
        "lower": {"shape": "power", "coef": 1.0, "scale": 1.0, "exponent": 4.0},
        "upper": {"shape": "exponential", "coef": 1.0, "scale": 1.0}
      },
      "thermo": {"beta": 1.0, "z_fraction": 0.5},
      "grid": {"L": 2.0, "n_g": 3},
      "ks": {"m_max": 3, "n_max": 4},
      "perturbation": {"kind": "tail-bump", "amplitude": 0.125, "r_lo": 1.0}
    })");
}

json ideal_config() {
    auto j = hard_sphere_config();
    j["potential"] = {{"kind", "custom"}, {"name", "zero"}};
    j["thermo"] = {{"beta", 1.0}, {"z", 0.1}};
    j["perturbation"] = {{"kind", "exponential"}, {"amplitude", 0.1}, {"length", 1.0}};
    return j;
}

struct Sandbox {
    fs::path root;
    Sandbox() {
        root = fs::temp_directory_path() / ("ksd-cli-" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Sandbox() { fs::remove_all(root); }

    fs::path write(const std::string& name, const std::string& text) const {
        std::ofstream(root / name) << text;
        return root / name;
    }
    fs::path write(const std::string& name, const json& j) const { return write(name, j.dump(2)); }
};

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(const std::string& cmd, const fs::path& config, const fs::path& out_dir, bool override_gate = false) {
    std::ostringstream out;
    std::ostringstream err;
    CommandOptions opt;
    opt.out = out_dir;
    opt.override_admissibility = override_gate;
    opt.out_stream = &out;
    opt.err_stream = &err;
    const int code = run_command(cmd, config, opt);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("configuration parsing") {
    const auto cfg = parse_config(hard_sphere_config().dump());
    CHECK(cfg.u().kind() == PotentialKind::HardSphere);
    CHECK(cfg.ks.m_max == 3);
    CHECK(cfg.oracle.N_max == 6);
    CHECK(cfg.eps.size() == 5);
    CHECK(cfg.activity(0.08) == Approx(0.04));
    CHECK(cfg.hash == fnv1a(cfg.canonical));
    // key order and whitespace do not change the hash
    const auto again = parse_config(json::parse(hard_sphere_config().dump()).dump(4));
    CHECK(again.hash == cfg.hash);

    CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
    auto j = hard_sphere_config();
    j["surprise"] = 1;
    CHECK_THROWS_AS(parse_config(j.dump()), ConfigError);
    j = hard_sphere_config();
    j["thermo"]["z"] = 0.01;
    CHECK_THROWS_AS(parse_config(j.dump()), ConfigError);
    j = hard_sphere_config();
    j.erase("envelope");
    CHECK_THROWS_AS(parse_config(j.dump()), ConfigError);
    j = hard_sphere_config();
    j["oracle"] = {{"N_max", 1}};
    j["ks"]["m_max"] = 2;
    CHECK_THROWS_AS(parse_config(j.dump()), ConfigError);
    j = hard_sphere_config();
    j["grid"]["n_g"] = "three";
    CHECK_THROWS_AS(parse_config(j.dump()), ConfigError);
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("check exit codes") {
    const Sandbox box;
    const auto ok = run("check", box.write("hs.json", hard_sphere_config()), box.root / "check");
    CHECK(ok.code == kExitOk);
    CHECK(json::parse(ok.out).at("pass").get<bool>());
    CHECK(fs::exists(box.root / "check" / "manifest.json"));

    auto j = hard_sphere_config();
    j["thermo"] = {{"beta", 1.0}, {"z_fraction", 2.0}};
    CHECK(run("check", box.write("hot.json", j), box.root / "hot").code == kExitFailure);
    CHECK(run("check", box.write("bad.json", std::string("{")), box.root / "bad").code == kExitConfig);
    CHECK(run("check", box.root / "nope.json", box.root / "nope").code == kExitConfig);
    CHECK(run("check", box.write("ideal.json", ideal_config()), box.root / "ideal").code == kExitFailure);
}

TEST_CASE("solve writes grids and a reproducible manifest") {
    const Sandbox box;
    const auto cfg = box.write("ideal.json", ideal_config());
    CHECK(run("solve", cfg, box.root / "gated").code == kExitFailure);

    const auto out = box.root / "fresh" / "nested";
    REQUIRE(run("solve", cfg, out, true).code == kExitOk);
    for (int m = 1; m <= 3; ++m) {
        const auto f = read_binary(out / ("rho_" + std::to_string(m)));
        for (double x : f.values()) CHECK(x == Approx(std::pow(0.1, m)).epsilon(1e-12));
    }
    const auto manifest = json::parse(slurp(out / "manifest.json"));
    CHECK(manifest.at("command") == "solve");
    CHECK(manifest.at("version") == KSD_VERSION);
    CHECK(manifest.at("constants").at("c_beta") == 0.0);
    CHECK(manifest.at("bounds").contains("ks"));

    const auto again = box.root / "again";
    REQUIRE(run("solve", cfg, again, true).code == kExitOk);
    for (const auto& e : fs::directory_iterator(out))
        CHECK_MESSAGE(slurp(e.path()) == slurp(again / e.path().filename()), e.path().filename().string());
}

TEST_CASE("derivative command") {
    const Sandbox box;
    auto j = hard_sphere_config();
    j["perturbation"] = {{"kind", "zero"}};
    j["outputs"] = {{"formats", {"binary"}}};
    REQUIRE(run("derivative", box.write("zero.json", j), box.root / "zero").code == kExitOk);
    for (int m = 1; m <= 3; ++m)
        CHECK(read_binary(box.root / "zero" / ("drho_" + std::to_string(m))).sup_abs() == 0.0);

    const auto desk = run("derivative", box.write("hs.json", hard_sphere_config()), box.root / "hs");
    REQUIRE(desk.code == kExitOk);
    const auto rep = json::parse(slurp(box.root / "hs" / "derivative_report.json"));
    const double slope = rep.at("finite_differences").at("slope");
    CHECK(slope >= 1.8);
    CHECK(slope <= 2.2);
    CHECK(rep.at("comparison").at("pass").get<bool>());
    CHECK(fs::exists(box.root / "hs" / "fd.csv"));

    j = hard_sphere_config();
    j["perturbation"]["amplitude"] = 0.6;
    const auto big = run("derivative", box.write("big.json", j), box.root / "big");
    CHECK(big.code == kExitFailure);
    CHECK(big.err.find("t0") != std::string::npos);

    j = hard_sphere_config();
    j.erase("perturbation");
    CHECK(run("derivative", box.write("none.json", j), box.root / "none").code == kExitConfig);
}

TEST_CASE("limit-sweep command") {
    const Sandbox box;
    auto j = hard_sphere_config();
    j["ks"]["m_max"] = 2;
    j["sweep"] = {{"inner", {{"L", 1.0}, {"n_g", 2}}}, {"outer_sides", {2.0}}};
    REQUIRE(run("limit-sweep", box.write("one.json", j), box.root / "one").code == kExitOk);
    const auto one = json::parse(slurp(box.root / "one" / "sweep.json"));
    CHECK(one.at("rho_nonincreasing").get<bool>());
    const auto csv = slurp(box.root / "one" / "sweep.csv");
    CHECK(csv.find("2,4,0,0,") != std::string::npos);

    j["sweep"]["inner"]["n_g"] = 3;
    CHECK(run("limit-sweep", box.write("odd.json", j), box.root / "odd").code == kExitFailure);
    j.erase("sweep");
    CHECK(run("limit-sweep", box.write("none.json", j), box.root / "none").code == kExitConfig);
}

TEST_CASE("oracle command") {
    const Sandbox box;
    const auto ideal = box.write("ideal.json", ideal_config());
    REQUIRE(run("oracle", ideal, box.root / "ideal", true).code == kExitOk);
    const auto xi = json::parse(slurp(box.root / "ideal" / "oracle.json"));
    CHECK(xi.at("ideal_gas").at("within_tail").get<bool>());
    CHECK(xi.at("ideal_gas").at("diff_truncated_sum").get<double>() <= 1e-12);

    const auto hs = box.write("hs.json", hard_sphere_config());
    REQUIRE(run("solve", hs, box.root / "hs").code == kExitOk);
    REQUIRE(run("oracle", hs, box.root / "hs").code == kExitOk);
    const auto cmp = json::parse(slurp(box.root / "hs" / "comparison.json"));
    CHECK(cmp.at("pass").get<bool>());
    CHECK(cmp.at("orders").size() == 3);

    auto j = hard_sphere_config();
    j["ks"]["m_max"] = 2;
    j["oracle"] = {{"N_max", 1}};
    CHECK(run("oracle", box.write("n1.json", j), box.root / "n1").code == kExitConfig);
}

TEST_CASE("unknown command") {
    const Sandbox box;
    CHECK(run("frobnicate", box.write("hs.json", hard_sphere_config()), box.root / "x").code == kExitConfig);
}

}  // TEST_SUITE
