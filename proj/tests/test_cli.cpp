#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mfl/cli.hpp"

#include <sys/wait.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace mfl::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mfl_cli_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int run_tool(const std::string& args) {
    const std::string cmd = std::string(MFL_RUN) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("scenario registry") {
    const auto& names = scenario_names();
    CHECK(names.size() == 7);
    for (const auto& n : {"sphere-height", "circle-morse-bott", "shift-noncompactness", "radial-floer-linear",
                          "radial-floer-newton", "operator-facts", "reeb-profile"})
        CHECK(std::find(names.begin(), names.end(), n) != names.end());
    for (const auto& n : names) {
        CHECK_FALSE(claims_for(n).empty());
        for (const auto& claim : claims_for(n)) CHECK(claim.find("\xc2\xa7") == std::string::npos);
    }
    CHECK_THROWS_AS(claims_for("torus-height"), ConfigError);
}

TEST_CASE("config parsing") {
    const auto cfg = parse_config("# comment\nscenario = radial-floer-linear\nseed = 17\nN = 31\n"
                                  "amplitude = \"2e-3\"\nout = results\n");
    CHECK(cfg.scenario == "radial-floer-linear");
    CHECK(cfg.seed == 17);
    CHECK(cfg.out_dir == fs::path("results"));
    CHECK(cfg.integer("N") == 31);
    CHECK(cfg.number("amplitude") == 2e-3);
    CHECK(cfg.number("S_max") == 1.5);
    CHECK_FALSE(cfg.flag("dump_cylinder"));

    CHECK(parse_config("scenario = shift-noncompactness\nshifts = [1, 3]\n").list("shifts") == std::vector<double>{1, 3});

    CHECK_THROWS_AS(parse_config("scenario = torus-height\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("N = 31\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("scenario = operator-facts\nwidth = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("scenario = operator-facts\ntol_relative = -1e-8\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("scenario = operator-facts\ntol_relative = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("scenario = operator-facts\nN = 12x\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("scenario = operator-facts\nseed = -4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("scenario = radial-floer-linear\ndump_cylinder = maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("scenario = operator-facts\n[extra]\nN = 31\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("scenario = operator-facts\nN = 31\nN = 63\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("scenario = operator-facts\nN = 31.5\n").integer("N"), ConfigError);
}

TEST_CASE("report serialization") {
    SUBCASE("empty check list") {
        RunReport r;
        r.scenario = "reeb-profile";
        const std::string text = to_json(r);
        CHECK(text.find("\"checks\": []") != std::string::npos);
        CHECK(from_json(text) == r);
        CHECK(r.pass());
    }
    SUBCASE("round trip with awkward numbers") {
        RunReport r;
        r.scenario = "sphere-height";
        r.claims = {"a claim"};
        r.parameters = {{"N", "31"}, {"tol", "1e-8"}};
        r.seed = 18446744073709551615ULL;
        r.checks = {{"x", true, 0.1, 1.0 / 3.0}, {"y", false, std::numeric_limits<double>::infinity(), 5e-324}};
        r.fitted = {{"B_hat", 2.0000000000000004}, {"c0", 6.773}};
        r.series.s = {0.0, 0.1};
        r.series.dist = {1.0, 0.5};
        r.wall_clock_s = 0.25;
        const RunReport back = from_json(to_json(r));
        CHECK(back == r);
        CHECK(to_json(back) == to_json(r));
        CHECK_FALSE(r.pass());
        CHECK(exit_code(r) == kCheckFailure);
    }
    SUBCASE("csv layout") {
        DecaySeries d;
        d.s = {0.0, 0.5, 1.0};
        d.dist = {3.0, 2.0, 1.0};
        const auto lines = split_lines(series_csv(d));
        REQUIRE(lines.size() == 4);
        CHECK(lines[0] == "s,dist,l2_qnorm,h2_qnorm,dsu_sup");
        CHECK(lines[2] == "0.5,2,,,");
        CHECK(series_csv(d).find('\r') == std::string::npos);
    }
    CHECK_THROWS_AS(from_json("{\"scenario\": 3}"), ConfigError);
}

TEST_CASE("runs are deterministic and round-trip") {
    auto cfg = parse_config("scenario = sphere-height\nseed = 5\nmembers = 4\n");
    const RunReport a = run_scenario(cfg), b = run_scenario(cfg);
    CHECK(to_json(a, false) == to_json(b, false));
    CHECK(a.pass());
    CHECK(exit_code(a) == kPass);
    CHECK(from_json(to_json(a)) == a);
    REQUIRE(a.fitted.count("gap"));
    CHECK(a.fitted.at("gap") == 2.0);
    CHECK(std::abs(a.fitted.at("B_hat") - 1.0) < 0.05);
    CHECK(a.claims == claims_for("sphere-height"));

    cfg.seed = 6;
    CHECK(to_json(run_scenario(cfg), false) != to_json(a, false));
}

TEST_CASE("decay run emits plot-ready files") {
    auto cfg = parse_config("scenario = radial-floer-linear\nN = 31\ndump_cylinder = true\n");
    cfg.out_dir = scratch("linear");
    const RunReport r = run_scenario(cfg);
    CHECK(r.pass());
    CHECK(r.fitted.count("c0"));
    const auto files = emit_report(r, Format::Csv, cfg.out_dir);
    CHECK(files.size() == 3);
    const auto lines = split_lines(slurp(cfg.out_dir / "radial-floer-linear_decay.csv"));
    REQUIRE(lines.size() == r.series.s.size() + 1);
    double prev = -1.0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const double s = std::stod(lines[i].substr(0, lines[i].find(',')));
        CHECK(s > prev);
        prev = s;
    }
    CHECK(split_lines(slurp(cfg.out_dir / "radial-floer-linear_cylinder.csv")).front() == "s,t,x1,y1");
    CHECK(from_json(slurp(cfg.out_dir / "radial-floer-linear.json")) == r);

    const fs::path blocker = cfg.out_dir / "file";
    std::ofstream(blocker) << "x";
    CHECK_THROWS_AS(emit_report(r, Format::Json, blocker / "sub"), IoError);
}

TEST_CASE("module errors carry scenario context") {
    auto even = parse_config("scenario = operator-facts\nN = 32\n");
    CHECK_THROWS_AS(run_scenario(even), ConfigError);
    try {
        run_scenario(parse_config("scenario = radial-floer-newton\nN = 31\namplitude = 0.3\n"));
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).rfind("radial-floer-newton: ", 0) == 0);
    }
}

TEST_CASE("command line exit codes") {
    const fs::path dir = scratch("tool");
    std::ofstream(dir / "reeb.cfg") << "scenario = reeb-profile\n";
    std::ofstream(dir / "bad.cfg") << "scenario = nowhere\n";
    std::ofstream(dir / "fail.cfg") << "scenario = shift-noncompactness\nfull_floor = 3\n";
    std::ofstream(dir / "numeric.cfg") << "scenario = radial-floer-newton\nN = 31\namplitude = 0.3\n";

    CHECK(run_tool("--list-scenarios") == kPass);
    CHECK(run_tool("run " + (dir / "reeb.cfg").string() + " --out " + (dir / "o").string()) == kPass);
    CHECK(fs::exists(dir / "o" / "reeb-profile.json"));
    CHECK(run_tool("run " + (dir / "reeb.cfg").string() + " --format csv --seed 3 --out " + (dir / "c").string()) ==
          kPass);
    CHECK(fs::exists(dir / "c" / "reeb-profile_checks.csv"));
    CHECK(run_tool("run " + (dir / "fail.cfg").string() + " --out " + (dir / "f").string()) == kCheckFailure);
    CHECK(run_tool("run " + (dir / "bad.cfg").string()) == kUsage);
    CHECK(run_tool("run " + (dir / "missing.cfg").string()) == kUsage);
    CHECK(run_tool("run " + (dir / "reeb.cfg").string() + " --format xml") == kUsage);
    CHECK(run_tool("") == kUsage);
    CHECK(run_tool("run " + (dir / "numeric.cfg").string() + " --out " + (dir / "n").string()) == kNumeric);
}
