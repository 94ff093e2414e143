#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfl::cli {

// Bad config, bad flags or bad parameter values. Exit status 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A module failure inside a scenario, message prefixed with the scenario name. Exit status 3.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum ExitCode : int { kPass = 0, kCheckFailure = 1, kUsage = 2, kNumeric = 3 };

const std::vector<std::string>& scenario_names();
// Plain-language claims exercised by a scenario.
const std::vector<std::string>& claims_for(const std::string& scenario);
// Recognised keys and their defaults.
const std::map<std::string, std::string>& defaults_for(const std::string& scenario);

struct ScenarioConfig {
    std::string scenario;
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "out";
    std::map<std::string, std::string> params;  // defaults merged in

    double number(const std::string& key) const;
    int integer(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<double> list(const std::string& key) const;
};

// Flat key = value text; '#' and ';' start comments. Keys `scenario`, `seed` and `out` are reserved.
ScenarioConfig parse_config(const std::string& text);
ScenarioConfig load_config(const std::filesystem::path& path);
// Throws ConfigError on unknown scenario or key, malformed numbers, or non-positive tolerances.
void validate(const ScenarioConfig& config);

struct Check {
    std::string name;
    bool pass = false;
    double value = 0.0;
    double tolerance = 0.0;

    bool operator==(const Check&) const = default;
};

// Plot-ready decay curves; columns that a scenario does not produce stay empty.
struct DecaySeries {
    std::vector<double> s, dist, l2_qnorm, h2_qnorm, dsu_sup;

    bool empty() const { return s.empty(); }
    bool operator==(const DecaySeries&) const = default;
};

struct RunReport {
    std::string scenario;
    std::vector<std::string> claims;
    std::map<std::string, std::string> parameters;
    std::uint64_t seed = 0;
    std::vector<Check> checks;
    std::map<std::string, double> fitted;
    DecaySeries series;
    double wall_clock_s = 0.0;

    bool pass() const;
    const Check* find(const std::string& name) const;
    bool operator==(const RunReport&) const = default;
};

RunReport run_scenario(const ScenarioConfig& config);

enum class Format { Json, Csv };
std::optional<Format> parse_format(const std::string& s);

std::string to_json(const RunReport& report, bool with_clock = true);
RunReport from_json(const std::string& text);
std::string checks_csv(const RunReport& report);
std::string series_csv(const DecaySeries& series);

// JSON always; with Format::Csv also <scenario>_checks.csv and, for decay runs, <scenario>_decay.csv.
std::vector<std::filesystem::path> emit_report(const RunReport& report, Format format,
                                               const std::filesystem::path& dir);

int exit_code(const RunReport& report);

}  // namespace mfl::cli
