#include "mfl/cli.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>

using namespace mfl::cli;

int main(int argc, char** argv) {
    CLI::App app{"Scenario runner for gradient-flow and Floer-cylinder decay experiments"};
    app.require_subcommand(0, 1);
    app.fallthrough();

    bool list = false;
    std::string out_dir, format_name = "json";
    std::optional<std::uint64_t> seed;
    app.add_flag("--list-scenarios", list, "Print scenario names and their claims");
    app.add_option("--out", out_dir, "Output directory (overrides the config)");
    app.add_option("--seed", seed, "Random seed (overrides the config)");
    app.add_option("--format", format_name, "Report format")->check(CLI::IsMember({"json", "csv"}));

    std::string config_path;
    CLI::App* run = app.add_subcommand("run", "Run the scenario described by a config file");
    run->add_option("config", config_path, "Flat key = value config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    if (list) {
        for (const auto& name : scenario_names()) {
            std::cout << name << '\n';
            for (const auto& claim : claims_for(name)) std::cout << "  - " << claim << '\n';
        }
        return kPass;
    }
    if (!run->parsed()) {
        std::cerr << app.help();
        return kUsage;
    }

    try {
        ScenarioConfig cfg = load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        const RunReport report = run_scenario(cfg);
        const auto files = emit_report(report, *parse_format(format_name), cfg.out_dir);

        std::cout << report.scenario << " (seed " << report.seed << ")\n";
        for (const auto& c : report.checks)
            std::cout << (c.pass ? "  pass  " : "  FAIL  ") << c.name << "  value=" << c.value
                      << "  tol=" << c.tolerance << '\n';
        for (const auto& f : files) std::cout << "wrote " << f.string() << '\n';
        return exit_code(report);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kNumeric;
    }
}
