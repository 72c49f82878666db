// cohdyn: run coherent-state dynamics scenarios from JSON configs.
//
//   cohdyn run <config.json> [--out DIR] [--log-level L]
//   cohdyn validate <config.json>
//
// Exit codes: 0 ok, 1 audit tolerance breached, 2 invalid config or usage,
// 3 truncation breach (partial artifacts written).

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>

#include "cohdyn/experiment.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"Coherent-state coarse-graining of quantum nonlinear oscillators"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string log_level = "warn";

    auto* run = app.add_subcommand("run", "Run the scenario described by a config file");
    run->add_option("config", config_path, "Path to the JSON config")->required();
    run->add_option("--out", out_dir, "Output directory (overrides output_dir in the config)");
    run->add_option("--log-level", log_level, "error | warn | info | debug")
        ->check(CLI::IsMember({"error", "warn", "info", "debug"}));

    auto* val = app.add_subcommand("validate", "Check a config file without running it");
    val->add_option("config", config_path, "Path to the JSON config")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : cohdyn::kExitInvalidConfig;
    }

    cohdyn::ExperimentConfig config;
    try {
        config = cohdyn::load_config(config_path);
    } catch (const cohdyn::ConfigError& e) {
        std::cerr << "invalid config " << config_path << ": " << e.what() << '\n';
        return cohdyn::kExitInvalidConfig;
    } catch (const std::exception& e) {
        std::cerr << "invalid config " << config_path << ": " << e.what() << '\n';
        return cohdyn::kExitInvalidConfig;
    }

    if (*val) {
        std::cout << "ok: " << cohdyn::to_string(config.scenario) << " scenario, " << config.oscillators.size()
                  << " oscillator(s)\n";
        return cohdyn::kExitOk;
    }

    static const std::map<std::string, cohdyn::LogLevel> levels{{"error", cohdyn::LogLevel::Error},
                                                                {"warn", cohdyn::LogLevel::Warn},
                                                                {"info", cohdyn::LogLevel::Info},
                                                                {"debug", cohdyn::LogLevel::Debug}};
    try {
        std::optional<std::filesystem::path> out;
        if (!out_dir.empty()) out = out_dir;
        const auto result = cohdyn::run_scenario(config, out, levels.at(log_level));
        std::cout << result.summary.value("status", "unknown") << '\n';
        return result.exit_code;
    } catch (const cohdyn::ConfigError& e) {
        std::cerr << "invalid config: " << e.what() << '\n';
        return cohdyn::kExitInvalidConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }
}
