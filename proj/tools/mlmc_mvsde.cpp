// Command-line front end: `mlmc_mvsde run <config> [--assert] [--seed N] [--out DIR]`
// and `mlmc_mvsde validate <config>`.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mvsde/runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Multilevel Monte Carlo experiments for McKean-Vlasov SDEs with small noise"};
    app.set_version_flag("--version", std::string(mvsde::version()));
    app.require_subcommand(1);

    std::string run_config;
    bool assert_checks = false;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    auto* run = app.add_subcommand("run", "Run the experiment described by a JSON config");
    run->add_option("config", run_config, "Path to the experiment config")->required();
    run->add_flag("--assert", assert_checks, "Exit with code 4 when an acceptance check fails");
    run->add_option("--seed", seed, "Override the config seed");
    run->add_option("--out", out_dir, "Override the output directory");

    std::string validate_config;
    auto* validate = app.add_subcommand("validate", "Validate a config without running it");
    validate->add_option("config", validate_config, "Path to the experiment config")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : mvsde::kExitValidation;
    }

    if (*run) {
        mvsde::RunOptions options;
        options.assert_checks = assert_checks;
        options.seed = seed;
        options.output_dir = out_dir;
        return mvsde::run(run_config, options, std::cout, std::cerr);
    }
    return mvsde::run_validate(validate_config, std::cout, std::cerr);
}
