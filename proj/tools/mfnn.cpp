#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mfnn/experiment.hpp"

int main(int argc, char** argv) {
    mfnn::keep_freed_memory();
    CLI::App app{"Mean-field neural network experiments"};
    app.require_subcommand(1);

    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    CLI::App* run = app.add_subcommand("run", "Run the experiment described by a JSON or TOML config");
    run->add_option("config", config, "Config file (.json or .toml), or a manifest.json of an earlier run")
        ->required();
    CLI::Option* out_opt = run->add_option("--out", out, "Output directory (overrides the config)");
    CLI::Option* seed_opt = run->add_option("--seed", seed, "Root seed (overrides the config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : mfnn::exit_config_invalid;
    }

    mfnn::RunOptions options;
    if (*out_opt) options.out = out;
    if (*seed_opt) options.seed = seed;
    return mfnn::run_experiment(config, options, std::cerr);
}
