// vie: run one experiment described by a JSON config; see README.md for the key schema.
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vie/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Volterra/Hammerstein integral equation and inclusion experiments"};
    app.require_subcommand(1);
    std::string config, out = "out";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    for (const auto& kind : vie::cli::experiment_kinds()) {
        auto* sub = app.add_subcommand(kind, "run a " + kind + " experiment");
        sub->add_option("--config", config, "experiment config (JSON)")->required();
        sub->add_option("--out", out, "output directory")->capture_default_str();
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--threads", threads, "worker threads for funnel sampling");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return vie::cli::kConfigError;
    }
    const std::string kind = app.get_subcommands().front()->get_name();
    vie::cli::json cfg;
    try {
        cfg = vie::cli::load_config(config);
    } catch (const vie::InvalidArgument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return vie::cli::kConfigError;
    }
    const int code = vie::cli::run_experiment(cfg, out, std::cerr, kind, seed, threads);
    if (code == vie::cli::kOk) std::cout << "wrote " << out << '\n';
    return code;
}
