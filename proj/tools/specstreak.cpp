#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "specstreak/cli.hpp"
#include "specstreak/errors.hpp"

namespace cli = specstreak::cli;

int main(int argc, char** argv) {
    CLI::App app{"desk-scale speculative decoding laboratory"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir;
    uint64_t seed_override = 0;
    int workers = 0;
    app.add_option("--config", config_path, "experiment config JSON (defaults when omitted)");
    app.add_option("--out", out_dir, "output directory (default runs/<command>)");
    auto* seed_opt = app.add_option("--seed", seed_override, "override the config seed");
    app.add_option("--workers", workers, "worker threads (env SPECSTREAK_WORKERS as fallback)");

    app.add_subcommand("pretrain", "masked-denoiser pretraining of the drafter");
    app.add_subcommand("distill", "distill the drafter against verifier teacher paths");
    app.add_subcommand("bench", "decode-loop metric grid over k, temperature and gamma");
    app.add_subcommand("invariance", "statistical losslessness checks; exit 1 on failure");
    app.add_subcommand("oracle", "exact expected-streak values per rule and gamma");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? cli::k_exit_ok : cli::k_exit_config;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        cli::json cfg = cli::load_config(config_path);
        if (*seed_opt) cfg["seed"] = seed_override;

        cli::command_io io;
        io.config = std::move(cfg);
        io.out_dir = out_dir.empty() ? "runs/" + cmd : out_dir;
        io.workers = cli::resolve_workers(workers);

        int code = cli::k_exit_config;
        if (cmd == "pretrain") code = cli::cmd_pretrain(io);
        if (cmd == "distill") code = cli::cmd_distill(io);
        if (cmd == "bench") code = cli::cmd_bench(io);
        if (cmd == "invariance") code = cli::cmd_invariance(io);
        if (cmd == "oracle") code = cli::cmd_oracle(io);

        if (code == cli::k_exit_ok) {
            std::cout << cmd << ": ok, artifacts in " << io.out_dir << "\n";
        } else {
            std::cout << cmd << ": check failed, see " << io.out_dir << "\n";
        }
        return code;
    } catch (const specstreak::io_error& e) {
        std::cerr << cmd << ": " << e.what() << "\n";
        return cli::k_exit_io;
    } catch (const std::invalid_argument& e) {  // config_error included
        std::cerr << cmd << ": " << e.what() << "\n";
        return cli::k_exit_config;
    } catch (const std::exception& e) {
        std::cerr << cmd << ": " << e.what() << "\n";
        return cli::k_exit_io;
    }
}
