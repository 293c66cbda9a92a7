#pragma once

#include <string>

#include "json.hpp"

namespace specstreak::cli {

using nlohmann::json;

inline constexpr const char* k_version = "v0.1.0";

// Exit codes shared by every subcommand.
inline constexpr int k_exit_ok = 0;
inline constexpr int k_exit_check_failed = 1;
inline constexpr int k_exit_config = 2;
inline constexpr int k_exit_io = 3;

// Fully defaulted experiment configuration; unknown keys are rejected. The
// returned document is what gets hashed and echoed next to every artifact.
json default_config();
json materialize(const json& user);

// Load + materialize a config file; empty path yields pure defaults.
json load_config(const std::string& path);

// FNV-1a hash (hex) of the canonical serialized config, output directory
// excluded so relocating an experiment does not change its identity.
std::string config_hash(const json& materialized);

// Deterministic shortest-form float text used in CSV exports.
std::string format_double(double x);

// Drop volatile keys (wall-clock fields) from one JSONL line; the remainder
// is the reproducible record body.
std::string strip_volatile(const std::string& jsonl_line);

struct command_io {
    json config;         // materialized
    std::string out_dir;
    int workers = 1;
};

// Subcommand bodies. Each writes its artifacts under out_dir and returns an
// exit code; statistical failures (invariance) return k_exit_check_failed.
int cmd_pretrain(const command_io& io);
int cmd_distill(const command_io& io);
int cmd_bench(const command_io& io);
int cmd_invariance(const command_io& io);
int cmd_oracle(const command_io& io);

// Resolve the worker count: explicit flag beats SPECSTREAK_WORKERS beats 1.
int resolve_workers(int flag_value);

}  // namespace specstreak::cli
