#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "ksd/config.hpp"

namespace ksd {

/// Exit-code contract of the command-line front end.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2 };

struct CommandOptions {
    std::optional<std::filesystem::path> out;  // overrides outputs.dir
    bool override_admissibility = false;
    std::uint64_t seed = 12345;
    std::ostream* out_stream = nullptr;  // report text (stdout when null)
    std::ostream* err_stream = nullptr;  // diagnostics (stderr when null)
};

std::string regularity_json(const RegularityReport& r);

int cmd_check(const RunConfig& cfg, const CommandOptions& opt);
int cmd_solve(const RunConfig& cfg, const CommandOptions& opt);
int cmd_derivative(const RunConfig& cfg, const CommandOptions& opt);
int cmd_limit_sweep(const RunConfig& cfg, const CommandOptions& opt);
int cmd_oracle(const RunConfig& cfg, const CommandOptions& opt);

/// Loads the configuration and dispatches; maps library errors onto exit codes
/// (ConfigError -> 2, every other library error -> 1).
int run_command(const std::string& name, const std::filesystem::path& config, const CommandOptions& opt);

}  // namespace ksd
