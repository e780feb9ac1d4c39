#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "robtrack/types.hpp"

namespace robtrack::cli {

enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,
    kNonConvergence = 3,
    kDataError = 4,
};

/// Flag values that take precedence over the config file.
struct Overrides {
    std::optional<Seed> seed;
    std::optional<std::string> out;
    std::optional<double> lambda;
    std::optional<double> eta;
    std::optional<std::string> loss;
    std::optional<double> epsilon;
};

/// Reads a JSON config. Throws ConfigError with the file name on failure.
nlohmann::json load_config(const std::filesystem::path& path);

/// Writes flag overrides into the config blocks they belong to.
void apply_overrides(nlohmann::json& config, const Overrides& overrides);

/// Validates `config` for `command`, runs it, writes the report files and a
/// manifest into the output directory, and returns an exit code. Library
/// exceptions propagate; `main_entry` maps them to exit codes.
int run_command(const std::string& command, const nlohmann::json& config, std::ostream& out);

/// Full command-line front end: argument parsing, exception to exit-code mapping.
int main_entry(int argc, char** argv);

}  // namespace robtrack::cli
