#pragma once

// Flat "key = value" run configuration. Lines starting with '#' are comments.
// Unknown keys are rejected; every key has a default, and echo() writes all of
// them back so a results directory always records the complete configuration.

#include <filesystem>
#include <map>
#include <string>

#include "dadr/experiments.hpp"

namespace dadr::config {

using RunConfig = std::map<std::string, std::string>;

RunConfig parse(const std::string& text);
RunConfig parse_file(const std::filesystem::path& path);

/// Applies `rc` on top of the defaults. Throws ConfigError for unknown keys or
/// malformed values. Relative paths are resolved against `base_dir`.
experiments::ExperimentConfig to_experiment_config(const RunConfig& rc,
                                                   const std::filesystem::path& base_dir = {});

/// Complete key = value rendering of `c`, parseable by parse().
std::string echo(const experiments::ExperimentConfig& c);

/// Names of all accepted keys, in echo order.
const std::vector<std::string>& known_keys();

}  // namespace dadr::config
