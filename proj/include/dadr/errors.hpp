#pragma once

#include <stdexcept>
#include <string>

namespace dadr {

/// Invalid configuration, shape mismatch or violated precondition.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A tensor picked up NaN/Inf somewhere upstream.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Training had to stop (non-finite loss, corrupted state, I/O failure mid-run).
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dadr
