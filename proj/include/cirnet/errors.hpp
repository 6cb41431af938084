#pragma once

#include <stdexcept>
#include <string>

namespace cirnet {

// Bad or contradictory settings, from file or flags.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Missing or unreadable/unwritable files, including malformed binary payloads.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Training produced a NaN or infinite loss.
struct NonFiniteLossError : std::runtime_error {
  explicit NonFiniteLossError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cirnet
