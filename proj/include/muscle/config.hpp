#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "muscle/train.hpp"

namespace muscle {

/// Configuration rejection: malformed document, unknown key, bad value.
/// The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LoadedConfig {
  ExperimentSpec spec;
  std::string out_dir;   // resolved output directory
  std::string snapshot;  // post-override document, reproduces the run
};

/// Parses and validates an experiment document from JSON text. Unknown
/// keys are rejected with their dotted path; overrides ("a.b=value",
/// values parsed as JSON with a string fallback) apply before
/// validation and are reflected in the snapshot. `origin` names the
/// source in errors and supplies the default output directory stem.
LoadedConfig parse_config_text(const std::string& text, const std::string& origin,
                               const std::vector<std::string>& overrides = {},
                               const std::string& seeds_override = "",
                               const std::string& out_override = "");

/// parse_config_text on a file's contents.
LoadedConfig load_config(const std::string& path,
                         const std::vector<std::string>& overrides = {},
                         const std::string& seeds_override = "",
                         const std::string& out_override = "");

/// The full schema with default values, as a JSON document.
std::string default_config_text();

}  // namespace muscle
