#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "mst/data.hpp"
#include "mst/model.hpp"
#include "mst/trainer.hpp"

namespace mst {

/// Everything a run needs, read from a flat `key = value` file. Unknown keys
/// are errors.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  ImageStats stats;
  bool n_scenes_set = false;  // otherwise taken from the manifest
  std::filesystem::path data;
  std::filesystem::path out;
};

/// Sets one key; throws ConfigError for unknown keys or unparsable values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
/// `key=value` form, as accepted by --set.
void apply_override(RunConfig& config, const std::string& assignment);

/// '#' starts a comment; blank lines are ignored.
RunConfig parse_run_config(std::istream& in);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical text of the model, training and image-stat keys (no paths).
/// Doubles are written with round-trip precision.
std::string format_run_config(const RunConfig& config);

}  // namespace mst
