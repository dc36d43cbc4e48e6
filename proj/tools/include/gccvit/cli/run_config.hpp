#pragma once

#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "gccvit/classifier.hpp"
#include "gccvit/quantize.hpp"
#include "gccvit/training.hpp"
#include "gccvit/vit.hpp"

namespace gccvit::cli {

/// Every tunable of a run. Defaults are the reference hyperparameters; num_classes is taken
/// from the dataset at train time.
struct RunConfig {
  VitConfig vit;
  HeadConfig head;
  TrainConfig train;
  Granularity granularity = Granularity::kPerTensor;

  void validate() const;
};

/// Sets one key from its textual value. Throws ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Applies a `key=value` override as given on the command line.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// `key = value` lines, `#` comments, blank lines ignored. Errors name the source and line.
void parse_config(std::istream& in, RunConfig& cfg, const std::string& source = "<config>");
RunConfig load_config_file(const std::filesystem::path& path);

/// All keys in canonical order, one `key = value` line each; parse_config reads it back.
void write_config(std::ostream& os, const RunConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace gccvit::cli
