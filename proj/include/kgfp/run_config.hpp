// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "kgfp/fusion_net.hpp"
#include "kgfp/labeling.hpp"
#include "kgfp/synthetic.hpp"
#include "kgfp/trainer.hpp"

namespace kgfp {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Settings shared by the CLI subcommands. A config file overlays these
/// defaults; command-line flags overlay the file.
struct RunConfig {
  /// "desk" or "paper"; picks the pyramid, D_wk and architecture defaults.
  std::string preset = "desk";
  ArchConfig arch = ArchConfig::desk_scale();
  TrainConfig train;
  LabelConfig label;
  double target_fpr = 0.05;
  std::uint64_t seed = 0;

  PyramidSpec spec() const;
  std::uint32_t d_wk() const;
};

/// Parses JSON of the form
///   {"preset": "desk", "seed": 1, "target_fpr": 0.05,
///    "arch": {...}, "train": {...}, "label": {...}}
/// Every key is optional. Unknown keys and wrong types throw ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// Fully expanded form of the config, readable by parse_run_config.
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace kgfp
