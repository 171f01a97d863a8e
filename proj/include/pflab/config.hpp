#pragma once

#include <filesystem>
#include <string>

#include "pflab/adam.hpp"
#include "pflab/env.hpp"
#include "pflab/eval.hpp"
#include "pflab/poison.hpp"
#include "pflab/ppo.hpp"

namespace pflab {

// Full experiment description. Parsed from a line-oriented `key = value`
// file with dotted section paths (see docs/config.md), overridable from the
// command line, validated all at once, and serialized verbatim into every
// output directory so runs are self-describing.
struct ExperimentConfig {
  uint64_t seed = 1;
  std::string output_dir = "runs/exp";
  bool dump_frames = false;

  EnvConfig env;
  NetConfig net;  // obs_dim is derived from env
  PpoConfig ppo;
  AdamConfig adam;
  EvalConfig eval;

  bool poison_enabled = false;
  PoisonPlan poison;

  uint64_t source_seed = 0;  // transfer runs
  uint64_t victim_seed = 0;
};

ExperimentConfig default_config();

// Parses a config file; unknown keys are reported. `overrides` entries are
// `key=value` strings applied after the file.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides);
ExperimentConfig config_from_overrides(const std::vector<std::string>& overrides);

// Collects every problem (with field paths) before failing.
void validate_config(const ExperimentConfig& cfg);

std::string serialize_config(const ExperimentConfig& cfg);

int parse_action(const std::string& text);      // index or NOOP/FIRE/LEFT/RIGHT
double parse_pixel_value(const std::string& s); // "8/255" or a plain real

}  // namespace pflab
