#pragma once

#include <string>
#include <vector>

#include "pflab/config.hpp"

namespace pflab {

// Subcommand drivers. Each writes its artifacts (config snapshot, logs,
// checkpoint, report) under cfg.output_dir and nowhere else.
int cmd_train(const ExperimentConfig& cfg);
int cmd_poison_train(const ExperimentConfig& cfg);
int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path);
int cmd_transfer(const ExperimentConfig& cfg);
int cmd_matrix(const std::string& exe, const std::string& base_config,
               const std::string& cells_file, int jobs);
int cmd_check(const std::string& report_path,
              const std::vector<std::string>& exprs);

// Full argv entry point; maps errors to exit codes (0 ok, 2 config,
// 3 runtime fault, 4 failed check).
int run_cli(int argc, char** argv);

}  // namespace pflab
