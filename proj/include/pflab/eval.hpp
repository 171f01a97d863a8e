#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pflab/poison.hpp"

namespace pflab {

struct EvalConfig {
  int n_episodes = 20;
  int n_wm_states = 1024;
  int max_episode_steps = 500;  // greedy policies can stall; cap and move on
  double baseline_mean_return = std::numeric_limits<double>::quiet_NaN();
};

// Softmax of the policy logits at one observation. Does not mutate the net.
std::vector<double> eval_target_distribution(const ActorCritic& net,
                                             const Observation& target_obs);

int greedy_action(const ActorCritic& net, const Observation& obs);

struct ReturnStats {
  double mean = 0.0;
  double stddev = 0.0;
  int episodes = 0;
};

using PolicyFn = std::function<int(const GameState&, const Observation&)>;

// Plays n_episodes with the given policy; deterministic for a fixed seed.
ReturnStats eval_policy_performance(const PolicyFn& policy, PaddleCatch& env,
                                    int n_episodes, uint64_t seed,
                                    int max_episode_steps);

// Greedy-argmax evaluation of the trained policy.
ReturnStats eval_clean_performance(const ActorCritic& net, PaddleCatch& env,
                                   int n_episodes, uint64_t seed,
                                   int max_episode_steps);

struct WatermarkEval {
  double triggered_argmax_rate = 0.0;
  std::vector<double> mean_distribution;
  int n_states = 0;
};

// Harvests n_states observations from the agent's own clean (stochastic)
// play, stamps the watermark on each, and measures how often the desired
// action wins the argmax.
WatermarkEval eval_watermark_attack(const ActorCritic& net, PaddleCatch& env,
                                    const Watermark& wm, int a_d, int n_states,
                                    uint64_t seed);

struct AttackReport {
  std::string scenario = "clean";  // clean | target_state | watermark
  int a_d = -1;
  double eps = 0.0;
  double poison_fraction = 0.0;
  std::vector<uint64_t> seeds;

  std::vector<double> target_action_probs;  // mean over states/models
  double mean_p_ad = std::numeric_limits<double>::quiet_NaN();
  bool attack_success = false;  // argmax == a_d

  double clean_mean_return = std::numeric_limits<double>::quiet_NaN();
  double clean_std_return = std::numeric_limits<double>::quiet_NaN();
  double baseline_mean_return = std::numeric_limits<double>::quiet_NaN();

  double triggered_argmax_rate = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> triggered_mean_distribution;

  bool target_seen_during_training = false;
  int64_t hook_invocations = 0;
  int64_t hook_improved = 0;
  int64_t hook_skipped_degenerate = 0;
  int64_t constraint_violations = 0;
  double align_improved_fraction = std::numeric_limits<double>::quiet_NaN();

  int64_t source_seed = -1;  // transfer runs only
  int64_t victim_seed = -1;
};

std::string report_to_json(const AttackReport& r);
AttackReport report_from_json(const std::string& text);
void save_report(const std::filesystem::path& path, const AttackReport& r);
AttackReport load_report(const std::filesystem::path& path);

// Mean/std across runs. All inputs must share (scenario, a_d, eps,
// poison_fraction); mixing is rejected. Permutation-invariant: values are
// sorted before accumulation.
AttackReport aggregate_reports(const std::vector<AttackReport>& runs);

// Plain-text table, one row per report: desired action, action
// distribution, success flag, clean score.
std::string render_report_table(const std::vector<AttackReport>& reports);

// Flat CSV (header + one row per report) for spreadsheet import.
std::string reports_to_csv(const std::vector<AttackReport>& reports);

}  // namespace pflab
