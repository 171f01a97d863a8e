#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "pflab/ppo.hpp"

namespace pflab {

enum class Scenario { TargetState, Watermark };
enum class Selection { MostRecent, Random };

const char* scenario_name(Scenario s);
const char* selection_name(Selection s);

struct PoisonPlan {
  Scenario scenario = Scenario::TargetState;
  Observation target_obs;  // TargetState scenario
  Watermark wm;            // Watermark scenario
  int n_trigger = 64;      // stamped observations averaged into the target
                           // gradient (Watermark)
  int a_d = static_cast<int>(Action::Left);
  double eps = 8.0 / 255.0;       // l-inf radius, pixel units
  double poison_fraction = 0.05;  // share of the rollout the attacker may touch
  int pgd_steps = 60;
  double pgd_alpha = 0.0;  // 0 -> 2.5 * eps / pgd_steps
  Selection selection = Selection::Random;

  double alpha_or_default() const {
    return pgd_alpha > 0.0 ? pgd_alpha : 2.5 * eps / pgd_steps;
  }
  void validate(int n_actions, int rollout_T) const;
};

struct AlignmentTrace {
  int rollout = -1;
  std::vector<double> steps;  // alignment loss at each PGD evaluation
  int best_step = -1;
  double best_loss = std::numeric_limits<double>::quiet_NaN();
  double g_adv_norm = 0.0;
  double g_train_norm_initial = 0.0;
  bool skipped_degenerate = false;

  bool improved() const {
    return !steps.empty() && best_loss < steps.front();
  }
};

// Mean softmax cross-entropy against the one-hot desired action over a batch
// of observations [k, obs_dim]. Differentiable w.r.t. the parameters (and
// the observations, when they require grad).
Tensor adversarial_loss(Tape& t, const ActorCritic& net,
                        const Tensor& obs_batch, int a_d);

struct TargetGradient {
  Tensor flat;  // [P], constant
  double norm = 0.0;
  bool degenerate = false;  // ~zero norm: attack saturated or converged
};

// TargetState: gradient of L_adv at the target observation. Watermark:
// gradient of the mean L_adv over n_trigger stamped observations sampled
// from the current rollout.
TargetGradient target_gradient(const ActorCritic& net, const PoisonPlan& plan,
                               const RolloutBuffer& buffer, Rng& trigger_rng);

struct AlignResult {
  double value = 1.0;
  bool degenerate = false;
};

// 1 - cos(g_train, g_adv), in [0,2]. Returns 1 and flags degeneracy when
// either norm falls below 1e-12. Rejects length mismatches.
AlignResult alignment_loss(const Tensor& g_train, const Tensor& g_adv);

// floor(fraction*T) distinct indices; MostRecent takes the trailing ones.
// Rejects selections that round down to zero.
std::vector<int> select_poison_indices(int T, double fraction,
                                       Selection selection, Rng& rng);

// Signed PGD on the selected observations against the alignment loss, with
// the target gradient held fixed. Watermark observations are stamped first
// and the l-inf ball is centered on the stamped image. The buffer ends up
// holding the best-loss snapshot; actions, rewards, dones and log-probs are
// never touched.
AlignmentTrace craft_poisons(const ActorCritic& grad_net,
                             RolloutBuffer& buffer, const PoisonPlan& plan,
                             const std::vector<int>& indices,
                             const TargetGradient& g_adv,
                             const PpoConfig& ppo_cfg);

// Recomputes the alignment loss from the (possibly poisoned) buffer content
// at the given indices. Test hook for the snapshot-consistency property.
double recompute_alignment(const ActorCritic& grad_net,
                           const RolloutBuffer& buffer,
                           const std::vector<int>& indices,
                           const TargetGradient& g_adv,
                           const PpoConfig& ppo_cfg);

// The online attacker: one invocation per fresh rollout. Selects indices,
// recomputes the target gradient for the current parameters, crafts, audits
// the threat-model constraints, and keeps per-rollout traces.
class PoisonEngine {
 public:
  PoisonEngine(PoisonPlan plan, PpoConfig ppo_cfg, uint64_t master_seed);

  void operator()(RolloutBuffer& buffer, const ActorCritic& grad_net,
                  int rollout_index);

  struct Stats {
    int64_t invocations = 0;
    int64_t improved = 0;
    int64_t skipped_degenerate = 0;
    int64_t constraint_violations = 0;
  };
  const Stats& stats() const { return stats_; }
  const std::vector<AlignmentTrace>& traces() const { return traces_; }
  const PoisonPlan& plan() const { return plan_; }

  // First poisoned index of the most recent invocation with its clean
  // observation, for frame dumps. Empty when the last attack was skipped.
  struct DumpSample {
    bool valid = false;
    int index = -1;
    Observation clean;
    Observation poisoned;
  };
  const DumpSample& last_sample() const { return last_sample_; }

 private:
  PoisonPlan plan_;
  PpoConfig ppo_;
  Rng select_rng_;
  Rng trigger_rng_;
  Stats stats_;
  std::vector<AlignmentTrace> traces_;
  DumpSample last_sample_;
};

}  // namespace pflab
