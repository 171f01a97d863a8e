#pragma once

#include <cstdint>
#include <functional>
#include <unordered_set>
#include <vector>

#include "pflab/adam.hpp"
#include "pflab/env.hpp"
#include "pflab/net.hpp"

namespace pflab {

struct Transition {
  Observation obs;  // what the agent saw when it acted (attack surface)
  int action = 0;
  double reward = 0.0;
  bool done = false;
  double log_prob = 0.0;  // at sampling time, on the unpoisoned observation
  double value = 0.0;     // same
};

struct RolloutBuffer {
  std::vector<Transition> transitions;
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<uint8_t> poisoned_mask;
  double bootstrap_value = 0.0;  // V of the state after the last transition
  std::vector<double> episode_returns;  // episodes completed in this rollout

  int size() const { return static_cast<int>(transitions.size()); }
};

struct PpoConfig {
  int T = 2048;
  int n_epochs = 4;
  int minibatch_size = 256;
  double gamma = 0.99;
  double lam = 0.95;
  double clip = 0.2;
  double vf_coef = 0.5;
  double ent_coef = 0.01;
  double max_grad_norm = 0.5;  // global-norm gradient clip; 0 disables
  int64_t total_steps = 200000;
  // The stored log-probs refer to what the agent actually sampled from. The
  // alternative reading recomputes them on the poisoned observations.
  bool recompute_logprob_on_poisoned = false;

  void validate() const;
  int64_t n_rollouts() const {  // runs until env_steps >= total_steps
    return (total_steps + T - 1) / T;
  }
};

// Samples T transitions from the current policy, recording log-probs and
// values at sampling time; episodes reset automatically. All observations
// the environment produces are digested into `history` when given.
RolloutBuffer collect_rollout(const ActorCritic& net, PaddleCatch& env, int T,
                              Rng& rng,
                              std::unordered_set<uint64_t>* history = nullptr);

// delta_t = r_t + gamma*V(s_{t+1})*(1-done_t) - V(s_t)
// A_t     = delta_t + gamma*lam*(1-done_t)*A_{t+1}
// ret_t   = A_t + V(s_t)
void compute_gae(RolloutBuffer& buffer, double gamma, double lam,
                 double bootstrap_value);

// Standalone form used by tests and by poison crafting (which needs
// advantages before the trainer computes them).
void gae_compute(std::span<const double> rewards, std::span<const double> values,
                 std::span<const uint8_t> dones, double gamma, double lam,
                 double bootstrap_value, std::span<double> advantages,
                 std::span<double> returns);

struct Minibatch {
  Tensor obs;  // [k, obs_dim]; set requires_grad to differentiate into pixels
  std::vector<int> actions;
  std::vector<double> old_log_probs;
  std::vector<double> advantages;  // raw; normalized inside ppo_loss
  std::vector<double> returns;
};

Minibatch build_minibatch(const RolloutBuffer& buffer,
                          const std::vector<int>& indices);

struct PpoLossParts {
  Tensor total;  // scalar on the tape
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
};

// L = -mean(min(ratio*A, clip(ratio)*A)) + vf_coef*mean((V-ret)^2)
//     - ent_coef*mean(entropy), advantages normalized per minibatch
// (mean 0, std 1, denominator guarded at 1e-8). Differentiable w.r.t. both
// the parameters and the minibatch observations. Non-finite totals abort.
PpoLossParts ppo_loss(Tape& t, const ActorCritic& net, const Minibatch& mb,
                      const PpoConfig& cfg);

// Invoked once per fresh rollout, before advantage estimation and updates.
using PoisonHook =
    std::function<void(RolloutBuffer&, const ActorCritic&, int rollout_index)>;

struct TrainLogRow {
  int rollout_index = 0;
  int64_t env_steps = 0;
  double mean_return = 0.0;  // NaN when no episode finished in the rollout
  double mean_ppo_loss = 0.0;
  double entropy = 0.0;
  int poisoned_count = 0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::unordered_set<uint64_t> visited_digests;
  int64_t env_steps = 0;
};

// One-rollout-at-a-time PPO driver: collect, hand the buffer to the poison
// hook (if any), estimate advantages, run clipped-surrogate minibatch
// epochs, discard the buffer. Deterministic for a fixed master seed. The
// stepwise interface lets two agents train in lockstep (transfer attacks).
class Trainer {
 public:
  Trainer(ActorCritic& net, PaddleCatch& env, const PpoConfig& cfg,
          AdamState& adam, uint64_t master_seed);

  // Runs one rollout + update phase; false once total_steps is reached.
  bool step(const PoisonHook& poison_hook = nullptr);

  int rollout_index() const { return next_rollout_; }
  const TrainResult& result() const { return result_; }
  TrainResult take_result() { return std::move(result_); }

 private:
  ActorCritic& net_;
  PaddleCatch& env_;
  PpoConfig cfg_;
  AdamState& adam_;
  Rng policy_rng_;
  Rng shuffle_rng_;
  std::vector<int> order_;
  TrainResult result_;
  int next_rollout_ = 0;
};

// Convenience wrapper running the full schedule.
TrainResult train(ActorCritic& net, PaddleCatch& env, const PpoConfig& cfg,
                  AdamState& adam, uint64_t master_seed,
                  const PoisonHook& poison_hook = nullptr,
                  const std::function<void(const TrainLogRow&)>& on_rollout =
                      nullptr);

}  // namespace pflab
