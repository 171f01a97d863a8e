#pragma once

#include <cstdint>
#include <vector>

#include "pflab/ops.hpp"
#include "pflab/tape.hpp"
#include "pflab/tensor.hpp"

namespace pflab {

struct NetConfig {
  int obs_dim = 576;
  int hidden = 128;
  int depth = 2;  // hidden layers in the trunk
  int n_actions = 4;
};

// Shared-trunk actor-critic MLP: tanh trunk, linear policy and value heads.
// Parameters live in a fixed canonical order (trunk W/b pairs, then policy
// head, then value head); everything downstream -- flattening, Adam moments,
// checkpoints -- relies on that order.
class ActorCritic {
 public:
  // Scaled-uniform init per layer: limit = gain * sqrt(6 / (fan_in+fan_out)),
  // gain sqrt(2) on the trunk, 0.01 on the policy head (near-uniform initial
  // action distribution), 1.0 on the value head. Biases start at zero.
  static ActorCritic create(const NetConfig& cfg, uint64_t seed);
  static ActorCritic zeros(const NetConfig& cfg);

  const NetConfig& config() const { return cfg_; }
  std::vector<Tensor> params() const;
  int64_t param_count() const;
  void zero_grad();

  const std::vector<Tensor>& trunk_w() const { return trunk_w_; }
  const std::vector<Tensor>& trunk_b() const { return trunk_b_; }
  const Tensor& policy_w() const { return policy_w_; }
  const Tensor& policy_b() const { return policy_b_; }
  const Tensor& value_w() const { return value_w_; }
  const Tensor& value_b() const { return value_b_; }

 private:
  ActorCritic() = default;
  NetConfig cfg_;
  std::vector<Tensor> trunk_w_, trunk_b_;
  Tensor policy_w_, policy_b_, value_w_, value_b_;
};

struct ForwardOut {
  Tensor logits;  // [batch, n_actions]
  Tensor value;   // [batch]
};

// obs: [batch, obs_dim], values in [0,1]. Rejects shape mismatches and
// non-finite input. Pure: identical input gives bitwise identical output.
ForwardOut forward(Tape& t, const ActorCritic& net, const Tensor& obs);

// Concatenates per-parameter gradients into one [P] vector in canonical
// order. Every parameter must be present in the map.
Tensor grad_flatten(const GradMap& grads, const ActorCritic& net);

// Splits a flat [P] vector into parameter-shaped tensors (canonical order).
std::vector<Tensor> unflatten(const Tensor& flat, const ActorCritic& net);

}  // namespace pflab
