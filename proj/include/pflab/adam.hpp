#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pflab/tensor.hpp"

namespace pflab {

struct AdamConfig {
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
};

// Moments are kept flat in canonical parameter order, congruent with the
// grad_flatten layout and the checkpoint format.
struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  uint64_t step_count = 0;
  AdamConfig cfg;

  static AdamState init(int64_t param_count, AdamConfig cfg = {});
};

// One bias-corrected Adam update over all parameters; flat_grads follows the
// canonical flatten order. step_count increments by exactly 1.
void adam_step(std::vector<Tensor>& params, std::span<const double> flat_grads,
               AdamState& state);

}  // namespace pflab
