#include "pflab/adam.hpp"

#include <cmath>

#include "pflab/common.hpp"

namespace pflab {

AdamState AdamState::init(int64_t param_count, AdamConfig cfg) {
  AdamState s;
  s.first_moment.assign(static_cast<size_t>(param_count), 0.0);
  s.second_moment.assign(static_cast<size_t>(param_count), 0.0);
  s.cfg = cfg;
  return s;
}

void adam_step(std::vector<Tensor>& params, std::span<const double> flat_grads,
               AdamState& state) {
  size_t total = 0;
  for (const Tensor& p : params) total += static_cast<size_t>(p.size());
  check(flat_grads.size() == total,
        "adam_step: gradient length " + std::to_string(flat_grads.size()) +
            " does not match parameter count " + std::to_string(total));
  check(state.first_moment.size() == total,
        "adam_step: moment arrays not congruent with parameters");

  state.step_count += 1;
  double t = static_cast<double>(state.step_count);
  const AdamConfig& c = state.cfg;
  double bc1 = 1.0 - std::pow(c.beta1, t);
  double bc2 = 1.0 - std::pow(c.beta2, t);

  size_t off = 0;
  for (Tensor& p : params) {
    auto pd = p.mutable_data();
    for (size_t i = 0; i < pd.size(); ++i, ++off) {
      double g = flat_grads[off];
      double& m = state.first_moment[off];
      double& v = state.second_moment[off];
      m = c.beta1 * m + (1.0 - c.beta1) * g;
      v = c.beta2 * v + (1.0 - c.beta2) * g * g;
      double m_hat = m / bc1;
      double v_hat = v / bc2;
      pd[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps_adam);
    }
  }
}

}  // namespace pflab
