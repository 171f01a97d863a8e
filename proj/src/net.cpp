#include "pflab/net.hpp"

#include <cmath>

#include "pflab/common.hpp"
#include "pflab/rng.hpp"

namespace pflab {

namespace {

Tensor uniform_init(int fan_in, int fan_out, double gain, Rng& rng) {
  double limit = gain * std::sqrt(6.0 / (fan_in + fan_out));
  Tensor w = Tensor::zeros({fan_in, fan_out}, /*requires_grad=*/true);
  for (double& v : w.mutable_data()) v = rng.uniform(-limit, limit);
  return w;
}

}  // namespace

ActorCritic ActorCritic::create(const NetConfig& cfg, uint64_t seed) {
  check(cfg.obs_dim > 0 && cfg.hidden > 0 && cfg.depth > 0 && cfg.n_actions > 1,
        "ActorCritic: invalid configuration");
  Rng rng(stream_seed(seed, "net-init"));
  ActorCritic net;
  net.cfg_ = cfg;
  int in = cfg.obs_dim;
  for (int l = 0; l < cfg.depth; ++l) {
    net.trunk_w_.push_back(uniform_init(in, cfg.hidden, std::sqrt(2.0), rng));
    net.trunk_b_.push_back(Tensor::zeros({cfg.hidden}, true));
    in = cfg.hidden;
  }
  net.policy_w_ = uniform_init(in, cfg.n_actions, 0.01, rng);
  net.policy_b_ = Tensor::zeros({cfg.n_actions}, true);
  net.value_w_ = uniform_init(in, 1, 1.0, rng);
  net.value_b_ = Tensor::zeros({1}, true);
  return net;
}

ActorCritic ActorCritic::zeros(const NetConfig& cfg) {
  ActorCritic net = create(cfg, 0);
  for (Tensor& p : net.params())
    for (double& v : p.mutable_data()) v = 0.0;
  return net;
}

std::vector<Tensor> ActorCritic::params() const {
  std::vector<Tensor> out;
  for (size_t l = 0; l < trunk_w_.size(); ++l) {
    out.push_back(trunk_w_[l]);
    out.push_back(trunk_b_[l]);
  }
  out.push_back(policy_w_);
  out.push_back(policy_b_);
  out.push_back(value_w_);
  out.push_back(value_b_);
  return out;
}

int64_t ActorCritic::param_count() const {
  int64_t n = 0;
  for (const Tensor& p : params()) n += p.size();
  return n;
}

void ActorCritic::zero_grad() {
  for (Tensor& p : params()) p.zero_grad();
}

ForwardOut forward(Tape& t, const ActorCritic& net, const Tensor& obs) {
  const NetConfig& cfg = net.config();
  check(obs.defined() && obs.rank() == 2 && obs.dim(1) == cfg.obs_dim,
        "forward: expected observations of shape [batch," +
            std::to_string(cfg.obs_dim) + "], got " +
            (obs.defined() ? shape_str(obs.shape()) : "undefined"));
  check(obs.all_finite(), "forward: non-finite observation values");
  for (double v : obs.data())
    check(v >= 0.0 && v <= 1.0, "forward: observation value outside [0,1]");

  Tensor h = obs;
  for (size_t l = 0; l < net.trunk_w().size(); ++l) {
    Tensor z = ops::bias_add(t, ops::matmul(t, h, net.trunk_w()[l]),
                             net.trunk_b()[l]);
    h = ops::tanh(t, z);
  }
  Tensor logits =
      ops::bias_add(t, ops::matmul(t, h, net.policy_w()), net.policy_b());
  Tensor value_col =
      ops::bias_add(t, ops::matmul(t, h, net.value_w()), net.value_b());
  Tensor value = ops::reshape(t, value_col, {obs.dim(0)});
  check(logits.all_finite() && value.all_finite(),
        "forward: produced non-finite output");
  return {logits, value};
}

Tensor grad_flatten(const GradMap& grads, const ActorCritic& net) {
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(net.param_count()));
  for (const Tensor& p : net.params()) {
    auto it = grads.find(p.storage());
    check(it != grads.end(),
          "grad_flatten: gradient map is missing a parameter of shape " +
              shape_str(p.shape()));
    auto g = it->second.data();
    flat.insert(flat.end(), g.begin(), g.end());
  }
  int n = static_cast<int>(flat.size());
  return Tensor::from_data({n}, std::move(flat));
}

std::vector<Tensor> unflatten(const Tensor& flat, const ActorCritic& net) {
  check(flat.rank() == 1 && flat.size() == net.param_count(),
        "unflatten: expected a flat vector of length " +
            std::to_string(net.param_count()));
  std::vector<Tensor> out;
  auto fd = flat.data();
  size_t off = 0;
  for (const Tensor& p : net.params()) {
    std::vector<double> chunk(fd.begin() + static_cast<long>(off),
                              fd.begin() + static_cast<long>(off + p.size()));
    out.push_back(Tensor::from_data(p.shape(), std::move(chunk)));
    off += static_cast<size_t>(p.size());
  }
  return out;
}

}  // namespace pflab
