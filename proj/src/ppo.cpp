#include "pflab/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "pflab/common.hpp"

namespace pflab {

void PpoConfig::validate() const {
  check(T > 0, "ppo.T must be positive");
  check(gamma > 0.0 && gamma <= 1.0, "ppo.gamma must lie in (0,1]");
  check(lam >= 0.0 && lam <= 1.0, "ppo.lam must lie in [0,1]");
  check(clip > 0.0, "ppo.clip must be positive");
  check(n_epochs > 0, "ppo.n_epochs must be positive");
  check(minibatch_size > 0 && T % minibatch_size == 0,
        "ppo.minibatch_size must divide ppo.T");
  check(total_steps >= 0, "ppo.total_steps must be non-negative");
}

namespace {

Tensor flatten_obs(const Observation& obs) {
  return Tensor::from_data({1, static_cast<int>(obs.size())},
                           std::vector<double>(obs.data().begin(),
                                               obs.data().end()));
}

struct PolicyEval {
  std::vector<double> probs;
  double value = 0.0;
};

PolicyEval eval_policy(const ActorCritic& net, const Observation& obs) {
  Tape tape;
  ForwardOut out = forward(tape, net, flatten_obs(obs));
  Tensor probs = ops::softmax_rows(tape, out.logits);
  PolicyEval pe;
  pe.probs.assign(probs.data().begin(), probs.data().end());
  pe.value = out.value.at(0);
  return pe;
}

int sample_categorical(const std::vector<double>& probs, Rng& rng) {
  double u = rng.uniform01();
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace

RolloutBuffer collect_rollout(const ActorCritic& net, PaddleCatch& env, int T,
                              Rng& rng,
                              std::unordered_set<uint64_t>* history) {
  RolloutBuffer buf;
  buf.transitions.reserve(static_cast<size_t>(T));
  Observation obs = env.observe();
  if (history) history->insert(obs_digest(obs));
  double episode_return = 0.0;

  for (int t = 0; t < T; ++t) {
    PolicyEval pe = eval_policy(net, obs);
    int action = sample_categorical(pe.probs, rng);
    double log_prob = std::log(pe.probs[static_cast<size_t>(action)]);

    PaddleCatch::Step st = env.step(action);
    buf.transitions.push_back(
        Transition{obs, action, st.reward, st.done, log_prob, pe.value});
    episode_return += st.reward;
    if (history) history->insert(obs_digest(st.obs));

    if (st.done) {
      buf.episode_returns.push_back(episode_return);
      episode_return = 0.0;
      obs = env.reset_board();
      if (history) history->insert(obs_digest(obs));
    } else {
      obs = st.obs;
    }
  }

  buf.bootstrap_value = eval_policy(net, obs).value;
  buf.poisoned_mask.assign(static_cast<size_t>(T), 0);
  return buf;
}

void gae_compute(std::span<const double> rewards, std::span<const double> values,
                 std::span<const uint8_t> dones, double gamma, double lam,
                 double bootstrap_value, std::span<double> advantages,
                 std::span<double> returns) {
  size_t n = rewards.size();
  check(values.size() == n && dones.size() == n && advantages.size() == n &&
            returns.size() == n,
        "gae_compute: length mismatch");
  double next_adv = 0.0;
  for (size_t i = n; i-- > 0;) {
    double not_done = dones[i] ? 0.0 : 1.0;
    double next_value = (i + 1 < n) ? values[i + 1] : bootstrap_value;
    double delta = rewards[i] + gamma * next_value * not_done - values[i];
    next_adv = delta + gamma * lam * not_done * next_adv;
    advantages[i] = next_adv;
    returns[i] = next_adv + values[i];
  }
}

void compute_gae(RolloutBuffer& buffer, double gamma, double lam,
                 double bootstrap_value) {
  size_t n = buffer.transitions.size();
  std::vector<double> rewards(n), values(n);
  std::vector<uint8_t> dones(n);
  for (size_t i = 0; i < n; ++i) {
    rewards[i] = buffer.transitions[i].reward;
    values[i] = buffer.transitions[i].value;
    dones[i] = buffer.transitions[i].done ? 1 : 0;
  }
  buffer.advantages.assign(n, 0.0);
  buffer.returns.assign(n, 0.0);
  gae_compute(rewards, values, dones, gamma, lam, bootstrap_value,
              buffer.advantages, buffer.returns);
}

Minibatch build_minibatch(const RolloutBuffer& buffer,
                          const std::vector<int>& indices) {
  check(!indices.empty(), "build_minibatch: empty index list");
  check(!buffer.advantages.empty(),
        "build_minibatch: advantages not computed");
  int obs_dim = static_cast<int>(buffer.transitions.front().obs.size());
  Minibatch mb;
  std::vector<double> flat;
  flat.reserve(indices.size() * static_cast<size_t>(obs_dim));
  for (int idx : indices) {
    const Transition& tr = buffer.transitions[static_cast<size_t>(idx)];
    flat.insert(flat.end(), tr.obs.data().begin(), tr.obs.data().end());
    mb.actions.push_back(tr.action);
    mb.old_log_probs.push_back(tr.log_prob);
    mb.advantages.push_back(buffer.advantages[static_cast<size_t>(idx)]);
    mb.returns.push_back(buffer.returns[static_cast<size_t>(idx)]);
  }
  mb.obs = Tensor::from_data({static_cast<int>(indices.size()), obs_dim},
                             std::move(flat));
  return mb;
}

PpoLossParts ppo_loss(Tape& t, const ActorCritic& net, const Minibatch& mb,
                      const PpoConfig& cfg) {
  int k = mb.obs.dim(0);
  check(static_cast<int>(mb.actions.size()) == k &&
            static_cast<int>(mb.old_log_probs.size()) == k &&
            static_cast<int>(mb.advantages.size()) == k &&
            static_cast<int>(mb.returns.size()) == k,
        "ppo_loss: minibatch field lengths disagree");

  // Per-minibatch advantage normalization; the normalized values are
  // constants with respect to differentiation.
  std::vector<double> adv = mb.advantages;
  double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / k;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  double stddev = std::sqrt(var / k);
  double denom = std::max(stddev, 1e-8);
  for (double& a : adv) a = (a - mean) / denom;

  Tensor adv_c = Tensor::from_data({k}, std::move(adv));
  Tensor old_lp_c = Tensor::from_data({k}, mb.old_log_probs);
  Tensor ret_c = Tensor::from_data({k}, mb.returns);

  ForwardOut out = forward(t, net, mb.obs);
  Tensor lp_all = ops::log_softmax_rows(t, out.logits);
  Tensor lp_act = ops::gather_rows(t, lp_all, mb.actions);
  Tensor ratio = ops::exp(t, ops::sub(t, lp_act, old_lp_c));

  Tensor surr1 = ops::mul(t, ratio, adv_c);
  Tensor surr2 = ops::mul(
      t, ops::clamp_const(t, ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), adv_c);
  Tensor pg = ops::neg(t, ops::mean_all(t, ops::min2(t, surr1, surr2)));

  Tensor vdiff = ops::sub(t, out.value, ret_c);
  Tensor vloss =
      ops::mul_const(t, ops::mean_all(t, ops::mul(t, vdiff, vdiff)),
                     cfg.vf_coef);

  Tensor probs = ops::exp(t, lp_all);
  Tensor row_entropy =
      ops::neg(t, ops::sum_axis1(t, ops::mul(t, probs, lp_all)));
  Tensor entropy = ops::mean_all(t, row_entropy);

  Tensor total = ops::add(t, ops::add(t, pg, vloss),
                          ops::mul_const(t, entropy, -cfg.ent_coef));
  if (!std::isfinite(total.item())) {
    std::ostringstream os;
    os << "ppo_loss: non-finite loss (policy=" << pg.item()
       << ", value=" << vloss.item() << ", entropy=" << entropy.item() << ")";
    throw NumericFault(os.str());
  }
  return {total, pg.item(), vloss.item(), entropy.item()};
}

Trainer::Trainer(ActorCritic& net, PaddleCatch& env, const PpoConfig& cfg,
                 AdamState& adam, uint64_t master_seed)
    : net_(net),
      env_(env),
      cfg_(cfg),
      adam_(adam),
      policy_rng_(stream_seed(master_seed, "policy")),
      shuffle_rng_(stream_seed(master_seed, "shuffle")),
      order_(static_cast<size_t>(cfg.T)) {
  cfg_.validate();
  std::iota(order_.begin(), order_.end(), 0);
  env_.reset(stream_seed(master_seed, "env"));
}

bool Trainer::step(const PoisonHook& poison_hook) {
  if (next_rollout_ >= cfg_.n_rollouts()) return false;
  int rollout = next_rollout_++;

  RolloutBuffer buffer = collect_rollout(net_, env_, cfg_.T, policy_rng_,
                                         &result_.visited_digests);
  result_.env_steps += cfg_.T;

  if (poison_hook) {
    poison_hook(buffer, net_, rollout);
    if (cfg_.recompute_logprob_on_poisoned) {
      for (size_t i = 0; i < buffer.transitions.size(); ++i) {
        if (!buffer.poisoned_mask[i]) continue;
        Transition& tr = buffer.transitions[i];
        PolicyEval pe = eval_policy(net_, tr.obs);
        tr.log_prob = std::log(pe.probs[static_cast<size_t>(tr.action)]);
      }
    }
  }

  compute_gae(buffer, cfg_.gamma, cfg_.lam, buffer.bootstrap_value);

  double loss_sum = 0.0, entropy_sum = 0.0;
  int n_minibatches = 0;
  for (int epoch = 0; epoch < cfg_.n_epochs; ++epoch) {
    shuffle_rng_.shuffle(order_);
    for (int start = 0; start < cfg_.T; start += cfg_.minibatch_size) {
      std::vector<int> idx(order_.begin() + start,
                           order_.begin() + start + cfg_.minibatch_size);
      Minibatch mb = build_minibatch(buffer, idx);
      Tape tape;
      PpoLossParts parts = ppo_loss(tape, net_, mb, cfg_);
      net_.zero_grad();
      GradMap grads = tape.backward(parts.total);
      Tensor flat = grad_flatten(grads, net_);
      std::vector<Tensor> params = net_.params();
      adam_step(params, flat.data(), adam_);
      loss_sum += parts.total.item();
      entropy_sum += parts.entropy;
      ++n_minibatches;
    }
  }

  TrainLogRow row;
  row.rollout_index = rollout;
  row.env_steps = result_.env_steps;
  row.mean_return =
      buffer.episode_returns.empty()
          ? std::numeric_limits<double>::quiet_NaN()
          : std::accumulate(buffer.episode_returns.begin(),
                            buffer.episode_returns.end(), 0.0) /
                static_cast<double>(buffer.episode_returns.size());
  row.mean_ppo_loss = loss_sum / n_minibatches;
  row.entropy = entropy_sum / n_minibatches;
  row.poisoned_count = static_cast<int>(std::count(
      buffer.poisoned_mask.begin(), buffer.poisoned_mask.end(), uint8_t{1}));
  result_.log.push_back(row);
  return true;
}

TrainResult train(ActorCritic& net, PaddleCatch& env, const PpoConfig& cfg,
                  AdamState& adam, uint64_t master_seed,
                  const PoisonHook& poison_hook,
                  const std::function<void(const TrainLogRow&)>& on_rollout) {
  Trainer trainer(net, env, cfg, adam, master_seed);
  while (trainer.step(poison_hook)) {
    if (on_rollout) on_rollout(trainer.result().log.back());
  }
  return trainer.take_result();
}

}  // namespace pflab
