#include "pflab/poison.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "pflab/common.hpp"

namespace pflab {

const char* scenario_name(Scenario s) {
  return s == Scenario::TargetState ? "target_state" : "watermark";
}

const char* selection_name(Selection s) {
  return s == Selection::MostRecent ? "most_recent" : "random";
}

void PoisonPlan::validate(int n_actions, int rollout_T) const {
  check(a_d >= 0 && a_d < n_actions,
        "poison.a_d out of range [0," + std::to_string(n_actions) + ")");
  check(eps >= 1.0 / 255.0 - 1e-12 && eps <= 32.0 / 255.0 + 1e-12,
        "poison.eps must lie in [1/255, 32/255]");
  check(poison_fraction > 0.0 && poison_fraction <= 1.0,
        "poison.fraction must lie in (0,1]");
  check(static_cast<int>(poison_fraction * rollout_T) >= 1,
        "poison.fraction * ppo.T selects zero transitions; raise the "
        "fraction or the rollout length");
  check(pgd_steps >= 0, "poison.pgd_steps must be non-negative");
  check(n_trigger >= 1, "poison.n_trigger must be positive");
  if (scenario == Scenario::TargetState)
    check(target_obs.defined(), "poison.target_obs missing");
}

Tensor adversarial_loss(Tape& t, const ActorCritic& net,
                        const Tensor& obs_batch, int a_d) {
  ForwardOut out = forward(t, net, obs_batch);
  Tensor lse = ops::logsumexp_rows(t, out.logits);
  std::vector<int> idx(static_cast<size_t>(obs_batch.dim(0)), a_d);
  Tensor picked = ops::gather_rows(t, out.logits, idx);
  return ops::mean_all(t, ops::sub(t, lse, picked));
}

namespace {

Tensor flatten_rows(const std::vector<Observation>& rows) {
  int k = static_cast<int>(rows.size());
  int d = static_cast<int>(rows.front().size());
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(k) * static_cast<size_t>(d));
  for (const Observation& o : rows)
    flat.insert(flat.end(), o.data().begin(), o.data().end());
  return Tensor::from_data({k, d}, std::move(flat));
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

constexpr double kNormGuard = 1e-12;

// Alignment loss of the current minibatch against a fixed target gradient,
// on the tape, so it can be backpropagated into the observations.
struct AlignEval {
  Tensor loss;  // scalar; undefined when degenerate
  double value = 1.0;
  double g_train_norm = 0.0;
  bool degenerate = false;
};

AlignEval eval_alignment(Tape& tape, const ActorCritic& net,
                         const Minibatch& mb,
                         const std::vector<Tensor>& target_slices,
                         double g_adv_norm, const PpoConfig& cfg) {
  PpoLossParts parts = ppo_loss(tape, net, mb, cfg);
  GradMap grads = tape.backward(parts.total);

  Tensor dot, norm_sq;
  std::vector<Tensor> params = net.params();
  for (size_t i = 0; i < params.size(); ++i) {
    auto it = grads.find(params[i].storage());
    check(it != grads.end(), "eval_alignment: parameter missing a gradient");
    const Tensor& gp = it->second;
    Tensor d = ops::dot_flat(tape, gp, target_slices[i]);
    Tensor n = ops::dot_flat(tape, gp, gp);
    dot = dot.defined() ? ops::add(tape, dot, d) : d;
    norm_sq = norm_sq.defined() ? ops::add(tape, norm_sq, n) : n;
  }

  AlignEval ev;
  ev.g_train_norm = std::sqrt(norm_sq.item());
  if (ev.g_train_norm < kNormGuard || g_adv_norm < kNormGuard) {
    ev.degenerate = true;
    ev.value = 1.0;
    return ev;
  }
  Tensor cosine = ops::div(
      tape, dot, ops::mul_const(tape, ops::sqrt(tape, norm_sq), g_adv_norm));
  ev.loss = ops::add_const(tape, ops::neg(tape, cosine), 1.0);
  ev.value = ev.loss.item();
  return ev;
}

// Crafting freezes the advantage estimates computed from the clean values
// recorded at collection time.
void frozen_advantages(const RolloutBuffer& buffer, const PpoConfig& cfg,
                       std::vector<double>& advantages,
                       std::vector<double>& returns) {
  size_t n = buffer.transitions.size();
  std::vector<double> rewards(n), values(n);
  std::vector<uint8_t> dones(n);
  for (size_t i = 0; i < n; ++i) {
    rewards[i] = buffer.transitions[i].reward;
    values[i] = buffer.transitions[i].value;
    dones[i] = buffer.transitions[i].done ? 1 : 0;
  }
  advantages.assign(n, 0.0);
  returns.assign(n, 0.0);
  gae_compute(rewards, values, dones, cfg.gamma, cfg.lam,
              buffer.bootstrap_value, advantages, returns);
}

Minibatch crafting_minibatch(const RolloutBuffer& buffer,
                             const std::vector<int>& indices,
                             const PpoConfig& cfg) {
  std::vector<double> adv, ret;
  frozen_advantages(buffer, cfg, adv, ret);
  Minibatch mb;
  for (int i : indices) {
    const Transition& tr = buffer.transitions[static_cast<size_t>(i)];
    mb.actions.push_back(tr.action);
    mb.old_log_probs.push_back(tr.log_prob);
    mb.advantages.push_back(adv[static_cast<size_t>(i)]);
    mb.returns.push_back(ret[static_cast<size_t>(i)]);
  }
  return mb;  // caller supplies mb.obs
}

}  // namespace

TargetGradient target_gradient(const ActorCritic& net, const PoisonPlan& plan,
                               const RolloutBuffer& buffer, Rng& trigger_rng) {
  Tensor batch;
  if (plan.scenario == Scenario::TargetState) {
    batch = flatten_rows({plan.target_obs});
  } else {
    int n = std::min(plan.n_trigger, buffer.size());
    check(n >= 1, "target_gradient: empty rollout buffer");
    std::vector<int> picks = trigger_rng.sample_indices(buffer.size(), n);
    std::vector<Observation> stamped;
    stamped.reserve(picks.size());
    for (int i : picks)
      stamped.push_back(stamp_watermark(
          buffer.transitions[static_cast<size_t>(i)].obs, plan.wm));
    batch = flatten_rows(stamped);
  }

  Tape tape;
  Tensor loss = adversarial_loss(tape, net, batch, plan.a_d);
  GradMap grads = tape.backward(loss);
  // The adversarial loss never reaches the value head, so those parameters
  // carry an exactly-zero gradient rather than a map entry.
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(net.param_count()));
  for (const Tensor& p : net.params()) {
    auto it = grads.find(p.storage());
    if (it == grads.end()) {
      flat.insert(flat.end(), static_cast<size_t>(p.size()), 0.0);
    } else {
      auto g = it->second.data();
      flat.insert(flat.end(), g.begin(), g.end());
    }
  }
  int n = static_cast<int>(flat.size());
  TargetGradient tg;
  tg.flat = Tensor::from_data({n}, std::move(flat));
  tg.norm = l2_norm(tg.flat.data());
  tg.degenerate = tg.norm < kNormGuard;
  return tg;
}

AlignResult alignment_loss(const Tensor& g_train, const Tensor& g_adv) {
  check(g_train.rank() == 1 && g_adv.rank() == 1,
        "alignment_loss: flat vectors required");
  check(g_train.size() == g_adv.size(),
        "alignment_loss: length mismatch " + std::to_string(g_train.size()) +
            " vs " + std::to_string(g_adv.size()));
  check(g_train.all_finite() && g_adv.all_finite(),
        "alignment_loss: non-finite input");
  double dot = 0.0;
  auto a = g_train.data();
  auto b = g_adv.data();
  for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  double na = l2_norm(a), nb = l2_norm(b);
  if (na < kNormGuard || nb < kNormGuard) return {1.0, true};
  return {1.0 - dot / (na * nb), false};
}

std::vector<int> select_poison_indices(int T, double fraction,
                                       Selection selection, Rng& rng) {
  int k = static_cast<int>(fraction * T);
  check(k >= 1,
        "select_poison_indices: fraction " + std::to_string(fraction) +
            " of " + std::to_string(T) +
            " transitions rounds down to zero; raise the fraction");
  k = std::min(k, T);
  if (selection == Selection::MostRecent) {
    std::vector<int> idx;
    for (int i = T - k; i < T; ++i) idx.push_back(i);
    return idx;
  }
  return rng.sample_indices(T, k);
}

AlignmentTrace craft_poisons(const ActorCritic& grad_net,
                             RolloutBuffer& buffer, const PoisonPlan& plan,
                             const std::vector<int>& indices,
                             const TargetGradient& g_adv,
                             const PpoConfig& ppo_cfg) {
  AlignmentTrace trace;
  trace.g_adv_norm = g_adv.norm;
  check(!indices.empty(), "craft_poisons: no indices selected");
  check(!g_adv.degenerate, "craft_poisons: degenerate target gradient");

  const int k = static_cast<int>(indices.size());
  const Shape obs_shape = buffer.transitions.front().obs.shape();
  const int d = static_cast<int>(shape_numel(obs_shape));

  // Ball centers: the clean observation (TargetState) or the stamped clean
  // observation (Watermark); the trigger itself is the attacker's stamp and
  // the epsilon ball hides the alignment perturbation on top of it.
  std::vector<Observation> centers;
  centers.reserve(static_cast<size_t>(k));
  for (int i : indices) {
    const Observation& clean = buffer.transitions[static_cast<size_t>(i)].obs;
    centers.push_back(plan.scenario == Scenario::Watermark
                          ? stamp_watermark(clean, plan.wm)
                          : clean.clone());
  }

  auto write_back = [&](const std::vector<double>& rows) {
    for (int j = 0; j < k; ++j) {
      std::vector<double> row(rows.begin() + static_cast<long>(j) * d,
                              rows.begin() + static_cast<long>(j + 1) * d);
      buffer.transitions[static_cast<size_t>(indices[static_cast<size_t>(j)])]
          .obs = Tensor::from_data(obs_shape, std::move(row));
    }
  };

  Tensor center_mat = flatten_rows(centers);
  std::vector<double> work(center_mat.data().begin(), center_mat.data().end());
  if (plan.pgd_steps == 0) {
    write_back(work);
    return trace;
  }

  Minibatch mb = crafting_minibatch(buffer, indices, ppo_cfg);
  std::vector<Tensor> target_slices = unflatten(g_adv.flat, grad_net);
  const double alpha = plan.alpha_or_default();
  const double eps = plan.eps;
  auto center = center_mat.data();

  std::vector<double> best = work;
  for (int s = 0; s < plan.pgd_steps; ++s) {
    Tape tape;
    mb.obs = Tensor::from_data({k, d}, work);
    mb.obs.set_requires_grad(true);
    AlignEval ev =
        eval_alignment(tape, grad_net, mb, target_slices, g_adv.norm, ppo_cfg);
    if (s == 0) trace.g_train_norm_initial = ev.g_train_norm;
    if (!std::isfinite(ev.value)) {
      std::ostringstream os;
      os << "craft_poisons: non-finite alignment loss at PGD step " << s
         << " (trace:";
      for (double v : trace.steps) os << ' ' << v;
      os << ")";
      throw NumericFault(os.str());
    }
    trace.steps.push_back(ev.value);
    if (trace.best_step < 0 || ev.value < trace.best_loss) {
      trace.best_loss = ev.value;
      trace.best_step = s;
      best = work;
    }
    if (ev.degenerate) break;  // no usable descent direction
    if (s + 1 == plan.pgd_steps) break;  // final update would go unevaluated

    GradMap obs_grads = tape.backward(ev.loss);
    auto it = obs_grads.find(mb.obs.storage());
    check(it != obs_grads.end(), "craft_poisons: observation gradient missing");
    auto g = it->second.data();
    for (size_t j = 0; j < work.size(); ++j) {
      double sgn = (g[j] > 0.0) ? 1.0 : (g[j] < 0.0 ? -1.0 : 0.0);
      double x = work[j] - alpha * sgn;
      x = std::clamp(x, center[j] - eps, center[j] + eps);
      work[j] = std::clamp(x, 0.0, 1.0);
    }
  }

  write_back(best);
  return trace;
}

double recompute_alignment(const ActorCritic& grad_net,
                           const RolloutBuffer& buffer,
                           const std::vector<int>& indices,
                           const TargetGradient& g_adv,
                           const PpoConfig& ppo_cfg) {
  Minibatch mb = crafting_minibatch(buffer, indices, ppo_cfg);
  std::vector<Observation> rows;
  for (int i : indices)
    rows.push_back(buffer.transitions[static_cast<size_t>(i)].obs);
  mb.obs = flatten_rows(rows);
  Tape tape;
  std::vector<Tensor> slices = unflatten(g_adv.flat, grad_net);
  return eval_alignment(tape, grad_net, mb, slices, g_adv.norm, ppo_cfg).value;
}

PoisonEngine::PoisonEngine(PoisonPlan plan, PpoConfig ppo_cfg,
                           uint64_t master_seed)
    : plan_(std::move(plan)),
      ppo_(std::move(ppo_cfg)),
      select_rng_(stream_seed(master_seed, "poison-select")),
      trigger_rng_(stream_seed(master_seed, "poison-trigger")) {}

void PoisonEngine::operator()(RolloutBuffer& buffer,
                              const ActorCritic& grad_net, int rollout_index) {
  stats_.invocations += 1;
  last_sample_ = DumpSample{};
  const int T = buffer.size();

  // Threat-model audit snapshot: the attacker may only touch the selected
  // observations, nothing else.
  std::vector<double> pre_rewards, pre_logprobs;
  std::vector<int> pre_actions;
  std::vector<uint8_t> pre_dones;
  std::vector<std::vector<double>> pre_obs;
  pre_obs.reserve(static_cast<size_t>(T));
  for (const Transition& tr : buffer.transitions) {
    pre_rewards.push_back(tr.reward);
    pre_logprobs.push_back(tr.log_prob);
    pre_actions.push_back(tr.action);
    pre_dones.push_back(tr.done ? 1 : 0);
    pre_obs.emplace_back(tr.obs.data().begin(), tr.obs.data().end());
  }

  std::vector<int> indices = select_poison_indices(
      T, plan_.poison_fraction, plan_.selection, select_rng_);

  TargetGradient g_adv = target_gradient(grad_net, plan_, buffer, trigger_rng_);
  AlignmentTrace trace;
  trace.rollout = rollout_index;
  trace.g_adv_norm = g_adv.norm;
  if (g_adv.degenerate) {
    // Attack already saturated (or converged); leave this rollout clean.
    stats_.skipped_degenerate += 1;
    trace.skipped_degenerate = true;
    traces_.push_back(std::move(trace));
    return;
  }

  for (int i : indices) buffer.poisoned_mask[static_cast<size_t>(i)] = 1;
  Observation clean_first =
      buffer.transitions[static_cast<size_t>(indices.front())].obs.clone();

  trace = craft_poisons(grad_net, buffer, plan_, indices, g_adv, ppo_);
  trace.rollout = rollout_index;
  if (trace.improved()) stats_.improved += 1;
  traces_.push_back(trace);

  // Constraint audit over the whole buffer.
  std::vector<uint8_t> selected(static_cast<size_t>(T), 0);
  for (int i : indices) selected[static_cast<size_t>(i)] = 1;
  for (int i = 0; i < T; ++i) {
    const Transition& tr = buffer.transitions[static_cast<size_t>(i)];
    bool ok = tr.reward == pre_rewards[static_cast<size_t>(i)] &&
              tr.log_prob == pre_logprobs[static_cast<size_t>(i)] &&
              tr.action == pre_actions[static_cast<size_t>(i)] &&
              (tr.done ? 1 : 0) == pre_dones[static_cast<size_t>(i)];
    auto now = tr.obs.data();
    const std::vector<double>& before = pre_obs[static_cast<size_t>(i)];
    if (!selected[static_cast<size_t>(i)]) {
      ok = ok && std::memcmp(now.data(), before.data(),
                             before.size() * sizeof(double)) == 0;
    } else {
      Observation center_obs =
          plan_.scenario == Scenario::Watermark
              ? stamp_watermark(
                    Tensor::from_data(tr.obs.shape(),
                                      std::vector<double>(before)),
                    plan_.wm)
              : Tensor::from_data(tr.obs.shape(), std::vector<double>(before));
      auto c = center_obs.data();
      for (size_t j = 0; j < now.size(); ++j) {
        if (std::abs(now[j] - c[j]) > plan_.eps + 1e-12 || now[j] < 0.0 ||
            now[j] > 1.0) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) stats_.constraint_violations += 1;
  }

  last_sample_.valid = true;
  last_sample_.index = indices.front();
  last_sample_.clean = clean_first;
  last_sample_.poisoned =
      buffer.transitions[static_cast<size_t>(indices.front())].obs.clone();
}

}  // namespace pflab
