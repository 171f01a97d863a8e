#include <doctest.h>

#include <cmath>
#include <cstring>

#include "pflab/common.hpp"
#include "pflab/ppo.hpp"
#include "testutil.hpp"

using namespace pflab;
namespace tu = pflab::testutil;

namespace {

NetConfig small_net_cfg() {
  return NetConfig{.obs_dim = EnvConfig{}.obs_dim(),
                   .hidden = 16,
                   .depth = 2,
                   .n_actions = 4};
}

PpoConfig small_ppo() {
  PpoConfig c;
  c.T = 64;
  c.minibatch_size = 16;
  c.n_epochs = 2;
  c.total_steps = 128;
  return c;
}

bool buffers_equal(const RolloutBuffer& a, const RolloutBuffer& b) {
  if (a.size() != b.size()) return false;
  for (int i = 0; i < a.size(); ++i) {
    const Transition& x = a.transitions[static_cast<size_t>(i)];
    const Transition& y = b.transitions[static_cast<size_t>(i)];
    if (x.action != y.action || x.reward != y.reward || x.done != y.done ||
        x.log_prob != y.log_prob || x.value != y.value)
      return false;
    if (std::memcmp(x.obs.data().data(), y.obs.data().data(),
                    x.obs.data().size() * sizeof(double)) != 0)
      return false;
  }
  return a.bootstrap_value == b.bootstrap_value;
}

}  // namespace

TEST_CASE("collect_rollout: deterministic for a fixed seed") {
  EnvConfig ecfg;
  ActorCritic net = ActorCritic::create(small_net_cfg(), 3);
  PaddleCatch env1(ecfg, 0), env2(ecfg, 0);
  env1.reset(11);
  env2.reset(11);
  Rng r1(5), r2(5);
  RolloutBuffer a = collect_rollout(net, env1, 128, r1);
  RolloutBuffer b = collect_rollout(net, env2, 128, r2);
  CHECK(buffers_equal(a, b));
  CHECK(a.size() == 128);
  for (const Transition& tr : a.transitions) {
    CHECK(tr.log_prob <= 0.0);
    CHECK(std::isfinite(tr.value));
  }
}

TEST_CASE("collect_rollout: saturated policy picks one action everywhere") {
  NetConfig ncfg = small_net_cfg();
  ActorCritic net = ActorCritic::zeros(ncfg);
  Tensor pb = net.policy_b();  // shares storage
  pb.mutable_data()[1] = 50.0;  // FIRE saturated
  EnvConfig ecfg;
  PaddleCatch env(ecfg, 0);
  env.reset(2);
  Rng rng(2);
  RolloutBuffer buf = collect_rollout(net, env, 64, rng);
  for (const Transition& tr : buf.transitions) CHECK(tr.action == 1);
}

TEST_CASE("collect_rollout: uniform policy frequencies within 3 sigma") {
  ActorCritic net = ActorCritic::zeros(small_net_cfg());  // exactly uniform
  EnvConfig ecfg;
  PaddleCatch env(ecfg, 0);
  env.reset(7);
  Rng rng(7);
  int T = 4096;
  RolloutBuffer buf = collect_rollout(net, env, T, rng);
  std::vector<int> counts(4, 0);
  for (const Transition& tr : buf.transitions)
    ++counts[static_cast<size_t>(tr.action)];
  double p = 0.25;
  double sigma = std::sqrt(T * p * (1 - p));
  for (int c : counts) CHECK(std::abs(c - T * p) <= 3.0 * sigma);
}

TEST_CASE("compute_gae: spec examples") {
  {
    RolloutBuffer buf;
    buf.transitions.push_back(Transition{{}, 0, 1.0, true, 0.0, 0.0});
    compute_gae(buf, 1.0, 1.0, 0.0);
    CHECK(buf.advantages[0] == doctest::Approx(1.0));
    CHECK(buf.returns[0] == doctest::Approx(1.0));
  }
  {
    RolloutBuffer buf;
    for (int i = 0; i < 5; ++i)
      buf.transitions.push_back(Transition{{}, 0, 0.0, false, 0.0, 0.0});
    compute_gae(buf, 0.99, 0.95, 0.0);
    for (double a : buf.advantages) CHECK(a == 0.0);
  }
  {
    // Three-step hand-built buffer, gamma=0.9, lambda=0.5.
    RolloutBuffer buf;
    double rewards[3] = {1.0, -1.0, 0.5};
    double values[3] = {0.2, 0.3, -0.1};
    for (int i = 0; i < 3; ++i)
      buf.transitions.push_back(
          Transition{{}, 0, rewards[i], false, 0.0, values[i]});
    double bootstrap = 0.4;
    compute_gae(buf, 0.9, 0.5, bootstrap);
    double d2 = 0.5 + 0.9 * 0.4 - (-0.1);
    double d1 = -1.0 + 0.9 * (-0.1) - 0.3;
    double d0 = 1.0 + 0.9 * 0.3 - 0.2;
    double a2 = d2;
    double a1 = d1 + 0.9 * 0.5 * a2;
    double a0 = d0 + 0.9 * 0.5 * a1;
    CHECK(buf.advantages[2] == doctest::Approx(a2).epsilon(1e-12));
    CHECK(buf.advantages[1] == doctest::Approx(a1).epsilon(1e-12));
    CHECK(buf.advantages[0] == doctest::Approx(a0).epsilon(1e-12));
    CHECK(buf.returns[0] == doctest::Approx(a0 + 0.2).epsilon(1e-12));
  }
}

TEST_CASE("compute_gae matches the brute-force sum oracle exactly") {
  // Independent evaluator: A_t = sum_l (gamma*lam)^(l-t) * delta_l with the
  // product of (1-done) factors cutting episodes.
  Rng rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 1 + rng.uniform_int(8);
    std::vector<double> rewards(static_cast<size_t>(n)),
        values(static_cast<size_t>(n));
    std::vector<uint8_t> dones(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      rewards[static_cast<size_t>(i)] = rng.uniform(-2, 2);
      values[static_cast<size_t>(i)] = rng.uniform(-2, 2);
      dones[static_cast<size_t>(i)] = rng.uniform01() < 0.3 ? 1 : 0;
    }
    double gamma = rng.uniform(0.1, 1.0);
    double lam = rng.uniform(0.0, 1.0);
    double bootstrap = rng.uniform(-2, 2);

    std::vector<double> adv(static_cast<size_t>(n)), ret(static_cast<size_t>(n));
    gae_compute(rewards, values, dones, gamma, lam, bootstrap, adv, ret);

    for (int t = 0; t < n; ++t) {
      double acc = 0.0, w = 1.0;
      for (int l = t; l < n; ++l) {
        double not_done = dones[static_cast<size_t>(l)] ? 0.0 : 1.0;
        double next_v =
            l + 1 < n ? values[static_cast<size_t>(l + 1)] : bootstrap;
        double delta = rewards[static_cast<size_t>(l)] +
                       gamma * next_v * not_done -
                       values[static_cast<size_t>(l)];
        acc += w * delta;
        if (dones[static_cast<size_t>(l)]) break;
        w *= gamma * lam;
      }
      CHECK(std::abs(acc - adv[static_cast<size_t>(t)]) <= 1e-12);
      CHECK(std::abs(acc + values[static_cast<size_t>(t)] -
                     ret[static_cast<size_t>(t)]) <= 1e-12);
    }
  }
}

TEST_CASE("ppo_loss: entropy-only case and uniform entropy value") {
  NetConfig ncfg = small_net_cfg();
  ActorCritic net = ActorCritic::zeros(ncfg);  // uniform policy, zero values
  PpoConfig cfg = small_ppo();

  int k = 8;
  Minibatch mb;
  std::vector<double> obs_flat;
  Rng rng(5);
  for (int i = 0; i < k * ncfg.obs_dim; ++i)
    obs_flat.push_back(rng.uniform(0.0, 1.0));
  mb.obs = Tensor::from_data({k, ncfg.obs_dim}, std::move(obs_flat));
  for (int i = 0; i < k; ++i) {
    mb.actions.push_back(i % 4);
    mb.old_log_probs.push_back(std::log(0.25));  // matches the uniform policy
    mb.advantages.push_back(0.0);
    mb.returns.push_back(0.0);  // value head outputs exactly zero
  }
  Tape t;
  PpoLossParts parts = ppo_loss(t, net, mb, cfg);
  CHECK(parts.entropy == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(parts.policy_loss == doctest::Approx(0.0));
  CHECK(parts.value_loss == doctest::Approx(0.0));
  CHECK(parts.total.item() ==
        doctest::Approx(-cfg.ent_coef * std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("ppo_loss: clipped surrogate picks the clipped branch") {
  // Two samples with post-normalization advantages exactly {+1,-1}. Sample 0
  // has ratio 1.3 against clip 0.2, so its surrogate must use 1.2*A.
  NetConfig ncfg = small_net_cfg();
  ActorCritic net = ActorCritic::zeros(ncfg);
  PpoConfig cfg = small_ppo();
  cfg.clip = 0.2;
  cfg.vf_coef = 0.0;
  cfg.ent_coef = 0.0;

  Minibatch mb;
  Rng rng(6);
  std::vector<double> obs_flat;
  for (int i = 0; i < 2 * ncfg.obs_dim; ++i)
    obs_flat.push_back(rng.uniform(0.0, 1.0));
  mb.obs = Tensor::from_data({2, ncfg.obs_dim}, std::move(obs_flat));
  mb.actions = {0, 1};
  // Current policy is uniform: log pi = log 0.25. ratio = 0.25/old_p.
  mb.old_log_probs = {std::log(0.25 / 1.3), std::log(0.25)};
  mb.advantages = {1.0, -1.0};
  mb.returns = {0.0, 0.0};

  Tape t;
  PpoLossParts parts = ppo_loss(t, net, mb, cfg);
  // surr0 = min(1.3*1, 1.2*1) = 1.2 ; surr1 = min(1*-1, 1*-1) = -1
  double expected = -(1.2 + -1.0) / 2.0;
  CHECK(parts.total.item() == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("ppo_loss: advantage normalization inside the minibatch") {
  NetConfig ncfg = small_net_cfg();
  ActorCritic net = ActorCritic::create(ncfg, 2);
  PpoConfig cfg = small_ppo();
  Rng rng(8);
  int k = 16;
  std::vector<double> obs_flat;
  for (int i = 0; i < k * ncfg.obs_dim; ++i)
    obs_flat.push_back(rng.uniform(0.0, 1.0));
  Minibatch mb;
  mb.obs = Tensor::from_data({k, ncfg.obs_dim}, std::move(obs_flat));
  std::vector<double> adv;
  for (int i = 0; i < k; ++i) {
    mb.actions.push_back(rng.uniform_int(4));
    mb.old_log_probs.push_back(std::log(0.25));
    adv.push_back(rng.uniform(-3, 3));
    mb.returns.push_back(rng.uniform(-1, 1));
  }
  mb.advantages = adv;

  // Recreate the normalization and verify mean/std properties directly.
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= k;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  double stddev = std::sqrt(var / k);
  double denom = std::max(stddev, 1e-8);
  double nmean = 0.0, nvar = 0.0;
  for (double a : adv) nmean += (a - mean) / denom;
  nmean /= k;
  for (double a : adv) {
    double z = (a - mean) / denom - nmean;
    nvar += z * z;
  }
  CHECK(std::abs(nmean) < 1e-9);
  CHECK(std::abs(std::sqrt(nvar / k) - 1.0) < 1e-6);

  Tape t;
  PpoLossParts parts = ppo_loss(t, net, mb, cfg);
  CHECK(std::isfinite(parts.total.item()));
}

TEST_CASE("ppo_loss gradients match finite differences (params and obs)") {
  NetConfig ncfg{.obs_dim = 6, .hidden = 5, .depth = 2, .n_actions = 4};
  ActorCritic net = ActorCritic::create(ncfg, 21);
  PpoConfig cfg;
  cfg.T = 4;
  cfg.minibatch_size = 4;

  Rng rng(22);
  int k = 3;
  Minibatch mb;
  mb.obs = tu::rand_tensor({k, 6}, rng, 0.1, 0.9, true);
  for (int i = 0; i < k; ++i) {
    mb.actions.push_back(rng.uniform_int(4));
    mb.old_log_probs.push_back(std::log(rng.uniform(0.15, 0.35)));
    mb.advantages.push_back(rng.uniform(-2, 2));
    mb.returns.push_back(rng.uniform(-1, 1));
  }

  // Keep every ratio clear of the clip kinks so FD is valid.
  {
    Tape t;
    ForwardOut out = forward(t, net, mb.obs);
    Tensor lp = ops::gather_rows(t, ops::log_softmax_rows(t, out.logits),
                                 mb.actions);
    for (int i = 0; i < k; ++i) {
      double ratio =
          std::exp(lp.at(i) - mb.old_log_probs[static_cast<size_t>(i)]);
      REQUIRE(std::abs(ratio - (1.0 - cfg.clip)) > 1e-3);
      REQUIRE(std::abs(ratio - (1.0 + cfg.clip)) > 1e-3);
    }
  }

  auto value = [&]() {
    Tape t;
    return ppo_loss(t, net, mb, cfg).total.item();
  };
  Tape t;
  PpoLossParts parts = ppo_loss(t, net, mb, cfg);
  GradMap gm = t.backward(parts.total);

  tu::GradCheck gc;
  for (Tensor p : net.params()) {
    std::vector<double> g(gm.at(p.storage()).data().begin(),
                          gm.at(p.storage()).data().end());
    tu::fd_check_tensor(value, p, g, gc);
  }
  std::vector<double> gobs(gm.at(mb.obs.storage()).data().begin(),
                           gm.at(mb.obs.storage()).data().end());
  tu::fd_check_tensor(value, mb.obs, gobs, gc);
  CHECK(gc.ok);
}

TEST_CASE("train: zero steps, no-op hook equivalence, on-policy discard") {
  EnvConfig ecfg;
  NetConfig ncfg = small_net_cfg();
  PpoConfig cfg = small_ppo();

  {
    ActorCritic net = ActorCritic::create(ncfg, 4);
    std::vector<double> before(net.params()[0].data().begin(),
                               net.params()[0].data().end());
    PaddleCatch env(ecfg, 0);
    AdamState adam = AdamState::init(net.param_count());
    PpoConfig zero = cfg;
    zero.total_steps = 0;
    TrainResult res = train(net, env, zero, adam, 9);
    CHECK(res.log.empty());
    CHECK(adam.step_count == 0);
    std::vector<double> after(net.params()[0].data().begin(),
                              net.params()[0].data().end());
    CHECK(before == after);
  }
  {
    // A hook that does nothing must leave training identical to no hook.
    ActorCritic n1 = ActorCritic::create(ncfg, 4);
    ActorCritic n2 = ActorCritic::create(ncfg, 4);
    PaddleCatch e1(ecfg, 0), e2(ecfg, 0);
    AdamState a1 = AdamState::init(n1.param_count());
    AdamState a2 = AdamState::init(n2.param_count());
    TrainResult r1 = train(n1, e1, cfg, a1, 13);
    TrainResult r2 = train(n2, e2, cfg, a2, 13,
                           [](RolloutBuffer&, const ActorCritic&, int) {});
    std::vector<Tensor> p1 = n1.params(), p2 = n2.params();
    for (size_t i = 0; i < p1.size(); ++i)
      CHECK(std::memcmp(p1[i].data().data(), p2[i].data().data(),
                        p1[i].data().size() * sizeof(double)) == 0);
    CHECK(r1.log.size() == r2.log.size());
    CHECK(r1.log.size() ==
          static_cast<size_t>((cfg.total_steps + cfg.T - 1) / cfg.T));
  }
  {
    // Each rollout hands the hook a fresh buffer.
    ActorCritic net = ActorCritic::create(ncfg, 4);
    PaddleCatch env(ecfg, 0);
    AdamState adam = AdamState::init(net.param_count());
    std::vector<const void*> buffer_ids;
    std::vector<const void*> first_obs_ids;
    train(net, env, cfg, adam, 13,
          [&](RolloutBuffer& b, const ActorCritic&, int) {
            buffer_ids.push_back(&b);
            first_obs_ids.push_back(b.transitions.front().obs.storage());
          });
    REQUIRE(first_obs_ids.size() == 2);
    CHECK(first_obs_ids[0] != first_obs_ids[1]);
  }
}

TEST_CASE("train: deterministic across reruns") {
  EnvConfig ecfg;
  NetConfig ncfg = small_net_cfg();
  PpoConfig cfg = small_ppo();
  auto run = [&]() {
    ActorCritic net = ActorCritic::create(ncfg, 6);
    PaddleCatch env(ecfg, 0);
    AdamState adam = AdamState::init(net.param_count());
    train(net, env, cfg, adam, 21);
    std::vector<double> flat;
    for (Tensor p : net.params())
      flat.insert(flat.end(), p.data().begin(), p.data().end());
    return flat;
  };
  CHECK(run() == run());
}
