#include "pflab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "pflab/common.hpp"

namespace pflab {

namespace {

using nlohmann::json;

Tensor flatten_obs(const Observation& obs) {
  return Tensor::from_data({1, static_cast<int>(obs.size())},
                           std::vector<double>(obs.data().begin(),
                                               obs.data().end()));
}

// Sorted before summation so aggregation cannot depend on run order.
double stable_mean(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  return std::accumulate(v.begin(), v.end(), 0.0) /
         static_cast<double>(v.size());
}

double stable_std(std::vector<double> v, double mean) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  for (double& x : v) x = (x - mean) * (x - mean);
  std::sort(v.begin(), v.end());
  return std::sqrt(std::accumulate(v.begin(), v.end(), 0.0) /
                   static_cast<double>(v.size()));
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<double> eval_target_distribution(const ActorCritic& net,
                                             const Observation& target_obs) {
  Tape tape;
  ForwardOut out = forward(tape, net, flatten_obs(target_obs));
  Tensor probs = ops::softmax_rows(tape, out.logits);
  return std::vector<double>(probs.data().begin(), probs.data().end());
}

int greedy_action(const ActorCritic& net, const Observation& obs) {
  Tape tape;
  ForwardOut out = forward(tape, net, flatten_obs(obs));
  auto logits = out.logits.data();
  int best = 0;
  for (size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[static_cast<size_t>(best)])
      best = static_cast<int>(i);
  return best;
}

ReturnStats eval_policy_performance(const PolicyFn& policy, PaddleCatch& env,
                                    int n_episodes, uint64_t seed,
                                    int max_episode_steps) {
  check(n_episodes >= 1, "eval: n_episodes must be positive");
  env.reset(seed);
  std::vector<double> returns;
  for (int ep = 0; ep < n_episodes; ++ep) {
    Observation obs = env.reset_board();
    double total = 0.0;
    for (int t = 0; t < max_episode_steps; ++t) {
      int action = policy(env.state(), obs);
      PaddleCatch::Step st = env.step(action);
      total += st.reward;
      obs = st.obs;
      if (st.done) break;
    }
    returns.push_back(total);
  }
  ReturnStats s;
  s.episodes = n_episodes;
  s.mean = std::accumulate(returns.begin(), returns.end(), 0.0) / n_episodes;
  double var = 0.0;
  for (double r : returns) var += (r - s.mean) * (r - s.mean);
  s.stddev = std::sqrt(var / n_episodes);
  return s;
}

ReturnStats eval_clean_performance(const ActorCritic& net, PaddleCatch& env,
                                   int n_episodes, uint64_t seed,
                                   int max_episode_steps) {
  return eval_policy_performance(
      [&net](const GameState&, const Observation& obs) {
        return greedy_action(net, obs);
      },
      env, n_episodes, seed, max_episode_steps);
}

WatermarkEval eval_watermark_attack(const ActorCritic& net, PaddleCatch& env,
                                    const Watermark& wm, int a_d, int n_states,
                                    uint64_t seed) {
  check(n_states >= 1, "eval_watermark_attack: n_states must be positive");
  env.reset(seed);
  Rng rng(stream_seed(seed, "wm-harvest"));

  // States from the agent's own clean play, sampled (not greedy) so the
  // harvest covers the visited distribution.
  std::vector<Observation> states;
  states.reserve(static_cast<size_t>(n_states));
  Observation obs = env.observe();
  while (static_cast<int>(states.size()) < n_states) {
    states.push_back(obs);
    std::vector<double> probs = eval_target_distribution(net, obs);
    double u = rng.uniform01();
    double acc = 0.0;
    int action = static_cast<int>(probs.size()) - 1;
    for (size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) {
        action = static_cast<int>(i);
        break;
      }
    }
    PaddleCatch::Step st = env.step(action);
    obs = st.done ? env.reset_board() : st.obs;
  }

  int n_actions = net.config().n_actions;
  WatermarkEval we;
  we.n_states = n_states;
  we.mean_distribution.assign(static_cast<size_t>(n_actions), 0.0);
  int hits = 0;
  for (const Observation& s : states) {
    std::vector<double> probs =
        eval_target_distribution(net, stamp_watermark(s, wm));
    int best = 0;
    for (size_t i = 1; i < probs.size(); ++i)
      if (probs[i] > probs[static_cast<size_t>(best)])
        best = static_cast<int>(i);
    if (best == a_d) ++hits;
    for (size_t i = 0; i < probs.size(); ++i) we.mean_distribution[i] += probs[i];
  }
  for (double& p : we.mean_distribution) p /= n_states;
  we.triggered_argmax_rate = static_cast<double>(hits) / n_states;
  return we;
}

std::string report_to_json(const AttackReport& r) {
  json j;
  j["schema_version"] = 1;
  j["scenario"] = r.scenario;
  j["a_d"] = r.a_d;
  j["a_d_name"] = r.a_d >= 0 ? action_name(r.a_d) : "";
  j["eps"] = r.eps;
  j["poison_fraction"] = r.poison_fraction;
  j["seeds"] = r.seeds;
  j["target_action_probs"] = r.target_action_probs;
  j["mean_p_ad"] = r.mean_p_ad;
  j["attack_success"] = r.attack_success;
  j["clean_mean_return"] = r.clean_mean_return;
  j["clean_std_return"] = r.clean_std_return;
  j["baseline_mean_return"] = r.baseline_mean_return;
  j["triggered_argmax_rate"] = r.triggered_argmax_rate;
  j["triggered_mean_distribution"] = r.triggered_mean_distribution;
  j["target_seen_during_training"] = r.target_seen_during_training;
  j["hook_invocations"] = r.hook_invocations;
  j["hook_improved"] = r.hook_improved;
  j["hook_skipped_degenerate"] = r.hook_skipped_degenerate;
  j["constraint_violations"] = r.constraint_violations;
  j["align_improved_fraction"] = r.align_improved_fraction;
  j["source_seed"] = r.source_seed;
  j["victim_seed"] = r.victim_seed;
  return j.dump(2) + "\n";
}

AttackReport report_from_json(const std::string& text) {
  json j = json::parse(text);
  // NaN serializes as null; map it back.
  auto num = [&](const char* key) {
    const json& v = j.at(key);
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                       : v.get<double>();
  };
  AttackReport r;
  r.scenario = j.at("scenario").get<std::string>();
  r.a_d = j.at("a_d").get<int>();
  r.eps = num("eps");
  r.poison_fraction = num("poison_fraction");
  r.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  r.target_action_probs = j.at("target_action_probs").get<std::vector<double>>();
  r.mean_p_ad = num("mean_p_ad");
  r.attack_success = j.at("attack_success").get<bool>();
  r.clean_mean_return = num("clean_mean_return");
  r.clean_std_return = num("clean_std_return");
  r.baseline_mean_return = num("baseline_mean_return");
  r.triggered_argmax_rate = num("triggered_argmax_rate");
  r.triggered_mean_distribution =
      j.at("triggered_mean_distribution").get<std::vector<double>>();
  r.target_seen_during_training =
      j.at("target_seen_during_training").get<bool>();
  r.hook_invocations = j.at("hook_invocations").get<int64_t>();
  r.hook_improved = j.at("hook_improved").get<int64_t>();
  r.hook_skipped_degenerate = j.at("hook_skipped_degenerate").get<int64_t>();
  r.constraint_violations = j.at("constraint_violations").get<int64_t>();
  r.align_improved_fraction = num("align_improved_fraction");
  r.source_seed = j.at("source_seed").get<int64_t>();
  r.victim_seed = j.at("victim_seed").get<int64_t>();
  return r;
}

void save_report(const std::filesystem::path& path, const AttackReport& r) {
  std::ofstream f(path, std::ios::trunc);
  check(f.good(), "save_report: cannot open " + path.string());
  f << report_to_json(r);
  check(f.good(), "save_report: write failed");
}

AttackReport load_report(const std::filesystem::path& path) {
  std::ifstream f(path);
  check(f.good(), "load_report: cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return report_from_json(ss.str());
}

AttackReport aggregate_reports(const std::vector<AttackReport>& runs) {
  check(!runs.empty(), "aggregate_reports: no runs");
  const AttackReport& head = runs.front();
  for (const AttackReport& r : runs)
    check(r.scenario == head.scenario && r.a_d == head.a_d &&
              r.eps == head.eps && r.poison_fraction == head.poison_fraction,
          "aggregate_reports: mixed-configuration artifacts");

  AttackReport agg = head;
  agg.seeds.clear();
  for (const AttackReport& r : runs)
    agg.seeds.insert(agg.seeds.end(), r.seeds.begin(), r.seeds.end());
  std::sort(agg.seeds.begin(), agg.seeds.end());

  size_t n_actions = head.target_action_probs.size();
  agg.target_action_probs.assign(n_actions, 0.0);
  for (size_t a = 0; a < n_actions; ++a) {
    std::vector<double> col;
    for (const AttackReport& r : runs) col.push_back(r.target_action_probs[a]);
    agg.target_action_probs[a] = stable_mean(col);
  }

  auto collect = [&](auto field) {
    std::vector<double> v;
    for (const AttackReport& r : runs) v.push_back(field(r));
    return v;
  };
  std::vector<double> cleans =
      collect([](const AttackReport& r) { return r.clean_mean_return; });
  agg.clean_mean_return = stable_mean(cleans);
  agg.clean_std_return = stable_std(cleans, agg.clean_mean_return);
  agg.baseline_mean_return = stable_mean(
      collect([](const AttackReport& r) { return r.baseline_mean_return; }));
  agg.mean_p_ad = stable_mean(
      collect([](const AttackReport& r) { return r.mean_p_ad; }));
  agg.triggered_argmax_rate = stable_mean(
      collect([](const AttackReport& r) { return r.triggered_argmax_rate; }));
  if (!head.triggered_mean_distribution.empty()) {
    agg.triggered_mean_distribution.assign(n_actions, 0.0);
    for (size_t a = 0; a < n_actions; ++a) {
      std::vector<double> col;
      for (const AttackReport& r : runs)
        col.push_back(r.triggered_mean_distribution[a]);
      agg.triggered_mean_distribution[a] = stable_mean(col);
    }
  }

  agg.hook_invocations = agg.hook_improved = agg.hook_skipped_degenerate = 0;
  agg.constraint_violations = 0;
  bool any_seen = false;
  for (const AttackReport& r : runs) {
    agg.hook_invocations += r.hook_invocations;
    agg.hook_improved += r.hook_improved;
    agg.hook_skipped_degenerate += r.hook_skipped_degenerate;
    agg.constraint_violations += r.constraint_violations;
    any_seen = any_seen || r.target_seen_during_training;
  }
  agg.target_seen_during_training = any_seen;
  int64_t crafted = agg.hook_invocations - agg.hook_skipped_degenerate;
  agg.align_improved_fraction =
      crafted > 0 ? static_cast<double>(agg.hook_improved) /
                        static_cast<double>(crafted)
                  : std::numeric_limits<double>::quiet_NaN();

  if (!agg.target_action_probs.empty()) {
    int best = 0;
    for (size_t a = 1; a < n_actions; ++a)
      if (agg.target_action_probs[a] >
          agg.target_action_probs[static_cast<size_t>(best)])
        best = static_cast<int>(a);
    agg.attack_success = best == agg.a_d;
    if (agg.a_d >= 0)
      agg.mean_p_ad = agg.target_action_probs[static_cast<size_t>(agg.a_d)];
  }
  return agg;
}

std::string render_report_table(const std::vector<AttackReport>& reports) {
  check(!reports.empty(), "render_report_table: no reports");
  size_t n_actions = reports.front().target_action_probs.empty()
                         ? 4
                         : reports.front().target_action_probs.size();
  std::ostringstream os;
  os << std::left;
  auto col = [&](const std::string& s, int w) {
    os << s;
    for (int i = static_cast<int>(s.size()); i < w; ++i) os << ' ';
  };
  col("scenario", 14);
  col("desired", 9);
  for (size_t a = 0; a < n_actions; ++a)
    col(std::string("p[") + action_name(static_cast<int>(a)) + "]", 10);
  col("success", 9);
  col("trig_rate", 11);
  col("score", 16);
  os << "baseline\n";
  for (const AttackReport& r : reports) {
    char buf[64];
    col(r.scenario, 14);
    col(r.a_d >= 0 ? action_name(r.a_d) : "-", 9);
    for (size_t a = 0; a < n_actions; ++a) {
      if (a < r.target_action_probs.size()) {
        std::snprintf(buf, sizeof buf, "%.3f", r.target_action_probs[a]);
        col(buf, 10);
      } else {
        col("-", 10);
      }
    }
    col(r.scenario == "clean" ? "-" : (r.attack_success ? "yes" : "no"), 9);
    if (std::isnan(r.triggered_argmax_rate)) {
      col("-", 11);
    } else {
      std::snprintf(buf, sizeof buf, "%.3f", r.triggered_argmax_rate);
      col(buf, 11);
    }
    std::snprintf(buf, sizeof buf, "%+.2f +/- %.2f", r.clean_mean_return,
                  r.clean_std_return);
    col(buf, 16);
    if (std::isnan(r.baseline_mean_return)) {
      os << "-";
    } else {
      std::snprintf(buf, sizeof buf, "%+.2f", r.baseline_mean_return);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

std::string reports_to_csv(const std::vector<AttackReport>& reports) {
  std::ostringstream os;
  os << "scenario,a_d,a_d_name,eps,poison_fraction,seeds,mean_p_ad,"
        "attack_success,clean_mean_return,clean_std_return,"
        "baseline_mean_return,triggered_argmax_rate,"
        "target_seen_during_training,hook_invocations,hook_improved,"
        "hook_skipped_degenerate,constraint_violations,"
        "align_improved_fraction,source_seed,victim_seed";
  size_t n_actions =
      reports.empty() ? 0 : reports.front().target_action_probs.size();
  for (size_t a = 0; a < n_actions; ++a)
    os << ",p_" << action_name(static_cast<int>(a));
  os << "\n";
  for (const AttackReport& r : reports) {
    os << r.scenario << ',' << r.a_d << ','
       << (r.a_d >= 0 ? action_name(r.a_d) : "") << ',' << fmt_double(r.eps)
       << ',' << fmt_double(r.poison_fraction) << ',';
    for (size_t i = 0; i < r.seeds.size(); ++i)
      os << (i ? ";" : "") << r.seeds[i];
    os << ',' << fmt_double(r.mean_p_ad) << ','
       << (r.attack_success ? "true" : "false") << ','
       << fmt_double(r.clean_mean_return) << ','
       << fmt_double(r.clean_std_return) << ','
       << fmt_double(r.baseline_mean_return) << ','
       << fmt_double(r.triggered_argmax_rate) << ','
       << (r.target_seen_during_training ? "true" : "false") << ','
       << r.hook_invocations << ',' << r.hook_improved << ','
       << r.hook_skipped_degenerate << ',' << r.constraint_violations << ','
       << fmt_double(r.align_improved_fraction) << ',' << r.source_seed << ','
       << r.victim_seed;
    for (size_t a = 0; a < n_actions; ++a)
      os << ',' << (a < r.target_action_probs.size()
                        ? fmt_double(r.target_action_probs[a])
                        : "");
    os << "\n";
  }
  return os.str();
}

}  // namespace pflab
