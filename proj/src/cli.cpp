#include "pflab/cli.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pflab/checkpoint.hpp"
#include "pflab/common.hpp"

namespace pflab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  check(!ec, "cannot create directory " + p.string() + ": " + ec.message());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  check(f.good(), "cannot open " + p.string());
  f << text;
  check(f.good(), "write failed for " + p.string());
}

NetConfig net_config_for(const ExperimentConfig& cfg) {
  NetConfig n = cfg.net;
  n.obs_dim = cfg.env.obs_dim();
  return n;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char kCsvHeader[] =
    "rollout_index,env_steps,mean_return,mean_ppo_loss,entropy,"
    "poisoned_count\n";

std::string csv_row(const TrainLogRow& r) {
  std::ostringstream os;
  os << r.rollout_index << ',' << r.env_steps << ','
     << fmt_double(r.mean_return) << ',' << fmt_double(r.mean_ppo_loss) << ','
     << fmt_double(r.entropy) << ',' << r.poisoned_count << "\n";
  return os.str();
}

std::string trace_to_json(const AlignmentTrace& t) {
  json j;
  j["rollout"] = t.rollout;
  j["steps"] = t.steps;
  j["best_step"] = t.best_step;
  j["best_loss"] = t.best_loss;
  j["g_adv_norm"] = t.g_adv_norm;
  j["g_train_norm_initial"] = t.g_train_norm_initial;
  j["skipped_degenerate"] = t.skipped_degenerate;
  return j.dump();
}

void write_traces(const fs::path& p, const std::vector<AlignmentTrace>& ts) {
  std::ofstream f(p, std::ios::trunc);
  check(f.good(), "cannot open " + p.string());
  for (const AlignmentTrace& t : ts) f << trace_to_json(t) << "\n";
}

struct PlanBundle {
  PoisonPlan plan;
  uint64_t target_digest = 0;
};

PlanBundle build_plan(const ExperimentConfig& cfg) {
  PlanBundle b;
  b.plan = cfg.poison;
  if (b.plan.scenario == Scenario::TargetState && !b.plan.target_obs.defined()) {
    auto [state, obs] = make_target_state({}, cfg.env);
    b.plan.target_obs = obs;
  }
  if (b.plan.target_obs.defined())
    b.target_digest = obs_digest(b.plan.target_obs);
  return b;
}

Observation amplified_diff(const Observation& clean, const Observation& poisoned,
                           double factor) {
  Observation d = clean.clone();
  auto cd = clean.data();
  auto pd = poisoned.data();
  auto dd = d.mutable_data();
  for (size_t i = 0; i < dd.size(); ++i)
    dd[i] = std::clamp(std::abs(pd[i] - cd[i]) * factor, 0.0, 1.0);
  return d;
}

char frame_name_buf[64];
std::string frame_name(const char* tag, int64_t step) {
  std::snprintf(frame_name_buf, sizeof frame_name_buf, "%s_%08lld.pgm", tag,
                static_cast<long long>(step));
  return frame_name_buf;
}

int argmax(const std::vector<double>& v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int>(i);
  return best;
}

// Shared by poison-train, transfer (victim side) and eval so white-box and
// transfer results come from the same measurement path.
AttackReport evaluate_net(const ActorCritic& net, const ExperimentConfig& cfg,
                          const PlanBundle* plan) {
  AttackReport r;
  r.seeds = {cfg.seed};
  PaddleCatch env(cfg.env, 0);
  ReturnStats clean =
      eval_clean_performance(net, env, cfg.eval.n_episodes,
                             stream_seed(cfg.seed, "eval-clean"),
                             cfg.eval.max_episode_steps);
  r.clean_mean_return = clean.mean;
  r.clean_std_return = clean.stddev;
  r.baseline_mean_return = cfg.eval.baseline_mean_return;

  if (!plan) {
    // Clean run; record the action distribution at the canonical target as a
    // no-attack control.
    auto [state, obs] = make_target_state({}, cfg.env);
    r.target_action_probs = eval_target_distribution(net, obs);
    return r;
  }

  const PoisonPlan& p = plan->plan;
  r.scenario = scenario_name(p.scenario);
  r.a_d = p.a_d;
  r.eps = p.eps;
  r.poison_fraction = p.poison_fraction;
  if (p.scenario == Scenario::TargetState) {
    r.target_action_probs = eval_target_distribution(net, p.target_obs);
    r.mean_p_ad = r.target_action_probs[static_cast<size_t>(p.a_d)];
    r.attack_success = argmax(r.target_action_probs) == p.a_d;
  } else {
    WatermarkEval we =
        eval_watermark_attack(net, env, p.wm, p.a_d, cfg.eval.n_wm_states,
                              stream_seed(cfg.seed, "eval-wm"));
    r.triggered_argmax_rate = we.triggered_argmax_rate;
    r.triggered_mean_distribution = we.mean_distribution;
    r.target_action_probs = we.mean_distribution;
    r.mean_p_ad = we.mean_distribution[static_cast<size_t>(p.a_d)];
    r.attack_success = argmax(we.mean_distribution) == p.a_d;
  }
  return r;
}

void write_report_files(const fs::path& dir, const AttackReport& r) {
  save_report(dir / "report.json", r);
  write_text(dir / "report.txt", render_report_table({r}));
  write_text(dir / "report.csv", reports_to_csv({r}));
}

void progress(const char* what, const TrainLogRow& row, int64_t total_rollouts) {
  if (row.rollout_index % 10 == 0 || row.rollout_index + 1 == total_rollouts)
    std::cerr << what << " rollout " << row.rollout_index + 1 << "/"
              << total_rollouts << " steps=" << row.env_steps
              << " mean_return=" << row.mean_return
              << " entropy=" << row.entropy << "\n";
}

}  // namespace

int cmd_train(const ExperimentConfig& cfg) {
  validate_config(cfg);
  if (cfg.poison_enabled)
    throw ConfigError("train runs clean; use poison-train for attacks");
  fs::path dir(cfg.output_dir);
  ensure_dir(dir);
  write_text(dir / "config.snapshot", serialize_config(cfg));

  ActorCritic net = ActorCritic::create(net_config_for(cfg), cfg.seed);
  PaddleCatch env(cfg.env, 0);
  AdamState adam = AdamState::init(net.param_count(), cfg.adam);

  std::ofstream csv(dir / "train_log.csv", std::ios::trunc);
  csv << kCsvHeader;
  TrainResult res = train(net, env, cfg.ppo, adam, cfg.seed, nullptr,
                          [&](const TrainLogRow& row) {
                            csv << csv_row(row);
                            progress("train", row, cfg.ppo.n_rollouts());
                          });

  save_checkpoint(dir / "checkpoint.pfck", net, adam);
  AttackReport report = evaluate_net(net, cfg, nullptr);
  write_report_files(dir, report);
  std::cout << render_report_table({report});
  return 0;
}

int cmd_poison_train(const ExperimentConfig& cfg) {
  validate_config(cfg);
  if (!cfg.poison_enabled)
    throw ConfigError("poison-train requires poison.enabled = true");

  fs::path dir(cfg.output_dir);
  ensure_dir(dir);
  write_text(dir / "config.snapshot", serialize_config(cfg));
  fs::path frames = dir / "frames";
  if (cfg.dump_frames) ensure_dir(frames);

  PlanBundle plan = build_plan(cfg);
  plan.plan.validate(cfg.net.n_actions, cfg.ppo.T);
  if (plan.plan.scenario == Scenario::TargetState)
    write_pgm(dir / "target_state.pgm", plan.plan.target_obs);

  ActorCritic net = ActorCritic::create(net_config_for(cfg), cfg.seed);
  PaddleCatch env(cfg.env, 0);
  AdamState adam = AdamState::init(net.param_count(), cfg.adam);
  PoisonEngine engine(plan.plan, cfg.ppo, cfg.seed);

  std::ofstream csv(dir / "train_log.csv", std::ios::trunc);
  csv << kCsvHeader;
  PoisonHook hook = [&engine](RolloutBuffer& buf, const ActorCritic& n,
                              int rollout) { engine(buf, n, rollout); };
  TrainResult res = train(
      net, env, cfg.ppo, adam, cfg.seed, hook, [&](const TrainLogRow& row) {
        csv << csv_row(row);
        progress("poison-train", row, cfg.ppo.n_rollouts());
        const PoisonEngine::DumpSample& s = engine.last_sample();
        if (cfg.dump_frames && s.valid) {
          int64_t step =
              static_cast<int64_t>(row.rollout_index) * cfg.ppo.T + s.index;
          write_pgm(frames / frame_name("clean", step), s.clean);
          write_pgm(frames / frame_name("poisoned", step), s.poisoned);
          write_pgm(frames / frame_name("diff16", step),
                    amplified_diff(s.clean, s.poisoned, 16.0));
        }
      });

  save_checkpoint(dir / "checkpoint.pfck", net, adam);
  write_traces(dir / "alignment_traces.jsonl", engine.traces());

  AttackReport report = evaluate_net(net, cfg, &plan);
  report.target_seen_during_training =
      plan.plan.scenario == Scenario::TargetState &&
      res.visited_digests.contains(plan.target_digest);
  const PoisonEngine::Stats& st = engine.stats();
  report.hook_invocations = st.invocations;
  report.hook_improved = st.improved;
  report.hook_skipped_degenerate = st.skipped_degenerate;
  report.constraint_violations = st.constraint_violations;
  int64_t crafted = st.invocations - st.skipped_degenerate;
  report.align_improved_fraction =
      crafted > 0 ? static_cast<double>(st.improved) / crafted
                  : std::numeric_limits<double>::quiet_NaN();
  write_report_files(dir, report);
  std::cout << render_report_table({report});
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  validate_config(cfg);
  fs::path dir(cfg.output_dir);
  ensure_dir(dir);

  ActorCritic net = ActorCritic::create(net_config_for(cfg), cfg.seed);
  AdamState adam = AdamState::init(net.param_count(), cfg.adam);
  load_checkpoint(checkpoint_path, net, adam);

  AttackReport report;
  if (cfg.poison_enabled) {
    PlanBundle plan = build_plan(cfg);
    report = evaluate_net(net, cfg, &plan);
  } else {
    report = evaluate_net(net, cfg, nullptr);
  }
  save_report(dir / "report_eval.json", report);
  write_text(dir / "report_eval.txt", render_report_table({report}));
  std::cout << render_report_table({report});
  return 0;
}

int cmd_transfer(const ExperimentConfig& cfg) {
  validate_config(cfg);
  if (!cfg.poison_enabled)
    throw ConfigError("transfer requires poison.enabled = true");
  uint64_t source_seed = cfg.source_seed;
  uint64_t victim_seed = cfg.victim_seed;
  if (source_seed == victim_seed)
    std::cerr << "transfer: source and victim seeds are equal; this "
                 "degenerates to the white-box attack\n";

  fs::path dir(cfg.output_dir);
  ensure_dir(dir);
  write_text(dir / "config.snapshot", serialize_config(cfg));

  PlanBundle plan = build_plan(cfg);
  plan.plan.validate(cfg.net.n_actions, cfg.ppo.T);
  if (plan.plan.scenario == Scenario::TargetState)
    write_pgm(dir / "target_state.pgm", plan.plan.target_obs);

  NetConfig ncfg = net_config_for(cfg);
  ActorCritic source_net = ActorCritic::create(ncfg, source_seed);
  ActorCritic victim_net = ActorCritic::create(ncfg, victim_seed);
  PaddleCatch source_env(cfg.env, 0), victim_env(cfg.env, 0);
  AdamState source_adam = AdamState::init(source_net.param_count(), cfg.adam);
  AdamState victim_adam = AdamState::init(victim_net.param_count(), cfg.adam);

  Trainer source_trainer(source_net, source_env, cfg.ppo, source_adam,
                         source_seed);
  Trainer victim_trainer(victim_net, victim_env, cfg.ppo, victim_adam,
                         victim_seed);
  PoisonEngine engine(plan.plan, cfg.ppo, victim_seed);

  std::ofstream csv(dir / "train_log.csv", std::ios::trunc);
  csv << kCsvHeader;
  // The attacker's own (source) agent trains cleanly in lockstep; every
  // victim rollout is poisoned with gradients taken from the source network.
  PoisonHook hook = [&](RolloutBuffer& buf, const ActorCritic&, int rollout) {
    source_trainer.step();
    engine(buf, source_net, rollout);
  };
  while (victim_trainer.step(hook)) {
    const TrainLogRow& row = victim_trainer.result().log.back();
    csv << csv_row(row);
    progress("transfer", row, cfg.ppo.n_rollouts());
  }

  save_checkpoint(dir / "checkpoint.pfck", victim_net, victim_adam);
  save_checkpoint(dir / "source_checkpoint.pfck", source_net, source_adam);
  write_traces(dir / "alignment_traces.jsonl", engine.traces());

  ExperimentConfig victim_cfg = cfg;
  victim_cfg.seed = victim_seed;
  AttackReport report = evaluate_net(victim_net, victim_cfg, &plan);
  report.source_seed = static_cast<int64_t>(source_seed);
  report.victim_seed = static_cast<int64_t>(victim_seed);
  report.target_seen_during_training =
      plan.plan.scenario == Scenario::TargetState &&
      victim_trainer.result().visited_digests.contains(plan.target_digest);
  const PoisonEngine::Stats& st = engine.stats();
  report.hook_invocations = st.invocations;
  report.hook_improved = st.improved;
  report.hook_skipped_degenerate = st.skipped_degenerate;
  report.constraint_violations = st.constraint_violations;
  int64_t crafted = st.invocations - st.skipped_degenerate;
  report.align_improved_fraction =
      crafted > 0 ? static_cast<double>(st.improved) / crafted
                  : std::numeric_limits<double>::quiet_NaN();
  write_report_files(dir, report);
  std::cout << render_report_table({report});
  return 0;
}

int cmd_matrix(const std::string& exe, const std::string& base_config,
               const std::string& cells_file, int jobs) {
  std::ifstream f(cells_file);
  if (!f.good()) throw ConfigError("cannot open cells file " + cells_file);

  struct Cell {
    std::string name, subcommand;
    std::vector<std::string> overrides;
  };
  std::vector<Cell> cells;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::istringstream is(line);
    std::string tok;
    Cell cell;
    if (!(is >> cell.name)) continue;
    if (cell.name[0] == '#') continue;
    if (cell.name.find('/') != std::string::npos)
      throw ConfigError("cells:" + std::to_string(lineno) +
                        ": cell name must not contain '/'");
    if (!(is >> cell.subcommand))
      throw ConfigError("cells:" + std::to_string(lineno) +
                        ": missing subcommand");
    while (is >> tok) cell.overrides.push_back(tok);
    cells.push_back(std::move(cell));
  }

  ExperimentConfig base = base_config.empty()
                              ? default_config()
                              : load_config(base_config, {});
  fs::path root(base.output_dir);
  ensure_dir(root);

  struct Child {
    pid_t pid;
    size_t cell;
  };
  std::vector<Child> running;
  std::vector<int> codes(cells.size(), -1);
  size_t next = 0;
  jobs = std::max(1, jobs);

  auto spawn = [&](size_t i) {
    const Cell& cell = cells[i];
    fs::path cell_dir = root / cell.name;
    ensure_dir(cell_dir);
    std::vector<std::string> args = {exe, cell.subcommand};
    if (!base_config.empty()) {
      args.push_back("--config");
      args.push_back(base_config);
    }
    bool has_out = false;
    for (const std::string& ov : cell.overrides) {
      args.push_back("--set");
      args.push_back(ov);
      if (ov.rfind("output_dir=", 0) == 0) has_out = true;
    }
    if (!has_out) {
      args.push_back("--set");
      args.push_back("output_dir=" + cell_dir.string());
    }

    pid_t pid = fork();
    check(pid >= 0, "matrix: fork failed");
    if (pid == 0) {
      fs::path logp = cell_dir / "stdout.log";
      FILE* lf = std::freopen(logp.c_str(), "w", stdout);
      if (lf) (void)dup2(fileno(stdout), fileno(stderr));
      std::vector<char*> argv;
      for (std::string& a : args) argv.push_back(a.data());
      argv.push_back(nullptr);
      execv(exe.c_str(), argv.data());
      std::perror("matrix: execv");
      _exit(127);
    }
    running.push_back({pid, i});
    std::cerr << "matrix: started cell '" << cell.name << "' (pid " << pid
              << ")\n";
  };

  while (next < cells.size() || !running.empty()) {
    while (next < cells.size() && static_cast<int>(running.size()) < jobs)
      spawn(next++);
    int status = 0;
    pid_t done = waitpid(-1, &status, 0);
    check(done > 0, "matrix: waitpid failed");
    for (size_t j = 0; j < running.size(); ++j) {
      if (running[j].pid != done) continue;
      int code = WIFEXITED(status) ? WEXITSTATUS(status) : 3;
      codes[running[j].cell] = code;
      std::cerr << "matrix: cell '" << cells[running[j].cell].name
                << "' finished with code " << code << "\n";
      running.erase(running.begin() + static_cast<long>(j));
      break;
    }
  }

  int worst = 0;
  for (size_t i = 0; i < cells.size(); ++i) {
    std::cout << cells[i].name << ": exit " << codes[i] << "\n";
    worst = std::max(worst, codes[i]);
  }
  return worst;
}

int cmd_check(const std::string& report_path,
              const std::vector<std::string>& exprs) {
  std::ifstream f(report_path);
  if (!f.good()) throw ConfigError("cannot open report " + report_path);
  json j;
  f >> j;

  auto resolve = [&](std::string path) -> json {
    json node = j;
    while (!path.empty()) {
      size_t bracket = path.find('[');
      size_t dot = path.find('.');
      size_t cut = std::min(bracket, dot);
      std::string field = path.substr(0, cut);
      if (!field.empty()) node = node.at(field);
      if (cut == std::string::npos) return node;
      if (cut == bracket) {
        size_t close = path.find(']', bracket);
        check(close != std::string::npos, "check: malformed index in path");
        int idx = std::stoi(path.substr(bracket + 1, close - bracket - 1));
        node = node.at(static_cast<size_t>(idx));
        path = path.substr(close + 1);
        if (!path.empty() && path[0] == '.') path = path.substr(1);
      } else {
        path = path.substr(dot + 1);
      }
    }
    return node;
  };

  bool all_ok = true;
  for (const std::string& expr : exprs) {
    static const char* ops[] = {"<=", ">=", "==", "!=", "<", ">"};
    std::string op, lhs, rhs;
    size_t pos = std::string::npos;
    for (const char* o : ops) {
      pos = expr.find(o);
      if (pos != std::string::npos) {
        op = o;
        lhs = expr.substr(0, pos);
        rhs = expr.substr(pos + op.size());
        break;
      }
    }
    check(!op.empty(), "check: no comparison operator in '" + expr + "'");

    json node = resolve(lhs);
    bool ok = false;
    if (node.is_boolean() || rhs == "true" || rhs == "false") {
      bool want = rhs == "true";
      bool got = node.get<bool>();
      ok = (op == "==") ? got == want : (op == "!=" ? got != want : false);
    } else if (node.is_string()) {
      std::string got = node.get<std::string>();
      ok = (op == "==") ? got == rhs : (op == "!=" ? got != rhs : false);
    } else {
      double got = node.get<double>();
      double want = std::stod(rhs);
      if (op == "<=") ok = got <= want;
      else if (op == ">=") ok = got >= want;
      else if (op == "<") ok = got < want;
      else if (op == ">") ok = got > want;
      else if (op == "==") ok = got == want;
      else ok = got != want;
    }
    std::cout << (ok ? "PASS " : "FAIL ") << expr << "  (actual: " << node
              << ")\n";
    all_ok = all_ok && ok;
  }
  return all_ok ? 0 : 4;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"pflab: PPO training and online gradient-alignment data "
               "poisoning on a deterministic pixel game"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, cells_file, report_path;
  std::vector<std::string> overrides, exprs;
  int jobs = 1;

  auto add_cfg_opts = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file (key = value lines)");
    sub->add_option("--set", overrides, "override, e.g. --set ppo.T=512");
  };

  CLI::App* train = app.add_subcommand("train", "clean PPO baseline");
  add_cfg_opts(train);
  CLI::App* ptrain =
      app.add_subcommand("poison-train", "PPO with the online attacker");
  add_cfg_opts(ptrain);
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_cfg_opts(ev);
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint file")
      ->required();
  CLI::App* transfer = app.add_subcommand(
      "transfer", "black-box transfer: poisons crafted on a separate agent");
  add_cfg_opts(transfer);
  CLI::App* matrix =
      app.add_subcommand("matrix", "run a file of experiment cells");
  matrix->add_option("--config", config_path, "base config file");
  matrix->add_option("--cells", cells_file, "cells file")->required();
  matrix->add_option("--jobs", jobs, "parallel cells");
  CLI::App* checkcmd =
      app.add_subcommand("check", "assert expressions against a report JSON");
  checkcmd->add_option("report", report_path, "report.json path")->required();
  checkcmd->add_option("exprs", exprs, "e.g. mean_p_ad>=0.5")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    auto cfg = [&]() {
      return config_path.empty() ? config_from_overrides(overrides)
                                 : load_config(config_path, overrides);
    };
    if (train->parsed()) return cmd_train(cfg());
    if (ptrain->parsed()) return cmd_poison_train(cfg());
    if (ev->parsed()) return cmd_eval(cfg(), checkpoint_path);
    if (transfer->parsed()) return cmd_transfer(cfg());
    if (matrix->parsed()) return cmd_matrix(argv[0], config_path, cells_file, jobs);
    if (checkcmd->parsed()) return cmd_check(report_path, exprs);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace pflab
