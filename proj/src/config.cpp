#include "pflab/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pflab/common.hpp"

namespace pflab {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool parse_bool(const std::string& v) {
  std::string s = lower(v);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("expected a boolean, got '" + v + "'");
}

int64_t parse_int(const std::string& v) {
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw ConfigError("");
    return r;
  } catch (const std::exception&) {
    throw ConfigError("expected an integer, got '" + v + "'");
  }
}

double parse_real(const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw ConfigError("");
    return r;
  } catch (const std::exception&) {
    throw ConfigError("expected a real, got '" + v + "'");
  }
}

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void apply_one(ExperimentConfig& c, const std::string& key,
               const std::string& value) {
  const std::string k = key;
  if (k == "seed") c.seed = static_cast<uint64_t>(parse_int(value));
  else if (k == "output_dir") c.output_dir = value;
  else if (k == "dump_frames") c.dump_frames = parse_bool(value);

  else if (k == "env.cols") c.env.cols = static_cast<int>(parse_int(value));
  else if (k == "env.rows") c.env.rows = static_cast<int>(parse_int(value));
  else if (k == "env.paddle_w") c.env.paddle_w = static_cast<int>(parse_int(value));
  else if (k == "env.balls_per_episode")
    c.env.balls_per_episode = static_cast<int>(parse_int(value));

  else if (k == "net.hidden") c.net.hidden = static_cast<int>(parse_int(value));
  else if (k == "net.depth") c.net.depth = static_cast<int>(parse_int(value));
  else if (k == "net.n_actions")
    c.net.n_actions = static_cast<int>(parse_int(value));

  else if (k == "ppo.T") c.ppo.T = static_cast<int>(parse_int(value));
  else if (k == "ppo.n_epochs") c.ppo.n_epochs = static_cast<int>(parse_int(value));
  else if (k == "ppo.minibatch_size")
    c.ppo.minibatch_size = static_cast<int>(parse_int(value));
  else if (k == "ppo.gamma") c.ppo.gamma = parse_real(value);
  else if (k == "ppo.lam") c.ppo.lam = parse_real(value);
  else if (k == "ppo.clip") c.ppo.clip = parse_real(value);
  else if (k == "ppo.vf_coef") c.ppo.vf_coef = parse_real(value);
  else if (k == "ppo.ent_coef") c.ppo.ent_coef = parse_real(value);
  else if (k == "ppo.total_steps") c.ppo.total_steps = parse_int(value);
  else if (k == "ppo.recompute_logprob_on_poisoned")
    c.ppo.recompute_logprob_on_poisoned = parse_bool(value);

  else if (k == "adam.lr") c.adam.lr = parse_real(value);
  else if (k == "adam.beta1") c.adam.beta1 = parse_real(value);
  else if (k == "adam.beta2") c.adam.beta2 = parse_real(value);
  else if (k == "adam.eps") c.adam.eps_adam = parse_real(value);

  else if (k == "poison.enabled") c.poison_enabled = parse_bool(value);
  else if (k == "poison.scenario") {
    std::string s = lower(value);
    if (s == "target_state") c.poison.scenario = Scenario::TargetState;
    else if (s == "watermark") c.poison.scenario = Scenario::Watermark;
    else throw ConfigError("unknown scenario '" + value + "'");
  } else if (k == "poison.a_d") c.poison.a_d = parse_action(value);
  else if (k == "poison.eps") c.poison.eps = parse_pixel_value(value);
  else if (k == "poison.fraction") c.poison.poison_fraction = parse_real(value);
  else if (k == "poison.pgd_steps")
    c.poison.pgd_steps = static_cast<int>(parse_int(value));
  else if (k == "poison.pgd_alpha")
    c.poison.pgd_alpha = parse_pixel_value(value);
  else if (k == "poison.selection") {
    std::string s = lower(value);
    if (s == "random") c.poison.selection = Selection::Random;
    else if (s == "most_recent") c.poison.selection = Selection::MostRecent;
    else throw ConfigError("unknown selection rule '" + value + "'");
  } else if (k == "poison.n_trigger")
    c.poison.n_trigger = static_cast<int>(parse_int(value));
  else if (k == "poison.wm_alpha") c.poison.wm.alpha = parse_real(value);

  else if (k == "eval.n_episodes")
    c.eval.n_episodes = static_cast<int>(parse_int(value));
  else if (k == "eval.n_wm_states")
    c.eval.n_wm_states = static_cast<int>(parse_int(value));
  else if (k == "eval.max_episode_steps")
    c.eval.max_episode_steps = static_cast<int>(parse_int(value));
  else if (k == "eval.baseline_mean_return")
    c.eval.baseline_mean_return = parse_real(value);

  else if (k == "transfer.source_seed")
    c.source_seed = static_cast<uint64_t>(parse_int(value));
  else if (k == "transfer.victim_seed")
    c.victim_seed = static_cast<uint64_t>(parse_int(value));

  else throw ConfigError("unknown configuration key '" + key + "'");
}

}  // namespace

int parse_action(const std::string& text) {
  std::string s = lower(trim(text));
  if (s == "noop") return 0;
  if (s == "fire") return 1;
  if (s == "left") return 2;
  if (s == "right") return 3;
  return static_cast<int>(parse_int(text));
}

double parse_pixel_value(const std::string& s) {
  size_t slash = s.find('/');
  if (slash != std::string::npos) {
    double num = parse_real(trim(s.substr(0, slash)));
    double den = parse_real(trim(s.substr(slash + 1)));
    if (den == 0.0) throw ConfigError("zero denominator in '" + s + "'");
    return num / den;
  }
  return parse_real(s);
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f.good()) throw ConfigError("cannot open config file " + path.string());
  ExperimentConfig cfg = default_config();
  std::vector<std::string> errors;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      errors.push_back(path.string() + ":" + std::to_string(lineno) +
                       ": missing '=' in '" + t + "'");
      continue;
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    try {
      apply_one(cfg, key, value);
    } catch (const std::exception& e) {
      errors.push_back(path.string() + ":" + std::to_string(lineno) + ": " +
                       key + ": " + e.what());
    }
  }
  for (const std::string& ov : overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos) {
      errors.push_back("override '" + ov + "': missing '='");
      continue;
    }
    try {
      apply_one(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
    } catch (const std::exception& e) {
      errors.push_back("override '" + ov + "': " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "configuration errors:";
    for (const std::string& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

ExperimentConfig config_from_overrides(
    const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = default_config();
  std::vector<std::string> errors;
  for (const std::string& ov : overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos) {
      errors.push_back("override '" + ov + "': missing '='");
      continue;
    }
    try {
      apply_one(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
    } catch (const std::exception& e) {
      errors.push_back("override '" + ov + "': " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "configuration errors:";
    for (const std::string& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

void validate_config(const ExperimentConfig& cfg) {
  std::vector<std::string> errors;
  auto expect = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };

  expect(!cfg.output_dir.empty(), "output_dir: must not be empty");
  expect(cfg.env.cols >= 2, "env.cols: need at least 2 columns");
  expect(cfg.env.rows >= 3, "env.rows: need at least 3 rows");
  expect(cfg.env.paddle_w >= 1 && cfg.env.paddle_w < cfg.env.cols,
         "env.paddle_w: must lie in [1, env.cols)");
  expect(cfg.env.balls_per_episode >= 1,
         "env.balls_per_episode: must be positive");
  expect(cfg.env.px_h() % 2 == 0 && cfg.env.px_w() % 2 == 0,
         "env: pixel dimensions must be even for the watermark region");

  expect(cfg.net.hidden >= 1, "net.hidden: must be positive");
  expect(cfg.net.depth >= 1, "net.depth: must be positive");
  expect(cfg.net.n_actions == kNumActions,
         "net.n_actions: the environment provides exactly 4 actions");

  try {
    cfg.ppo.validate();
  } catch (const std::exception& e) {
    errors.push_back(std::string("ppo: ") + e.what());
  }
  expect(cfg.adam.lr > 0, "adam.lr: must be positive");
  expect(cfg.adam.beta1 >= 0 && cfg.adam.beta1 < 1,
         "adam.beta1: must lie in [0,1)");
  expect(cfg.adam.beta2 >= 0 && cfg.adam.beta2 < 1,
         "adam.beta2: must lie in [0,1)");
  expect(cfg.adam.eps_adam > 0, "adam.eps: must be positive");

  expect(cfg.eval.n_episodes >= 20, "eval.n_episodes: at least 20 required");
  expect(cfg.eval.n_wm_states >= 256,
         "eval.n_wm_states: at least 256 required");
  expect(cfg.eval.max_episode_steps >= cfg.env.rows + 1,
         "eval.max_episode_steps: too small to finish a single ball");

  if (cfg.poison_enabled) {
    expect(cfg.poison.a_d >= 0 && cfg.poison.a_d < cfg.net.n_actions,
           "poison.a_d: out of action range");
    expect(cfg.poison.eps >= 1.0 / 255.0 - 1e-12 &&
               cfg.poison.eps <= 32.0 / 255.0 + 1e-12,
           "poison.eps: must lie in [1/255, 32/255]");
    expect(cfg.poison.poison_fraction > 0 && cfg.poison.poison_fraction <= 1,
           "poison.fraction: must lie in (0,1]");
    expect(static_cast<int>(cfg.poison.poison_fraction * cfg.ppo.T) >= 1,
           "poison.fraction: selects zero transitions of a rollout; raise it"
           " or ppo.T");
    expect(cfg.poison.pgd_steps >= 0, "poison.pgd_steps: must be >= 0");
    expect(cfg.poison.n_trigger >= 1, "poison.n_trigger: must be positive");
    expect(cfg.poison.wm.alpha >= 0 && cfg.poison.wm.alpha <= 1,
           "poison.wm_alpha: must lie in [0,1]");
  }

  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const std::string& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "seed = " << c.seed << "\n";
  os << "output_dir = " << c.output_dir << "\n";
  os << "dump_frames = " << (c.dump_frames ? "true" : "false") << "\n";
  os << "env.cols = " << c.env.cols << "\n";
  os << "env.rows = " << c.env.rows << "\n";
  os << "env.paddle_w = " << c.env.paddle_w << "\n";
  os << "env.balls_per_episode = " << c.env.balls_per_episode << "\n";
  os << "net.hidden = " << c.net.hidden << "\n";
  os << "net.depth = " << c.net.depth << "\n";
  os << "net.n_actions = " << c.net.n_actions << "\n";
  os << "ppo.T = " << c.ppo.T << "\n";
  os << "ppo.n_epochs = " << c.ppo.n_epochs << "\n";
  os << "ppo.minibatch_size = " << c.ppo.minibatch_size << "\n";
  os << "ppo.gamma = " << fmt_real(c.ppo.gamma) << "\n";
  os << "ppo.lam = " << fmt_real(c.ppo.lam) << "\n";
  os << "ppo.clip = " << fmt_real(c.ppo.clip) << "\n";
  os << "ppo.vf_coef = " << fmt_real(c.ppo.vf_coef) << "\n";
  os << "ppo.ent_coef = " << fmt_real(c.ppo.ent_coef) << "\n";
  os << "ppo.total_steps = " << c.ppo.total_steps << "\n";
  os << "ppo.recompute_logprob_on_poisoned = "
     << (c.ppo.recompute_logprob_on_poisoned ? "true" : "false") << "\n";
  os << "adam.lr = " << fmt_real(c.adam.lr) << "\n";
  os << "adam.beta1 = " << fmt_real(c.adam.beta1) << "\n";
  os << "adam.beta2 = " << fmt_real(c.adam.beta2) << "\n";
  os << "adam.eps = " << fmt_real(c.adam.eps_adam) << "\n";
  os << "poison.enabled = " << (c.poison_enabled ? "true" : "false") << "\n";
  os << "poison.scenario = " << scenario_name(c.poison.scenario) << "\n";
  os << "poison.a_d = " << c.poison.a_d << "\n";
  os << "poison.eps = " << fmt_real(c.poison.eps) << "\n";
  os << "poison.fraction = " << fmt_real(c.poison.poison_fraction) << "\n";
  os << "poison.pgd_steps = " << c.poison.pgd_steps << "\n";
  os << "poison.pgd_alpha = " << fmt_real(c.poison.pgd_alpha) << "\n";
  os << "poison.selection = " << selection_name(c.poison.selection) << "\n";
  os << "poison.n_trigger = " << c.poison.n_trigger << "\n";
  os << "poison.wm_alpha = " << fmt_real(c.poison.wm.alpha) << "\n";
  os << "eval.n_episodes = " << c.eval.n_episodes << "\n";
  os << "eval.n_wm_states = " << c.eval.n_wm_states << "\n";
  os << "eval.max_episode_steps = " << c.eval.max_episode_steps << "\n";
  if (!std::isnan(c.eval.baseline_mean_return))
    os << "eval.baseline_mean_return = " << fmt_real(c.eval.baseline_mean_return)
       << "\n";
  os << "transfer.source_seed = " << c.source_seed << "\n";
  os << "transfer.victim_seed = " << c.victim_seed << "\n";
  return os.str();
}

}  // namespace pflab
