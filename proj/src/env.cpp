#include "pflab/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pflab/common.hpp"

namespace pflab {

const char* action_name(int a) {
  switch (a) {
    case 0: return "NOOP";
    case 1: return "FIRE";
    case 2: return "LEFT";
    case 3: return "RIGHT";
    default: return "?";
  }
}

Action to_action(int a) {
  check(a >= 0 && a < kNumActions,
        "invalid action index " + std::to_string(a));
  return static_cast<Action>(a);
}

StepOutcome step_state(GameState& s, Action a, Rng& rng,
                       const EnvConfig& cfg) {
  bool was_active = s.ball_active;
  switch (a) {
    case Action::Noop:
      break;
    case Action::Fire:
      if (!s.ball_active) {
        s.ball_active = true;
        s.ball_row = 0;
        s.ball_col = rng.uniform_int(cfg.cols);
      }
      break;
    case Action::Left:
      s.paddle_col = std::max(0, s.paddle_col - 1);
      break;
    case Action::Right:
      s.paddle_col = std::min(cfg.max_paddle_col(), s.paddle_col + 1);
      break;
  }

  StepOutcome out;
  if (was_active) {
    s.ball_row += 1;
    if (s.ball_row >= cfg.rows - 1) {
      bool caught = s.ball_col >= s.paddle_col &&
                    s.ball_col < s.paddle_col + cfg.paddle_w;
      out.reward = caught ? 1.0 : -1.0;
      s.score += caught ? 1 : -1;
      s.ball_active = false;
      s.balls_remaining -= 1;
    }
  }
  out.done = s.balls_remaining == 0;
  return out;
}

Observation render(const GameState& s, const EnvConfig& cfg) {
  int h = cfg.px_h(), w = cfg.px_w();
  Observation obs = Tensor::zeros({h, w});
  auto px = obs.mutable_data();
  auto put = [&](int r, int c, double v) {
    size_t i = static_cast<size_t>(r) * static_cast<size_t>(w) +
               static_cast<size_t>(c);
    px[i] = std::max(px[i], v);
  };
  // Paddle band: bottom board row.
  for (int dr = 0; dr < cfg.cell_h; ++dr)
    for (int dc = 0; dc < cfg.paddle_w * cfg.cell_w; ++dc)
      put((cfg.rows - 1) * cfg.cell_h + dr, s.paddle_col * cfg.cell_w + dc,
          cfg.paddle_intensity);
  if (s.ball_active) {
    for (int dr = 0; dr < cfg.cell_h; ++dr)
      for (int dc = 0; dc < cfg.cell_w; ++dc)
        put(s.ball_row * cfg.cell_h + dr, s.ball_col * cfg.cell_w + dc,
            cfg.ball_intensity);
  }
  return obs;
}

uint64_t obs_digest(const Observation& obs) {
  uint64_t h = 14695981039346656037ull;
  for (double v : obs.data()) {
    auto b = static_cast<unsigned char>(
        std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

PaddleCatch::PaddleCatch(const EnvConfig& cfg, uint64_t seed)
    : cfg_(cfg), rng_(seed) {
  reset(seed);
}

std::pair<GameState, Observation> PaddleCatch::reset(uint64_t seed) {
  rng_ = Rng(seed);
  reset_board();
  return {state_, observe()};
}

Observation PaddleCatch::reset_board() {
  state_ = GameState{};
  state_.paddle_col = cfg_.max_paddle_col() / 2;
  state_.balls_remaining = cfg_.balls_per_episode;
  return observe();
}

PaddleCatch::Step PaddleCatch::step(int action) {
  StepOutcome o = step_state(state_, to_action(action), rng_, cfg_);
  return {observe(), o.reward, o.done};
}

int scripted_optimal_action(const GameState& s, const EnvConfig& cfg) {
  if (!s.ball_active) return static_cast<int>(Action::Fire);
  if (s.ball_col < s.paddle_col) return static_cast<int>(Action::Left);
  if (s.ball_col >= s.paddle_col + cfg.paddle_w)
    return static_cast<int>(Action::Right);
  return static_cast<int>(Action::Noop);
}

Observation stamp_watermark(const Observation& obs, const Watermark& wm) {
  check(obs.rank() == 2, "stamp_watermark: rank-2 observation required");
  int h = obs.dim(0), w = obs.dim(1);
  check(h % 2 == 0 && w % 2 == 0,
        "stamp_watermark: even pixel dimensions required");
  check(wm.alpha >= 0.0 && wm.alpha <= 1.0,
        "stamp_watermark: alpha outside [0,1]");
  check(wm.period >= 1, "stamp_watermark: period must be positive");
  Observation out = obs.clone();
  auto px = out.mutable_data();
  for (int r = 0; r < h / 2; ++r)
    for (int c = 0; c < w / 2; ++c) {
      double pattern = (c % wm.period == 0) ? 1.0 : 0.0;
      size_t i = static_cast<size_t>(r) * static_cast<size_t>(w) +
                 static_cast<size_t>(c);
      px[i] = std::max(px[i], wm.alpha * pattern);
    }
  return out;
}

std::pair<GameState, Observation> make_target_state(
    const std::unordered_set<uint64_t>& history, const EnvConfig& cfg) {
  GameState base;
  base.paddle_col = 0;
  base.ball_active = true;
  base.ball_col = cfg.cols / 2;
  base.ball_row = cfg.rows - 1;
  base.balls_remaining = cfg.balls_per_episode;

  for (int dp = 0; dp <= cfg.max_paddle_col(); ++dp)
    for (int dc = 0; dc < cfg.cols; ++dc)
      for (int dr = 0; dr < cfg.rows; ++dr) {
        GameState cand = base;
        cand.paddle_col = (base.paddle_col + dp) % (cfg.max_paddle_col() + 1);
        cand.ball_col = (base.ball_col + dc) % cfg.cols;
        cand.ball_row =
            ((base.ball_row + dr) % cfg.rows + cfg.rows) % cfg.rows;
        Observation obs = render(cand, cfg);
        if (!history.contains(obs_digest(obs))) return {cand, obs};
      }
  throw Error("make_target_state: candidate configurations exhausted");
}

void write_pgm(const std::filesystem::path& path, const Observation& obs) {
  check(obs.rank() == 2, "write_pgm: rank-2 observation required");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "write_pgm: cannot open " + path.string());
  f << "P5\n" << obs.dim(1) << " " << obs.dim(0) << "\n255\n";
  for (double v : obs.data()) {
    auto b = static_cast<unsigned char>(
        std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    f.write(reinterpret_cast<const char*>(&b), 1);
  }
  check(f.good(), "write_pgm: write failed for " + path.string());
}

}  // namespace pflab
