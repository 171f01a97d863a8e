#pragma once

#include <cstdint>
#include <filesystem>
#include <unordered_set>
#include <utility>

#include "pflab/rng.hpp"
#include "pflab/tensor.hpp"

namespace pflab {

// Observations are [px_h, px_w] tensors with values on the k/255 grid; the
// exact board-to-pixel layout is pinned in docs/rendering.md.
using Observation = Tensor;

struct EnvConfig {
  int cols = 8;
  int rows = 12;
  int cell_w = 3;
  int cell_h = 2;
  int paddle_w = 2;  // in cells
  int balls_per_episode = 10;
  double paddle_intensity = 255.0 / 255.0;
  double ball_intensity = 170.0 / 255.0;

  int px_w() const { return cols * cell_w; }
  int px_h() const { return rows * cell_h; }
  int obs_dim() const { return px_w() * px_h(); }
  int max_paddle_col() const { return cols - paddle_w; }
};

struct GameState {
  int paddle_col = 0;
  int ball_col = 0;
  int ball_row = 0;
  bool ball_active = false;
  int balls_remaining = 0;
  int score = 0;
};

enum class Action { Noop = 0, Fire = 1, Left = 2, Right = 3 };
inline constexpr int kNumActions = 4;
const char* action_name(int a);
Action to_action(int a);  // rejects indices outside [0,4)

struct StepOutcome {
  double reward = 0.0;
  bool done = false;
};

// One transition of the board. The action applies first (paddle move / ball
// spawn); a ball that was already in flight then falls one row. A ball
// reaching the bottom row scores +1 when it overlaps the paddle, -1
// otherwise, and leaves play. A ball spawned by this step does not fall
// until the next one.
StepOutcome step_state(GameState& s, Action a, Rng& rng, const EnvConfig& cfg);

// Pure renderer; output pixels are exactly on the k/255 grid.
Observation render(const GameState& s, const EnvConfig& cfg);

// FNV-1a over the quantized pixel bytes.
uint64_t obs_digest(const Observation& obs);

class PaddleCatch {
 public:
  explicit PaddleCatch(const EnvConfig& cfg, uint64_t seed);

  // Paddle centered, ball inactive, full ball supply, fresh seeded rng.
  std::pair<GameState, Observation> reset(uint64_t seed);
  // Board reset between episodes; the rng stream keeps advancing.
  Observation reset_board();

  struct Step {
    Observation obs;
    double reward = 0.0;
    bool done = false;
  };
  Step step(int action);

  const GameState& state() const { return state_; }
  const EnvConfig& config() const { return cfg_; }
  Observation observe() const { return render(state_, cfg_); }

 private:
  EnvConfig cfg_;
  GameState state_;
  Rng rng_;
};

// Moves the paddle under the ball column; fires when no ball is in flight.
// Always catches: the ball takes rows-1 steps to land, more than the widest
// paddle traverse. Used as the env solvability oracle and a reference policy.
int scripted_optimal_action(const GameState& s, const EnvConfig& cfg);

struct Watermark {
  double alpha = 0.5;
  int period = 2;  // vertical line spacing in px
};

// Stamps translucent vertical lines over the top-left quadrant (exactly 25%
// of the pixel area): pixel <- max(pixel, alpha * pattern). Idempotent, never
// touches pixels outside the region, output stays in [0,1].
Observation stamp_watermark(const Observation& obs, const Watermark& wm);

// Fixed synthetic target: paddle hard-left, ball mid-field at the bottom row.
// An in-flight ball never renders on the bottom row (it leaves play on
// arrival), so this observation cannot occur during training. If the digest
// is nonetheless present in `history`, deterministically probes ball_row,
// then ball_col, then paddle_col until an unseen candidate appears.
std::pair<GameState, Observation> make_target_state(
    const std::unordered_set<uint64_t>& history, const EnvConfig& cfg);

// Binary PGM (P5, maxval 255) frame dump.
void write_pgm(const std::filesystem::path& path, const Observation& obs);

}  // namespace pflab
