#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bams/rng.hpp"
#include "bams/tensor.hpp"

namespace bams {

enum class Action : int { Up = 0, Down = 1, Left = 2, Right = 3, Stay = 4 };
constexpr int kNumActions = 5;

// Map plane channel order, shared by observations, ground truth and beliefs.
constexpr int kChanExplored = 0;
constexpr int kChanPredator = 1;
constexpr int kChanPrey = 2;
constexpr int kChanObstacle = 3;
constexpr int kMapChannels = 4;

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

enum class PreyMode { Static, Moving };
enum class GroundTruthMode { Full, DiscoveredOnly };
// Aggregate the evading prey maximizes over observed predators.
enum class PreyThreat { MinDistance, MeanDistance, SumDistance };

struct EnvConfig {
  int m = 7;           // grid side; experiments use 7..20
  int n_agents = 3;    // predators
  int vision = 3;      // odd window side, 3 or 5 in the experiments
  int max_steps = 20;
  int n_obstacles = 0;
  PreyMode prey_mode = PreyMode::Static;
  GroundTruthMode gt_mode = GroundTruthMode::Full;
  PreyThreat prey_threat = PreyThreat::MinDistance;
  uint64_t seed = 0;

  void validate() const;  // throws ConfigError naming the offending field
};

// Fixed placement, loadable from a JSON fixture.
struct Layout {
  int m = 0, n = 0, v = 0;
  std::vector<Cell> obstacles;
  std::vector<Cell> agents;
  Cell prey;
};

struct StepResult {
  double reward = 0.0;
  bool done = false;
};

// Predator-prey grid. Partially observed: each agent sees a vision x vision
// window centered on itself, clipped at the borders. The team reward is
// -0.05 per not-yet-reached agent per step. Agents that reach the prey stay
// pinned there (static prey); with a moving prey the episode ends at the
// first capture.
class GridWorld {
 public:
  explicit GridWorld(const EnvConfig& cfg);
  GridWorld(const EnvConfig& cfg, const Layout& layout);

  void reset(uint64_t seed);
  void reset_layout(const Layout& layout);

  // M x m x m multi-hot plane; nonzero only inside the agent's window.
  std::vector<double> observe(int agent) const;

  StepResult step(const std::vector<Action>& actions);

  // Centrally assembled M x m x m truth; the explored channel is the union
  // of every agent's windows over time.
  std::vector<double> ground_truth() const;

  int m() const { return cfg_.m; }
  int n_agents() const { return cfg_.n_agents; }
  int vision() const { return cfg_.vision; }
  const EnvConfig& config() const { return cfg_; }
  Cell agent_pos(int i) const { return agents_[i]; }
  Cell prey_pos() const { return prey_; }
  bool reached(int i) const { return reached_[i] != 0; }
  int active_count() const;
  bool obstacle_at(Cell c) const { return obstacles_[idx(c)] != 0; }
  bool explored_at(Cell c) const { return explored_[idx(c)] != 0; }
  const std::vector<uint8_t>& obstacle_mask() const { return obstacles_; }
  int step_count() const { return step_count_; }
  bool done() const { return done_; }
  // Objective met: all agents on the prey (static) or any agent (moving).
  bool success() const;
  bool prey_seen() const { return prey_seen_; }
  Layout layout() const;

 private:
  int idx(Cell c) const { return c.row * cfg_.m + c.col; }
  bool in_grid(int r, int c) const { return r >= 0 && r < cfg_.m && c >= 0 && c < cfg_.m; }
  void mark_window(Cell center);
  bool window_contains(Cell center, Cell target) const;
  void update_prey_seen();
  void prey_step();

  EnvConfig cfg_;
  Rng rng_;
  std::vector<Cell> agents_;
  Cell prey_{};
  std::vector<uint8_t> obstacles_;  // m*m
  std::vector<uint8_t> explored_;   // m*m, monotone
  std::vector<uint8_t> reached_;
  int step_count_ = 0;
  bool done_ = false;
  bool prey_seen_ = false;
};

// Minimal-length 4-connected path avoiding obstacles; the cells after
// `from`, excluding it. Empty when unreachable (or already there).
// Deterministic tie-breaking in neighbor order up, down, left, right.
std::vector<Cell> shortest_path(Cell from, Cell to, const std::vector<uint8_t>& obstacle_mask,
                                int m);

// Rule-based baseline: boustrophedon sweep in row bands spaced by the vision
// width until the prey is sighted, then shortest path to it. The caller
// relays sightings between agents by setting prey_known.
struct HeuristicMemory {
  int band = -1;  // -1 until initialized from the start position
  int horiz_dir = +1;
  int vert_dir = +1;
  std::optional<Cell> prey_known;
  std::vector<Cell> planned_path;
  size_t path_pos = 0;
};

Action heuristic_policy(HeuristicMemory& mem, const std::vector<double>& obs, Cell pos,
                        const std::vector<uint8_t>& obstacle_mask, int m, int v);

// Prey location from an observation plane, if visible.
std::optional<Cell> prey_in_observation(const std::vector<double>& obs, int m);

}  // namespace bams
