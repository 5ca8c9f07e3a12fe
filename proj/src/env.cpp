#include "bams/env.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <string>

namespace bams {

namespace {

constexpr double kSearchPenalty = -0.05;
constexpr int kPlacementRetries = 1024;

const int kDr[kNumActions] = {-1, +1, 0, 0, 0};
const int kDc[kNumActions] = {0, 0, -1, +1, 0};

}  // namespace

void EnvConfig::validate() const {
  if (m < 2 || m > 64) throw ConfigError("env.m: grid size " + std::to_string(m) + " out of range 2..64");
  if (n_agents < 1 || n_agents > 64) {
    throw ConfigError("env.agents: " + std::to_string(n_agents) + " out of range 1..64");
  }
  if (vision < 1 || vision % 2 == 0) {
    throw ConfigError("env.vision: " + std::to_string(vision) + " must be odd so the window centers on the agent");
  }
  if (max_steps < 1) throw ConfigError("env.max_steps: must be positive");
  if (n_obstacles < 0) throw ConfigError("env.obstacles: must be non-negative");
  if (n_agents + n_obstacles + 1 > m * m) {
    throw ConfigError("env.agents: " + std::to_string(n_agents) + " agents + " +
                      std::to_string(n_obstacles) + " obstacles + prey exceed " +
                      std::to_string(m * m) + " cells");
  }
}

GridWorld::GridWorld(const EnvConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  reset(cfg_.seed);
}

GridWorld::GridWorld(const EnvConfig& cfg, const Layout& layout) : cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  reset_layout(layout);
}

void GridWorld::mark_window(Cell center) {
  const int half = cfg_.vision / 2;
  for (int r = center.row - half; r <= center.row + half; ++r) {
    for (int c = center.col - half; c <= center.col + half; ++c) {
      if (in_grid(r, c)) explored_[r * cfg_.m + c] = 1;
    }
  }
}

bool GridWorld::window_contains(Cell center, Cell target) const {
  const int half = cfg_.vision / 2;
  return std::abs(center.row - target.row) <= half && std::abs(center.col - target.col) <= half;
}

void GridWorld::update_prey_seen() {
  if (prey_seen_) return;
  for (const Cell& a : agents_) {
    if (window_contains(a, prey_)) {
      prey_seen_ = true;
      return;
    }
  }
}

void GridWorld::reset(uint64_t seed) {
  cfg_.seed = seed;
  rng_ = Rng(seed);
  const int cells = cfg_.m * cfg_.m;
  std::vector<int> order(cells);
  for (int attempt = 0; attempt < kPlacementRetries; ++attempt) {
    std::iota(order.begin(), order.end(), 0);
    for (int i = cells - 1; i > 0; --i) std::swap(order[i], order[rng_.uniform_int(i + 1)]);

    Layout lay;
    lay.m = cfg_.m;
    lay.n = cfg_.n_agents;
    lay.v = cfg_.vision;
    int at = 0;
    for (int i = 0; i < cfg_.n_obstacles; ++i, ++at)
      lay.obstacles.push_back({order[at] / cfg_.m, order[at] % cfg_.m});
    for (int i = 0; i < cfg_.n_agents; ++i, ++at)
      lay.agents.push_back({order[at] / cfg_.m, order[at] % cfg_.m});
    lay.prey = {order[at] / cfg_.m, order[at] % cfg_.m};

    // Require a free path from every agent to the prey so failure is
    // attributable to the policy, not the topology.
    std::vector<uint8_t> mask(cells, 0);
    for (const Cell& o : lay.obstacles) mask[o.row * cfg_.m + o.col] = 1;
    bool ok = true;
    for (const Cell& a : lay.agents) {
      if (!(a == lay.prey) && shortest_path(a, lay.prey, mask, cfg_.m).empty()) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    reset_layout(lay);
    return;
  }
  throw ConfigError("env: no reachable placement found for m=" + std::to_string(cfg_.m) +
                    ", agents=" + std::to_string(cfg_.n_agents) +
                    ", obstacles=" + std::to_string(cfg_.n_obstacles));
}

void GridWorld::reset_layout(const Layout& layout) {
  if (layout.m != cfg_.m || layout.n != cfg_.n_agents) {
    throw ConfigError("layout: m/N " + std::to_string(layout.m) + "/" + std::to_string(layout.n) +
                      " do not match config " + std::to_string(cfg_.m) + "/" +
                      std::to_string(cfg_.n_agents));
  }
  const int cells = cfg_.m * cfg_.m;
  obstacles_.assign(cells, 0);
  for (const Cell& o : layout.obstacles) {
    if (!in_grid(o.row, o.col)) throw ConfigError("layout: obstacle outside grid");
    obstacles_[idx(o)] = 1;
  }
  agents_ = layout.agents;
  prey_ = layout.prey;
  for (const Cell& a : agents_) {
    if (!in_grid(a.row, a.col) || obstacles_[idx(a)]) throw ConfigError("layout: agent on obstacle or outside grid");
  }
  if (!in_grid(prey_.row, prey_.col) || obstacles_[idx(prey_)]) {
    throw ConfigError("layout: prey on obstacle or outside grid");
  }
  explored_.assign(cells, 0);
  reached_.assign(cfg_.n_agents, 0);
  step_count_ = 0;
  done_ = false;
  prey_seen_ = false;
  for (int i = 0; i < cfg_.n_agents; ++i) {
    if (agents_[i] == prey_) reached_[i] = 1;
    mark_window(agents_[i]);
  }
  update_prey_seen();
  done_ = success();
  // Post-placement stream, so an episode restored from its layout sees the
  // same in-episode randomness (prey tie-breaks) as the sampled original.
  rng_ = Rng(derive_seed(cfg_.seed, 0x9e3b17ull));
}

bool GridWorld::success() const {
  if (cfg_.prey_mode == PreyMode::Static) {
    return std::all_of(reached_.begin(), reached_.end(), [](uint8_t r) { return r != 0; });
  }
  return std::any_of(reached_.begin(), reached_.end(), [](uint8_t r) { return r != 0; });
}

std::vector<double> GridWorld::observe(int agent) const {
  if (agent < 0 || agent >= cfg_.n_agents) throw ContractError("observe: bad agent index");
  const int mm = cfg_.m * cfg_.m;
  std::vector<double> obs(static_cast<size_t>(kMapChannels) * mm, 0.0);
  const Cell self = agents_[agent];
  const int half = cfg_.vision / 2;
  for (int r = self.row - half; r <= self.row + half; ++r) {
    for (int c = self.col - half; c <= self.col + half; ++c) {
      if (!in_grid(r, c)) continue;
      obs[kChanExplored * mm + r * cfg_.m + c] = 1.0;
      if (obstacles_[r * cfg_.m + c]) obs[kChanObstacle * mm + r * cfg_.m + c] = 1.0;
    }
  }
  for (const Cell& a : agents_) {
    if (window_contains(self, a)) obs[kChanPredator * mm + idx(a)] = 1.0;
  }
  if (window_contains(self, prey_)) obs[kChanPrey * mm + idx(prey_)] = 1.0;
  return obs;
}

int GridWorld::active_count() const {
  int n = 0;
  for (uint8_t r : reached_) n += (r == 0);
  return n;
}

StepResult GridWorld::step(const std::vector<Action>& actions) {
  if (done_) throw ContractError("step: episode already finished");
  if (static_cast<int>(actions.size()) != cfg_.n_agents) {
    throw ContractError("step: want " + std::to_string(cfg_.n_agents) + " actions, got " +
                        std::to_string(actions.size()));
  }
  const int active_at_start = active_count();

  for (int i = 0; i < cfg_.n_agents; ++i) {
    if (reached_[i]) {
      agents_[i] = prey_;  // pinned
      continue;
    }
    const int a = static_cast<int>(actions[i]);
    Cell next{agents_[i].row + kDr[a], agents_[i].col + kDc[a]};
    if (in_grid(next.row, next.col) && !obstacles_[idx(next)]) agents_[i] = next;
    // blocked moves resolve to stay
  }
  for (int i = 0; i < cfg_.n_agents; ++i) {
    if (agents_[i] == prey_) reached_[i] = 1;
  }

  bool any_reached = std::any_of(reached_.begin(), reached_.end(), [](uint8_t r) { return r != 0; });
  if (cfg_.prey_mode == PreyMode::Moving && !any_reached) prey_step();

  for (const Cell& a : agents_) mark_window(a);
  update_prey_seen();

  ++step_count_;
  const double reward = kSearchPenalty * active_at_start;
  done_ = success() || step_count_ >= cfg_.max_steps;
  return {reward, done_};
}

void GridWorld::prey_step() {
  // The prey shares the agents' observation window and action set; it only
  // reacts to predators it can see.
  std::vector<Cell> threats;
  for (const Cell& a : agents_) {
    if (window_contains(prey_, a)) threats.push_back(a);
  }
  if (threats.empty()) return;

  auto score = [&](Cell c) {
    double mn = std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (const Cell& t : threats) {
      const double d = std::hypot(c.row - t.row, c.col - t.col);
      mn = std::min(mn, d);
      acc += d;
    }
    switch (cfg_.prey_threat) {
      case PreyThreat::MinDistance: return mn;
      case PreyThreat::MeanDistance: return acc / static_cast<double>(threats.size());
      case PreyThreat::SumDistance: return acc;
    }
    return mn;
  };

  std::vector<Cell> best;
  double best_score = -1.0;
  for (int a = 0; a < kNumActions; ++a) {
    Cell cand{prey_.row + kDr[a], prey_.col + kDc[a]};
    if (!in_grid(cand.row, cand.col) || obstacles_[idx(cand)]) continue;
    const double s = score(cand);
    if (s > best_score + 1e-12) {
      best_score = s;
      best.assign(1, cand);
    } else if (std::abs(s - best_score) <= 1e-12) {
      best.push_back(cand);
    }
  }
  prey_ = best[best.size() == 1 ? 0 : rng_.uniform_int(static_cast<int>(best.size()))];
}

std::vector<double> GridWorld::ground_truth() const {
  const int mm = cfg_.m * cfg_.m;
  std::vector<double> gt(static_cast<size_t>(kMapChannels) * mm, 0.0);
  for (int i = 0; i < mm; ++i) {
    if (explored_[i]) gt[kChanExplored * mm + i] = 1.0;
    if (obstacles_[i]) gt[kChanObstacle * mm + i] = 1.0;
  }
  for (const Cell& a : agents_) gt[kChanPredator * mm + idx(a)] = 1.0;
  if (cfg_.gt_mode == GroundTruthMode::Full || prey_seen_) gt[kChanPrey * mm + idx(prey_)] = 1.0;
  return gt;
}

Layout GridWorld::layout() const {
  Layout lay;
  lay.m = cfg_.m;
  lay.n = cfg_.n_agents;
  lay.v = cfg_.vision;
  for (int i = 0; i < cfg_.m * cfg_.m; ++i) {
    if (obstacles_[i]) lay.obstacles.push_back({i / cfg_.m, i % cfg_.m});
  }
  lay.agents = agents_;
  lay.prey = prey_;
  return lay;
}

std::vector<Cell> shortest_path(Cell from, Cell to, const std::vector<uint8_t>& obstacle_mask,
                                int m) {
  if (from == to) return {};
  std::vector<int> parent(static_cast<size_t>(m) * m, -1);
  auto id = [m](Cell c) { return c.row * m + c.col; };
  std::deque<Cell> queue{from};
  parent[id(from)] = id(from);
  while (!queue.empty()) {
    const Cell cur = queue.front();
    queue.pop_front();
    if (cur == to) break;
    for (int a = 0; a < 4; ++a) {  // up, down, left, right
      Cell nxt{cur.row + kDr[a], cur.col + kDc[a]};
      if (nxt.row < 0 || nxt.row >= m || nxt.col < 0 || nxt.col >= m) continue;
      if (obstacle_mask[id(nxt)] || parent[id(nxt)] >= 0) continue;
      parent[id(nxt)] = id(cur);
      queue.push_back(nxt);
    }
  }
  if (parent[id(to)] < 0) return {};
  std::vector<Cell> path;
  for (Cell c = to; !(c == from); c = {parent[id(c)] / m, parent[id(c)] % m}) path.push_back(c);
  std::reverse(path.begin(), path.end());
  return path;
}

std::optional<Cell> prey_in_observation(const std::vector<double>& obs, int m) {
  const int mm = m * m;
  for (int i = 0; i < mm; ++i) {
    if (obs[kChanPrey * mm + i] > 0.5) return Cell{i / m, i % m};
  }
  return std::nullopt;
}

namespace {

Action toward(Cell from, Cell to) {
  if (to.row < from.row) return Action::Up;
  if (to.row > from.row) return Action::Down;
  if (to.col < from.col) return Action::Left;
  if (to.col > from.col) return Action::Right;
  return Action::Stay;
}

}  // namespace

Action heuristic_policy(HeuristicMemory& mem, const std::vector<double>& obs, Cell pos,
                        const std::vector<uint8_t>& obstacle_mask, int m, int v) {
  if (auto seen = prey_in_observation(obs, m)) mem.prey_known = *seen;

  if (mem.prey_known) {
    const Cell target = *mem.prey_known;
    if (pos == target) return Action::Stay;
    if (mem.planned_path.empty() || mem.path_pos >= mem.planned_path.size() ||
        !(mem.planned_path.back() == target)) {
      mem.planned_path = shortest_path(pos, target, obstacle_mask, m);
      mem.path_pos = 0;
      if (mem.planned_path.empty()) return Action::Stay;  // boxed in
    }
    const Cell next = mem.planned_path[mem.path_pos];
    if (std::abs(next.row - pos.row) + std::abs(next.col - pos.col) != 1) {
      // desynchronized (e.g. a blocked move); replan next call
      mem.planned_path.clear();
      return Action::Stay;
    }
    ++mem.path_pos;
    return toward(pos, next);
  }

  const int half = v / 2;
  if (mem.band < 0) mem.band = pos.row;

  if (pos.row != mem.band) return pos.row < mem.band ? Action::Down : Action::Up;

  const bool at_edge = (mem.horiz_dir > 0 && pos.col == m - 1) || (mem.horiz_dir < 0 && pos.col == 0);
  if (!at_edge) return mem.horiz_dir > 0 ? Action::Right : Action::Left;

  // Band swept; move to the next band beyond the current window, reversing
  // at the top and bottom of the grid.
  int next_band = mem.band + mem.vert_dir * v;
  if (mem.vert_dir > 0) {
    if (mem.band + half >= m - 1) {
      mem.vert_dir = -1;
      next_band = std::max(mem.band - v, half);
    } else {
      next_band = std::min(next_band, m - 1 - half);
    }
  } else {
    if (mem.band - half <= 0) {
      mem.vert_dir = +1;
      next_band = std::min(mem.band + v, m - 1 - half);
    } else {
      next_band = std::max(next_band, half);
    }
  }
  mem.band = next_band;
  mem.horiz_dir = -mem.horiz_dir;
  if (pos.row != mem.band) return pos.row < mem.band ? Action::Down : Action::Up;
  return mem.horiz_dir > 0 ? Action::Right : Action::Left;
}

}  // namespace bams
