#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bams/env.hpp"
#include "bams/model.hpp"
#include "bams/optim.hpp"

namespace bams {

enum class TrainMode { Bams, BamsR };

struct TrainConfig {
  double alpha = 1.0;  // belief-map loss weight; 0 selects the bams-r ablation
  double beta = 1.0;   // RL loss weight
  double gamma = 0.99;
  double entropy_coef = 0.01;
  double learning_rate = 0.001;
  double smoothing = 0.97;
  int episodes_per_update = 16;
  int total_updates = 1000;
  int eval_every = 100;
  int eval_episodes = 100;
  TrainMode mode = TrainMode::Bams;
  uint64_t seed = 0;

  // Ties mode and alpha together: bams-r <=> alpha == 0.
  void canonicalize();
  void validate() const;
};

// Per agent-step rollout record. Tensors stay attached to the episode's
// computation record so backpropagation runs through the whole episode,
// including message paths between agents.
struct StepAgentRecord {
  bool active = false;  // agent had not reached the prey at step start
  int action = static_cast<int>(Action::Stay);
  int gate = 0;
  Tensor value;    // critic output, tracked scalar
  Tensor logp;     // log p(action) + log p(gate), tracked scalar
  Tensor entropy;  // action + gate entropy, tracked scalar
  Tensor belief;   // decoded map (undefined in bams-r mode)
  Tensor gt;       // ground-truth map, constant
  double value_num = 0.0;
};

struct EpisodeRecord {
  Layout layout;  // exact placement, for replay
  uint64_t env_seed = 0;
  uint64_t sample_seed = 0;
  int length = 0;
  bool success = false;
  std::vector<double> rewards;                      // team reward per step
  std::vector<std::vector<StepAgentRecord>> steps;  // [t][agent]
  int gate_opens = 0;
  int active_agent_steps = 0;

  double episode_return() const;
};

using TrajectoryBatch = std::vector<EpisodeRecord>;

struct Metrics {
  double avg_steps = 0.0;  // failures counted at max_steps
  double success_rate = 0.0;
  double comm_rate = 0.0;  // open gates over active agent-steps
  double map_mse = 0.0;    // mean per-map MSE over active agent-steps
  double mean_return = 0.0;
};

// Rolls out one episode under the live policy. Records onto the active Tape
// if any. Inboxes carry the other agents' previous-step outboxes; everything
// an agent consumes at runtime is local (observation, inbox, own state).
EpisodeRecord collect_episode(const Params& params, const EnvConfig& env_cfg, TrainMode mode,
                              uint64_t env_seed, uint64_t sample_seed);

// Re-runs an episode with the recorded layout, actions and gates forced,
// rebuilding all tracked tensors under the current parameters. Used for
// finite-difference checks of the training objective.
EpisodeRecord replay_episode(const Params& params, const EnvConfig& env_cfg, TrainMode mode,
                             const EpisodeRecord& skeleton);

// Per-episode loss terms (tracked scalars on the episode's record):
//   map: sum over steps of per-map MSE, averaged over agents;
//   rl: squared TD error summed over active agent-steps, bootstrap targets
//       and terminal values held constant;
//   pg: -logp * advantage - entropy_coef * entropy, advantages constant.
Tensor episode_map_loss(const EpisodeRecord& ep, int n_agents);
Tensor episode_rl_loss(const EpisodeRecord& ep, double gamma);
Tensor episode_pg_loss(const EpisodeRecord& ep, double gamma, double entropy_coef);
Tensor episode_total_loss(const EpisodeRecord& ep, const TrainConfig& cfg, int n_agents);

// Batch-level values (mean over episodes), for reporting and tests.
double map_loss(const TrajectoryBatch& batch, int n_agents);
double rl_loss(const TrajectoryBatch& batch, double gamma);
double policy_gradient_loss(const TrajectoryBatch& batch, double gamma, double entropy_coef);
double total_loss(const TrajectoryBatch& batch, const TrainConfig& cfg, int n_agents);

struct EvalPoint {
  int update = 0;
  Metrics metrics;
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<EvalPoint> history;
  std::string final_checkpoint_dir;
  int updates_run = 0;
  bool aborted = false;
  std::string abort_reason;
};

using StopFn = std::function<bool(int update, const Metrics&)>;

struct TrainOptions {
  std::string out_dir;              // empty: no metrics/checkpoint files
  const Params* resume_from = nullptr;
  int workers = 0;                  // 0: take BAMS_WORKERS from the environment
  StopFn stop_when;                 // early stop, checked at each evaluation
  std::function<void(const std::string&)> log;  // progress lines
};

// Centralized training, distributed execution: rollouts consume only local
// agent inputs; losses use the shared team reward and centrally assembled
// ground truth. Gradients accumulate over episodes (averaged), then one
// RMSprop step per update.
TrainResult train(const EnvConfig& env_cfg, const TrainConfig& train_cfg, const ModelDims& dims,
                  const TrainOptions& options = {});

// Greedy-policy evaluation on fresh seeds; no learning, no recording.
Metrics evaluate(const Params& params, const EnvConfig& env_cfg, int episodes, uint64_t seed);

// Rule-based baseline sweep; sightings are broadcast instantly.
Metrics evaluate_heuristic(const EnvConfig& env_cfg, int episodes, uint64_t seed);

int env_workers_from_environment();

}  // namespace bams
