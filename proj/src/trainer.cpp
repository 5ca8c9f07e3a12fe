#include "bams/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "bams/checkpoint.hpp"

namespace bams {

namespace fs = std::filesystem;

void TrainConfig::canonicalize() {
  if (mode == TrainMode::BamsR) alpha = 0.0;
  if (alpha == 0.0) mode = TrainMode::BamsR;
}

void TrainConfig::validate() const {
  if (alpha < 0.0) throw ConfigError("train.alpha: must be non-negative");
  if (beta < 0.0) throw ConfigError("train.beta: must be non-negative");
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("train.gamma: must lie in [0, 1]");
  if (entropy_coef < 0.0) throw ConfigError("train.entropy_coef: must be non-negative");
  if (learning_rate <= 0.0) throw ConfigError("train.learning_rate: must be positive");
  if (smoothing <= 0.0 || smoothing >= 1.0) throw ConfigError("train.smoothing: must lie in (0, 1)");
  if (episodes_per_update < 1) throw ConfigError("train.episodes_per_update: must be positive");
  if (total_updates < 1) throw ConfigError("train.total_updates: must be positive");
  if (eval_every < 1) throw ConfigError("train.eval_every: must be positive");
  if (eval_episodes < 1) throw ConfigError("train.eval_episodes: must be positive");
  if (mode == TrainMode::BamsR && alpha != 0.0) {
    throw ConfigError("train.mode: bams-r requires alpha = 0");
  }
  if (mode == TrainMode::Bams && alpha == 0.0) {
    throw ConfigError("train.alpha: alpha = 0 selects bams-r mode");
  }
}

double EpisodeRecord::episode_return() const {
  double r = 0.0;
  for (double v : rewards) r += v;
  return r;
}

namespace {

// Shared rollout core. When `forced` is set, actions and gates come from the
// skeleton instead of sampling, which makes the loss a deterministic
// function of the parameters (the finite-difference harness relies on it).
EpisodeRecord run_episode(const Params& params, const EnvConfig& env_cfg, TrainMode mode,
                          GridWorld& env, uint64_t sample_seed, const EpisodeRecord* forced) {
  const int n = env_cfg.n_agents;
  EpisodeRecord ep;
  ep.layout = env.layout();
  ep.env_seed = env.config().seed;
  ep.sample_seed = sample_seed;
  Rng sample_rng(sample_seed);

  std::vector<AgentCore> cores;
  cores.reserve(n);
  for (int i = 0; i < n; ++i) cores.push_back(make_core(params.dims));

  int t = 0;
  while (!env.done()) {
    std::vector<Tensor> prev_outbox(n);
    for (int i = 0; i < n; ++i) prev_outbox[i] = cores[i].outbox;

    std::vector<StepAgentRecord> row(n);
    std::vector<Action> actions(n, Action::Stay);
    Tensor gt;
    for (int i = 0; i < n; ++i) {
      StepAgentRecord& rec = row[i];
      rec.active = !env.reached(i);
      if (!rec.active) {
        cores[i].outbox = Tensor::zeros({params.dims.hidden});  // frozen agents fall silent
        continue;
      }
      ++ep.active_agent_steps;

      Tensor obs(Shape{kMapChannels, env_cfg.m, env_cfg.m}, env.observe(i));
      Tensor enc = encode_observation(obs, params);
      std::vector<Tensor> inbox;
      inbox.reserve(n - 1);
      for (int j = 0; j < n; ++j) {
        if (j != i) inbox.push_back(prev_outbox[j]);
      }
      Tensor attended = attention_aggregate(cores[i].h, inbox, params);
      lstm_step(enc, attended, cores[i], params);
      PolicyOutput pol = policy_forward(cores[i].h, params);

      SampledAction act;
      if (forced) {
        act.action = forced->steps[t][i].action;
        act.gate = forced->steps[t][i].gate;
      } else {
        act = sample_actions(pol, sample_rng);
      }
      rec.action = act.action;
      rec.gate = act.gate;
      ep.gate_opens += act.gate;
      actions[i] = static_cast<Action>(act.action);

      rec.value = pol.value;
      rec.value_num = pol.value.item();
      rec.logp = action_log_prob(pol, act.action, act.gate);
      rec.entropy = policy_entropy(pol);
      if (mode == TrainMode::Bams) {
        rec.belief = decode_belief(cores[i].h, params);
        if (!gt.defined()) gt = Tensor(Shape{kMapChannels, env_cfg.m, env_cfg.m}, env.ground_truth());
        rec.gt = gt;
      }
      cores[i].outbox = gate_message(cores[i].h, act.gate);
    }

    StepResult res = env.step(actions);
    ep.rewards.push_back(res.reward);
    ep.steps.push_back(std::move(row));
    ++t;
  }
  ep.length = env.step_count();
  ep.success = env.success();
  return ep;
}

}  // namespace

EpisodeRecord collect_episode(const Params& params, const EnvConfig& env_cfg, TrainMode mode,
                              uint64_t env_seed, uint64_t sample_seed) {
  EnvConfig cfg = env_cfg;
  cfg.seed = env_seed;
  GridWorld env(cfg);
  return run_episode(params, cfg, mode, env, sample_seed, nullptr);
}

EpisodeRecord replay_episode(const Params& params, const EnvConfig& env_cfg, TrainMode mode,
                             const EpisodeRecord& skeleton) {
  EnvConfig cfg = env_cfg;
  cfg.seed = skeleton.env_seed;
  GridWorld env(cfg, skeleton.layout);
  EpisodeRecord ep = run_episode(params, cfg, mode, env, skeleton.sample_seed, &skeleton);
  if (ep.rewards != skeleton.rewards) {
    throw ContractError("replay_episode: trajectory diverged from the recorded episode");
  }
  return ep;
}

Tensor episode_map_loss(const EpisodeRecord& ep, int n_agents) {
  Tensor acc = Tensor::scalar(0.0);
  bool any = false;
  for (const auto& row : ep.steps) {
    for (const StepAgentRecord& rec : row) {
      if (!rec.active || !rec.belief.defined()) continue;
      Tensor diff = ops::sub(rec.belief, rec.gt);
      Tensor mse = ops::scale(ops::sum(ops::mul(diff, diff)), 1.0 / static_cast<double>(rec.belief.size()));
      acc = any ? ops::add(acc, mse) : mse;
      any = true;
    }
  }
  return ops::scale(acc, 1.0 / static_cast<double>(n_agents));
}

namespace {

// TD target r_t + gamma * V(h_{t+1}) with the bootstrap treated as a
// constant; an agent's stream ends (value 0) when it reaches the prey or the
// episode terminates, including truncation at the step cap.
double td_target(const EpisodeRecord& ep, int t, int agent, double gamma) {
  const double r = ep.rewards[t];
  const bool next_exists = t + 1 < static_cast<int>(ep.steps.size()) && ep.steps[t + 1][agent].active;
  return r + (next_exists ? gamma * ep.steps[t + 1][agent].value_num : 0.0);
}

}  // namespace

Tensor episode_rl_loss(const EpisodeRecord& ep, double gamma) {
  Tensor acc = Tensor::scalar(0.0);
  bool any = false;
  for (int t = 0; t < static_cast<int>(ep.steps.size()); ++t) {
    for (int i = 0; i < static_cast<int>(ep.steps[t].size()); ++i) {
      const StepAgentRecord& rec = ep.steps[t][i];
      if (!rec.active) continue;
      Tensor err = ops::sub(Tensor::scalar(td_target(ep, t, i, gamma)), rec.value);
      Tensor sq = ops::mul(err, err);
      acc = any ? ops::add(acc, sq) : sq;
      any = true;
    }
  }
  return acc;
}

Tensor episode_pg_loss(const EpisodeRecord& ep, double gamma, double entropy_coef) {
  Tensor acc = Tensor::scalar(0.0);
  bool any = false;
  for (int t = 0; t < static_cast<int>(ep.steps.size()); ++t) {
    for (int i = 0; i < static_cast<int>(ep.steps[t].size()); ++i) {
      const StepAgentRecord& rec = ep.steps[t][i];
      if (!rec.active) continue;
      const double advantage = td_target(ep, t, i, gamma) - rec.value_num;
      Tensor term = ops::scale(rec.logp, -advantage);
      term = ops::add(term, ops::scale(rec.entropy, -entropy_coef));
      acc = any ? ops::add(acc, term) : term;
      any = true;
    }
  }
  return acc;
}

Tensor episode_total_loss(const EpisodeRecord& ep, const TrainConfig& cfg, int n_agents) {
  Tensor rl = ops::add(episode_rl_loss(ep, cfg.gamma), episode_pg_loss(ep, cfg.gamma, cfg.entropy_coef));
  Tensor loss = ops::scale(rl, cfg.beta);
  if (cfg.mode == TrainMode::Bams) {
    loss = ops::add(loss, ops::scale(episode_map_loss(ep, n_agents), cfg.alpha));
  }
  return loss;
}

double map_loss(const TrajectoryBatch& batch, int n_agents) {
  double acc = 0.0;
  for (const EpisodeRecord& ep : batch) acc += episode_map_loss(ep, n_agents).item();
  return batch.empty() ? 0.0 : acc / static_cast<double>(batch.size());
}

double rl_loss(const TrajectoryBatch& batch, double gamma) {
  double acc = 0.0;
  for (const EpisodeRecord& ep : batch) acc += episode_rl_loss(ep, gamma).item();
  return batch.empty() ? 0.0 : acc / static_cast<double>(batch.size());
}

double policy_gradient_loss(const TrajectoryBatch& batch, double gamma, double entropy_coef) {
  double acc = 0.0;
  for (const EpisodeRecord& ep : batch) acc += episode_pg_loss(ep, gamma, entropy_coef).item();
  return batch.empty() ? 0.0 : acc / static_cast<double>(batch.size());
}

double total_loss(const TrajectoryBatch& batch, const TrainConfig& cfg, int n_agents) {
  double acc = 0.0;
  for (const EpisodeRecord& ep : batch) acc += episode_total_loss(ep, cfg, n_agents).item();
  return batch.empty() ? 0.0 : acc / static_cast<double>(batch.size());
}

int env_workers_from_environment() {
  const char* raw = std::getenv("BAMS_WORKERS");
  if (!raw) return 1;
  const int w = std::atoi(raw);
  return w >= 1 ? w : 1;
}

namespace {

struct UpdateStats {
  double loss = 0.0;
  double map = 0.0;
  bool finite = true;
};

// One optimizer step's worth of rollouts. Each episode runs under its own
// record; its (1/E)-scaled loss backpropagates immediately, so gradients
// accumulate the batch mean while only one episode graph is alive at a time.
UpdateStats rollout_and_backward(Params& params, const EnvConfig& env_cfg,
                                 const TrainConfig& cfg, const std::vector<uint64_t>& env_seeds,
                                 const std::vector<uint64_t>& sample_seeds, int begin, int step_by) {
  UpdateStats stats;
  const double inv_e = 1.0 / static_cast<double>(cfg.episodes_per_update);
  for (int e = begin; e < cfg.episodes_per_update; e += step_by) {
    Tape tape;
    EnvConfig ecfg = env_cfg;
    ecfg.seed = env_seeds[e];
    GridWorld env(ecfg);
    EpisodeRecord ep = run_episode(params, ecfg, cfg.mode, env, sample_seeds[e], nullptr);
    Tensor loss = episode_total_loss(ep, cfg, env_cfg.n_agents);
    stats.loss += loss.item() * inv_e;
    if (cfg.mode == TrainMode::Bams) stats.map += episode_map_loss(ep, env_cfg.n_agents).item() * inv_e;
    if (!std::isfinite(loss.item())) stats.finite = false;
    if (loss.tracked()) tape.backward(ops::scale(loss, inv_e));
  }
  return stats;
}

void write_metrics_row(std::ofstream& csv, const EvalPoint& pt) {
  csv << pt.update << "," << pt.metrics.avg_steps << "," << pt.metrics.success_rate << ","
      << pt.metrics.comm_rate << "," << pt.metrics.map_mse << "," << pt.metrics.mean_return << ","
      << pt.wall_seconds << "\n";
  csv.flush();
}

}  // namespace

TrainResult train(const EnvConfig& env_cfg, const TrainConfig& train_cfg, const ModelDims& dims,
                  const TrainOptions& options) {
  EnvConfig ecfg = env_cfg;
  ecfg.validate();
  TrainConfig cfg = train_cfg;
  cfg.canonicalize();
  cfg.validate();
  if (dims.grid != ecfg.m) {
    throw ConfigError("model.grid: " + std::to_string(dims.grid) + " does not match env.m " +
                      std::to_string(ecfg.m));
  }

  const int workers = options.workers > 0 ? options.workers : env_workers_from_environment();
  Params params = options.resume_from ? options.resume_from->clone() : init_params(dims, cfg.seed);
  if (params.dims != dims) throw ConfigError("resume checkpoint dims do not match the run config");
  auto named = params.named();
  Rmsprop opt(cfg.learning_rate, cfg.smoothing);

  TrainResult result;
  std::ofstream metrics_csv;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    metrics_csv.open(fs::path(options.out_dir) / "metrics.csv", std::ios::trunc);
    metrics_csv << "update,avg_steps,success_rate,comm_rate,map_mse,mean_return,wall_seconds\n";
  }

  const auto wall_start = std::chrono::steady_clock::now();
  auto wall_seconds = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  };

  auto run_eval = [&](int update) {
    const uint64_t eval_seed = derive_seed(cfg.seed, 0xe7a1u) + static_cast<uint64_t>(update);
    EvalPoint pt;
    pt.update = update;
    pt.metrics = evaluate(params, ecfg, cfg.eval_episodes, eval_seed);
    pt.wall_seconds = wall_seconds();
    result.history.push_back(pt);
    if (metrics_csv.is_open()) write_metrics_row(metrics_csv, pt);
    if (!options.out_dir.empty()) {
      const std::string dir = (fs::path(options.out_dir) / ("checkpoint_" + std::to_string(update))).string();
      save_checkpoint(dir, params, cfg.seed, update);
      result.final_checkpoint_dir = dir;
    }
    if (options.log) {
      char line[256];
      std::snprintf(line, sizeof(line),
                    "update %d  avg_steps %.2f  success %.2f  comm %.3f  map_mse %.4f  return %.3f",
                    update, pt.metrics.avg_steps, pt.metrics.success_rate, pt.metrics.comm_rate,
                    pt.metrics.map_mse, pt.metrics.mean_return);
      options.log(line);
    }
    return pt.metrics;
  };

  int update = 0;
  try {
    for (update = 1; update <= cfg.total_updates; ++update) {
      std::vector<uint64_t> env_seeds(cfg.episodes_per_update);
      std::vector<uint64_t> sample_seeds(cfg.episodes_per_update);
      for (int e = 0; e < cfg.episodes_per_update; ++e) {
        const uint64_t base = derive_seed(cfg.seed, (static_cast<uint64_t>(update) << 20) + e);
        env_seeds[e] = base;
        sample_seeds[e] = mix_seed(base);
      }

      UpdateStats stats;
      if (workers <= 1 || cfg.episodes_per_update == 1) {
        stats = rollout_and_backward(params, ecfg, cfg, env_seeds, sample_seeds, 0, 1);
      } else {
        const int w = std::min(workers, cfg.episodes_per_update);
        std::vector<Params> snapshots;
        std::vector<UpdateStats> worker_stats(w);
        snapshots.reserve(w);
        for (int k = 0; k < w; ++k) snapshots.push_back(params.clone());
        std::vector<std::thread> pool;
        pool.reserve(w);
        for (int k = 0; k < w; ++k) {
          pool.emplace_back([&, k] {
            snapshots[k].zero_grad();
            worker_stats[k] = rollout_and_backward(snapshots[k], ecfg, cfg, env_seeds,
                                                   sample_seeds, k, w);
          });
        }
        for (auto& th : pool) th.join();
        for (int k = 0; k < w; ++k) {  // fixed reduction order
          params.add_grads_from(snapshots[k]);
          stats.loss += worker_stats[k].loss;
          stats.map += worker_stats[k].map;
          stats.finite = stats.finite && worker_stats[k].finite;
        }
      }

      if (!stats.finite || !std::isfinite(stats.loss)) {
        throw TrainAbort("non-finite loss at update " + std::to_string(update));
      }
      opt.step(named);
      params.zero_grad();

      if (update % cfg.eval_every == 0 || update == cfg.total_updates) {
        Metrics m = run_eval(update);
        if (options.stop_when && options.stop_when(update, m)) break;
      }
    }
  } catch (const TrainAbort& abort) {
    result.aborted = true;
    result.abort_reason = abort.what();
    if (!options.out_dir.empty()) {
      const std::string dir = (fs::path(options.out_dir) / "checkpoint_aborted").string();
      save_checkpoint(dir, params, cfg.seed, update);
      std::ofstream diag(fs::path(options.out_dir) / "abort.txt", std::ios::trunc);
      diag << abort.what() << "\n";
    }
    if (options.log) options.log(std::string("training aborted: ") + abort.what());
  }
  result.updates_run = std::min(update, cfg.total_updates);

  if (!result.aborted && result.history.empty()) run_eval(result.updates_run);
  if (!result.aborted && !options.out_dir.empty() && result.final_checkpoint_dir.empty()) {
    const std::string dir = (fs::path(options.out_dir) / "checkpoint_final").string();
    save_checkpoint(dir, params, cfg.seed, result.updates_run);
    result.final_checkpoint_dir = dir;
  }
  return result;
}

Metrics evaluate(const Params& params, const EnvConfig& env_cfg, int episodes, uint64_t seed) {
  Metrics m;
  double steps_acc = 0.0, return_acc = 0.0, mse_acc = 0.0;
  int64_t successes = 0, gate_opens = 0, active_steps = 0, mse_terms = 0;
  const int n = env_cfg.n_agents;

  for (int e = 0; e < episodes; ++e) {
    EnvConfig ecfg = env_cfg;
    ecfg.seed = derive_seed(seed, e);
    GridWorld env(ecfg);
    std::vector<AgentCore> cores;
    for (int i = 0; i < n; ++i) cores.push_back(make_core(params.dims));

    double ep_return = 0.0;
    while (!env.done()) {
      std::vector<Tensor> prev_outbox(n);
      for (int i = 0; i < n; ++i) prev_outbox[i] = cores[i].outbox;
      std::vector<Action> actions(n, Action::Stay);
      for (int i = 0; i < n; ++i) {
        if (env.reached(i)) {
          cores[i].outbox = Tensor::zeros({params.dims.hidden});
          continue;
        }
        Tensor obs(Shape{kMapChannels, ecfg.m, ecfg.m}, env.observe(i));
        Tensor enc = encode_observation(obs, params);
        std::vector<Tensor> inbox;
        for (int j = 0; j < n; ++j) {
          if (j != i) inbox.push_back(prev_outbox[j]);
        }
        Tensor attended = attention_aggregate(cores[i].h, inbox, params);
        lstm_step(enc, attended, cores[i], params);
        PolicyOutput pol = policy_forward(cores[i].h, params);
        SampledAction act = greedy_actions(pol);
        actions[i] = static_cast<Action>(act.action);
        gate_opens += act.gate;
        ++active_steps;
        cores[i].outbox = gate_message(cores[i].h, act.gate);

        Tensor belief = decode_belief(cores[i].h, params);
        const auto gt = env.ground_truth();
        double err = 0.0;
        for (size_t k = 0; k < gt.size(); ++k) {
          const double d = belief.values()[k] - gt[k];
          err += d * d;
        }
        mse_acc += err / static_cast<double>(gt.size());
        ++mse_terms;
      }
      ep_return += env.step(actions).reward;
    }
    steps_acc += env.step_count();
    return_acc += ep_return;
    successes += env.success() ? 1 : 0;
  }

  m.avg_steps = steps_acc / episodes;
  m.success_rate = static_cast<double>(successes) / episodes;
  m.comm_rate = active_steps > 0 ? static_cast<double>(gate_opens) / active_steps : 0.0;
  m.map_mse = mse_terms > 0 ? mse_acc / mse_terms : 0.0;
  m.mean_return = return_acc / episodes;
  return m;
}

Metrics evaluate_heuristic(const EnvConfig& env_cfg, int episodes, uint64_t seed) {
  Metrics m;
  double steps_acc = 0.0, return_acc = 0.0;
  int64_t successes = 0;
  const int n = env_cfg.n_agents;

  for (int e = 0; e < episodes; ++e) {
    EnvConfig ecfg = env_cfg;
    ecfg.seed = derive_seed(seed, e);
    GridWorld env(ecfg);
    std::vector<HeuristicMemory> mems(n);

    double ep_return = 0.0;
    while (!env.done()) {
      std::vector<Action> actions(n, Action::Stay);
      std::optional<Cell> broadcast;
      std::vector<std::vector<double>> obs(n);
      for (int i = 0; i < n; ++i) {
        if (env.reached(i)) continue;
        obs[i] = env.observe(i);
        if (auto seen = prey_in_observation(obs[i], ecfg.m)) broadcast = *seen;
      }
      for (int i = 0; i < n; ++i) {
        if (env.reached(i)) continue;
        // Instant broadcast; a fresh sighting replaces a stale position.
        if (broadcast && (!mems[i].prey_known || !(*mems[i].prey_known == *broadcast))) {
          mems[i].prey_known = *broadcast;
          mems[i].planned_path.clear();
          mems[i].path_pos = 0;
        }
        actions[i] = heuristic_policy(mems[i], obs[i], env.agent_pos(i), env.obstacle_mask(),
                                      ecfg.m, ecfg.vision);
      }
      ep_return += env.step(actions).reward;
    }
    steps_acc += env.step_count();
    return_acc += ep_return;
    successes += env.success() ? 1 : 0;
  }

  m.avg_steps = steps_acc / episodes;
  m.success_rate = static_cast<double>(successes) / episodes;
  m.comm_rate = 0.0;  // the baseline has no gate
  m.map_mse = 0.0;
  m.mean_return = return_acc / episodes;
  return m;
}

}  // namespace bams
