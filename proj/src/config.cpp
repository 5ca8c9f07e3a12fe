#include "bams/config.hpp"

#include <fstream>

namespace bams {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& section,
                    std::initializer_list<const char*> known) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) {
      throw ConfigError("unknown field '" + (section.empty() ? it.key() : section + "." + it.key()) +
                        "'");
    }
  }
}

template <class T>
void get_if(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("field '" + section + "." + key + "' has the wrong type");
  }
}

PreyMode prey_mode_from(const std::string& s) {
  if (s == "static") return PreyMode::Static;
  if (s == "moving") return PreyMode::Moving;
  throw ConfigError("env.prey: '" + s + "' is not one of static|moving");
}

GroundTruthMode gt_mode_from(const std::string& s) {
  if (s == "full") return GroundTruthMode::Full;
  if (s == "discovered") return GroundTruthMode::DiscoveredOnly;
  throw ConfigError("env.ground_truth: '" + s + "' is not one of full|discovered");
}

PreyThreat threat_from(const std::string& s) {
  if (s == "min") return PreyThreat::MinDistance;
  if (s == "mean") return PreyThreat::MeanDistance;
  if (s == "sum") return PreyThreat::SumDistance;
  throw ConfigError("env.prey_threat: '" + s + "' is not one of min|mean|sum");
}

TrainMode mode_from(const std::string& s) {
  if (s == "bams") return TrainMode::Bams;
  if (s == "bams-r") return TrainMode::BamsR;
  throw ConfigError("train.mode: '" + s + "' is not one of bams|bams-r");
}

std::string mode_str(TrainMode m) { return m == TrainMode::Bams ? "bams" : "bams-r"; }

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown(j, "", {"run_name", "seed", "env", "model", "train"});
  RunConfig cfg;
  get_if(j, "run_name", cfg.run_name, "");
  get_if(j, "seed", cfg.seed, "");

  if (j.contains("env")) {
    const json& e = j.at("env");
    reject_unknown(e, "env",
                   {"m", "agents", "vision", "max_steps", "obstacles", "prey", "ground_truth",
                    "prey_threat"});
    get_if(e, "m", cfg.env.m, "env");
    get_if(e, "agents", cfg.env.n_agents, "env");
    get_if(e, "vision", cfg.env.vision, "env");
    get_if(e, "max_steps", cfg.env.max_steps, "env");
    get_if(e, "obstacles", cfg.env.n_obstacles, "env");
    std::string s;
    if (e.contains("prey")) {
      get_if(e, "prey", s, "env");
      cfg.env.prey_mode = prey_mode_from(s);
    }
    if (e.contains("ground_truth")) {
      get_if(e, "ground_truth", s, "env");
      cfg.env.gt_mode = gt_mode_from(s);
    }
    if (e.contains("prey_threat")) {
      get_if(e, "prey_threat", s, "env");
      cfg.env.prey_threat = threat_from(s);
    }
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, "model", {"hidden", "key_dim", "value_dim", "attn_divisor_dim"});
    get_if(m, "hidden", cfg.model.hidden, "model");
    get_if(m, "key_dim", cfg.model.key_dim, "model");
    get_if(m, "value_dim", cfg.model.value_dim, "model");
    get_if(m, "attn_divisor_dim", cfg.model.attn_divisor_dim, "model");
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, "train",
                   {"alpha", "beta", "gamma", "entropy_coef", "learning_rate", "smoothing",
                    "episodes_per_update", "total_updates", "eval_every", "eval_episodes", "mode"});
    get_if(t, "alpha", cfg.train.alpha, "train");
    get_if(t, "beta", cfg.train.beta, "train");
    get_if(t, "gamma", cfg.train.gamma, "train");
    get_if(t, "entropy_coef", cfg.train.entropy_coef, "train");
    get_if(t, "learning_rate", cfg.train.learning_rate, "train");
    get_if(t, "smoothing", cfg.train.smoothing, "train");
    get_if(t, "episodes_per_update", cfg.train.episodes_per_update, "train");
    get_if(t, "total_updates", cfg.train.total_updates, "train");
    get_if(t, "eval_every", cfg.train.eval_every, "train");
    get_if(t, "eval_episodes", cfg.train.eval_episodes, "train");
    std::string s;
    if (t.contains("mode")) {
      get_if(t, "mode", s, "train");
      cfg.train.mode = mode_from(s);
    }
  }
  return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json j;
  j["run_name"] = run_name;
  j["seed"] = seed;
  j["env"] = {{"m", env.m},
              {"agents", env.n_agents},
              {"vision", env.vision},
              {"max_steps", env.max_steps},
              {"obstacles", env.n_obstacles},
              {"prey", env.prey_mode == PreyMode::Static ? "static" : "moving"},
              {"ground_truth", env.gt_mode == GroundTruthMode::Full ? "full" : "discovered"},
              {"prey_threat", env.prey_threat == PreyThreat::MinDistance
                                  ? "min"
                                  : (env.prey_threat == PreyThreat::MeanDistance ? "mean" : "sum")}};
  j["model"] = {{"hidden", model.hidden},
                {"key_dim", model.key_dim},
                {"value_dim", model.value_dim},
                {"attn_divisor_dim", model.attn_divisor_dim}};
  j["train"] = {{"alpha", train.alpha},
                {"beta", train.beta},
                {"gamma", train.gamma},
                {"entropy_coef", train.entropy_coef},
                {"learning_rate", train.learning_rate},
                {"smoothing", train.smoothing},
                {"episodes_per_update", train.episodes_per_update},
                {"total_updates", train.total_updates},
                {"eval_every", train.eval_every},
                {"eval_episodes", train.eval_episodes},
                {"mode", mode_str(train.mode)}};
  return j;
}

void RunConfig::apply_override(const std::string& key_eq_value) {
  const auto eq = key_eq_value.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + key_eq_value + "' is not of the form key=value");
  }
  std::string key = key_eq_value.substr(0, eq);
  const std::string value = key_eq_value.substr(eq + 1);

  json j = to_json();
  if (key.find('.') == std::string::npos && key != "seed" && key != "run_name") {
    // bare key: resolve against the unique section that has it
    std::string found;
    for (const char* section : {"env", "model", "train"}) {
      if (j[section].contains(key)) {
        if (!found.empty()) {
          throw ConfigError("override '" + key + "' is ambiguous (" + found + " and " + section +
                            "); qualify it");
        }
        found = section;
      }
    }
    if (found.empty()) throw ConfigError("unknown field '" + key + "'");
    key = found + "." + key;
  }

  json* slot = &j;
  if (key == "seed" || key == "run_name") {
    slot = &j[key];
  } else {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    const std::string field = key.substr(dot + 1);
    if (!j.contains(section) || !j[section].contains(field)) {
      throw ConfigError("unknown field '" + key + "'");
    }
    slot = &j[section][field];
  }

  // parse the value with the existing field's type
  try {
    if (slot->is_string()) {
      *slot = value;
    } else if (slot->is_boolean()) {
      *slot = (value == "true" || value == "1");
    } else if (slot->is_number_integer() || slot->is_number_unsigned()) {
      *slot = json::parse(value);
      if (!slot->is_number()) throw std::runtime_error("not a number");
    } else {
      *slot = std::stod(value);
    }
  } catch (const std::exception&) {
    throw ConfigError("override '" + key + "': cannot parse value '" + value + "'");
  }
  *this = from_json(j);
}

void RunConfig::finalize() {
  env.seed = seed;
  train.seed = seed;
  model.grid = env.m;
  model.map_channels = kMapChannels;
  model.actions = kNumActions;
  train.canonicalize();
  env.validate();
  model.validate();
  train.validate();
}

Layout layout_from_json(const json& j) {
  reject_unknown(j, "layout", {"m", "N", "v", "obstacles", "agents", "prey"});
  Layout lay;
  try {
    lay.m = j.at("m").get<int>();
    lay.n = j.at("N").get<int>();
    lay.v = j.at("v").get<int>();
    for (const auto& cell : j.at("obstacles")) lay.obstacles.push_back({cell.at(0).get<int>(), cell.at(1).get<int>()});
    for (const auto& cell : j.at("agents")) lay.agents.push_back({cell.at(0).get<int>(), cell.at(1).get<int>()});
    lay.prey = {j.at("prey").at(0).get<int>(), j.at("prey").at(1).get<int>()};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("layout fixture: ") + e.what());
  }
  return lay;
}

Layout layout_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("layout: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("layout: " + path + " is not valid JSON: " + e.what());
  }
  return layout_from_json(j);
}

json layout_to_json(const Layout& layout) {
  json j;
  j["m"] = layout.m;
  j["N"] = layout.n;
  j["v"] = layout.v;
  j["obstacles"] = json::array();
  for (const Cell& c : layout.obstacles) j["obstacles"].push_back({c.row, c.col});
  j["agents"] = json::array();
  for (const Cell& c : layout.agents) j["agents"].push_back({c.row, c.col});
  j["prey"] = {layout.prey.row, layout.prey.col};
  return j;
}

}  // namespace bams
