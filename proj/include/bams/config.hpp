#pragma once

#include <string>

#include <json.hpp>

#include "bams/env.hpp"
#include "bams/model.hpp"
#include "bams/trainer.hpp"

namespace bams {

// Merged run configuration. One seed drives everything; the JSON layout is
//   { "run_name": ..., "seed": ..., "env": {...}, "model": {...}, "train": {...} }
// Unknown fields are rejected by name.
struct RunConfig {
  std::string run_name = "run";
  uint64_t seed = 0;
  EnvConfig env;
  ModelDims model;
  TrainConfig train;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_json_file(const std::string& path);
  nlohmann::json to_json() const;

  // "key=value"; dotted ("train.alpha=0") or bare where unambiguous
  // ("alpha=0"). "seed=N" sets the run seed.
  void apply_override(const std::string& key_eq_value);

  // Ties model.grid to env.m, propagates the seed, canonicalizes the
  // bams-r/alpha coupling, then validates every section.
  void finalize();
};

Layout layout_from_json(const nlohmann::json& j);
Layout layout_from_json_file(const std::string& path);
nlohmann::json layout_to_json(const Layout& layout);

}  // namespace bams
