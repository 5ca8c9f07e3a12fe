#pragma once

#include <cstdint>
#include <string>

#include "bams/model.hpp"

namespace bams {

// Checkpoint directory: manifest.json (dims, seed, step, tensor index) plus
// one raw little-endian float64 blob per named tensor.
void save_checkpoint(const std::string& dir, const Params& params, uint64_t seed, int step);

struct LoadedCheckpoint {
  Params params;
  uint64_t seed = 0;
  int step = 0;
};

// Validates every tensor shape against the manifest dims.
LoadedCheckpoint load_checkpoint(const std::string& dir);

}  // namespace bams
