#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bams/config.hpp"
#include "bams/trainer.hpp"

namespace bams {

// Command results map 1:1 onto CLI exit codes:
//   0 ok, 1 selftest failure, 2 bad config, 3 training abort, 4 I/O failure.
struct CmdResult {
  int code = 0;
  std::string error;
  Metrics metrics;  // filled by cmd_eval
};

constexpr int kExitOk = 0;
constexpr int kExitSelftest = 1;
constexpr int kExitConfig = 2;
constexpr int kExitTrainAbort = 3;
constexpr int kExitIo = 4;

// Runs training; writes metrics.csv, checkpoints and the resolved config
// under out_dir. resume_checkpoint, when non-empty, seeds the parameters
// (the pretrain/fine-tune path).
CmdResult cmd_train(RunConfig cfg, const std::string& out_dir,
                    const std::string& resume_checkpoint = "", bool quiet = false);

// Greedy evaluation of a checkpoint (or the rule-based baseline when
// checkpoint_dir is empty). episodes <= 0 falls back to the config value.
// Writes metrics.csv and the resolved config to out_dir unless empty.
CmdResult cmd_eval(RunConfig cfg, const std::string& checkpoint_dir, int episodes,
                   const std::string& out_dir, bool quiet = false);

// Replays one greedy episode and writes per-step, per-agent belief heatmaps
// (explored/predator/prey channels) as 8-bit PGMs plus trajectory.csv.
// layout_path, when non-empty, fixes the placement; otherwise the config
// seed samples one.
CmdResult cmd_render(RunConfig cfg, const std::string& checkpoint_dir,
                     const std::string& layout_path, const std::string& out_dir);

// Runs the self-check battery (gradient oracles, no-leakage, environment
// invariants, decoder overfit). Prints one line per check unless quiet.
CmdResult cmd_selftest(bool verbose);

// 8-bit binary PGM (P5), maxval 255.
void write_pgm(const std::string& path, int rows, int cols, const std::vector<uint8_t>& pixels);
std::vector<uint8_t> read_pgm(const std::string& path, int& rows, int& cols);

}  // namespace bams
