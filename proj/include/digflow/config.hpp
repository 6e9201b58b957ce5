#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "digflow/refine.hpp"
#include "digflow/synthetic.hpp"
#include "digflow/trainer.hpp"

namespace digflow {

const char* version_string();

struct RunConfig {
  std::string command = "train";
  TaskSpec task;
  TrainConfig train;
  RefineConfig refine;
  PerturbMode perturb = PerturbMode::Both;
  int episodes = 64;
  int num_seeds = 3;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  int jobs = 1;
  // Sweep grids; only the axes relevant to a command are consulted.
  std::vector<double> sweep_lambda;
  std::vector<double> sweep_tau;
  std::vector<int> sweep_projections;
  std::vector<int> sweep_n_refine = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<std::string> sweep_discrepancy = {"sliced_w2", "sinkhorn", "mmd_rbf",
                                                "cosine_mean"};
  std::vector<std::string> sweep_gate_strategy;

  void validate() const;
};

// Applies one "key = value" assignment; throws on unknown key, type mismatch,
// or malformed value, naming the key.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

// Key-value config file: one assignment per line, '#' comments, blank lines
// ignored. Later lines override earlier ones.
RunConfig parse_config_file(const std::string& path, RunConfig base = {});

// Full resolved configuration as sorted "key = value" lines.
std::string resolved_config_text(const RunConfig& cfg);

// Dispatches cfg.command; writes artifacts under cfg.out_dir. Returns the
// process exit status (nonzero on verification failure).
int run_command(const RunConfig& cfg, std::ostream& log);

}  // namespace digflow
