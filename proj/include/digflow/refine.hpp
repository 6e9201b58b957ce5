#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "digflow/trainer.hpp"

namespace digflow {

struct RefineConfig {
  int n_refine = 0;
  int euler_steps = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RefineTrace {
  std::vector<double> discrepancy;
  std::vector<double> gate;
};

// Gated refinement inference: base prediction from raw features, then n_refine
// rounds of encode -> discrepancy -> gate -> enhanced features -> regenerate,
// reusing the same base-noise draw every round.
ActionChunk infer(const TrainState& state, const Eigen::MatrixXd& H_raw,
                  const DigConfig& dig, const RefineConfig& cfg,
                  RefineTrace* trace = nullptr);

struct EvalReport {
  double mean_squared_error = 0.0;
  std::vector<double> per_episode_error;
  std::vector<double> per_episode_gate;  // last refinement gate, 1 if none
};

struct EvalHooks {
  // Test hook: replaces the flow policy entirely (e.g. a perfect oracle).
  std::function<ActionChunk(const Sample&)> policy_override;
};

// Rolls fresh clean test episodes (perturbation applied at test time only)
// through infer and reports the action error.
EvalReport eval_policy(const TrainState& state, const TaskFamily& family,
                       const DigConfig& dig, const RefineConfig& cfg,
                       PerturbMode perturb, int episodes, std::uint64_t seed,
                       const EvalHooks& hooks = {});

// Synthetic linear error field E(Z; g) = A (Z - Z*) for the fixed-gate
// contraction iteration; A symmetric positive definite.
struct ContractionField {
  Eigen::MatrixXd A;
  Eigen::VectorXd z_star;
  double mu = 0.0;   // smallest eigenvalue
  double l_e = 0.0;  // largest eigenvalue

  static ContractionField random(int dim, double mu, double l_e, std::uint64_t seed);
};

// Iterates Z <- Z - alpha E(Z; g) k times; records per-step distance ratios.
Eigen::VectorXd fixed_gate_iterate(const ContractionField& field, double alpha,
                                   const Eigen::VectorXd& z0, int iterations,
                                   std::vector<double>* ratios = nullptr);

// Geometric mean of per-step contraction ratios.
double estimate_rate(const std::vector<double>& ratios);

}  // namespace digflow
