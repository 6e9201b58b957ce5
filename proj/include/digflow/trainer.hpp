#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "digflow/flow.hpp"
#include "digflow/gating.hpp"
#include "digflow/measures.hpp"
#include "digflow/residual.hpp"
#include "digflow/synthetic.hpp"

namespace digflow {

enum class GateStrategy { Transport, Fixed, Random };

GateStrategy gate_strategy_from_string(const std::string& s);
const char* gate_strategy_name(GateStrategy g);

struct DigConfig {
  GateConfig gate_cfg;          // tau = 1.0, g_min = 0.05
  double lambda = 0.4;          // residual strength
  double spectral_bound = 2.0;  // B_R
  DiscrepancyKind kind;         // sliced W2, M = 32 by default
  bool gate_enabled = true;
  bool residual_enabled = true;
  GateStrategy gate_strategy = GateStrategy::Transport;
  double fixed_gate = 0.5;
  bool batch_pooled_gate = false;  // one gate per batch instead of per element
};

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct TrainConfig {
  DigConfig dig;
  OptimConfig optim;
  int steps = 2000;
  int batch_size = 32;
  int hidden = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepMetrics {
  long step = 0;
  double mean_discrepancy = 0.0;
  double mean_gate = 0.0;
  double raw_loss = 0.0;
  double gated_objective = 0.0;
  double wall_ms = 0.0;
};

struct MetricLog {
  std::vector<StepMetrics> records;

  void append(const StepMetrics& m);
  void write_jsonl(std::ostream& os) const;
};

// Decoupled-weight-decay adaptive moment state for one parameter block.
struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;

  static AdamState zero(int n) {
    return AdamState{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0};
  }
};

void adamw_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& st,
                const OptimConfig& cfg);

struct TrainState {
  VectorFieldModel model;
  ActionEncoder encoder;
  ResidualOperator residual;
  AdamState opt_model;
  AdamState opt_encoder;
  AdamState opt_residual;
  long step = 0;          // doubles as the RNG cursor
  std::uint64_t seed = 0;
};

TrainState init_state(const TaskSpec& task, const TrainConfig& cfg);

// Mean of the K embedding rows replicated T times (order-invariant).
Eigen::MatrixXd centroid_broadcast(const Eigen::MatrixXd& Z, int T);

struct TrainHooks {
  // Replaces the computed gate in both the residual path and the objective.
  std::optional<double> gate_override;
};

StepMetrics train_step(TrainState& state, const TaskFamily& family,
                       const TrainConfig& cfg, const TrainHooks& hooks = {});

MetricLog train(TrainState& state, const TaskFamily& family, const TrainConfig& cfg);

// Per-sample gradient of the gated objective w.r.t. model parameters, for the
// stop-gradient probe. Uses the same path as train_step without updating.
Eigen::VectorXd objective_model_grad(const TrainState& state, const TaskFamily& family,
                                     const TrainConfig& cfg, const TrainHooks& hooks);

// Binary checkpoint: "DIGF" magic, u32 version, dimension tuple, parameter
// blocks in declared order, FNV-1a 64 checksum.
void checkpoint_save(const TrainState& state, const std::string& path);
TrainState checkpoint_load(const std::string& path);

}  // namespace digflow
