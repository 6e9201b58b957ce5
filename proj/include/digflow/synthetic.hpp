#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "digflow/flow.hpp"

namespace digflow {

struct TaskSpec {
  int latent_dim = 3;
  int tokens = 8;        // T
  int feature_dim = 16;  // d
  int chunk_len = 4;     // K
  int action_dim = 2;    // d_a
  double obs_noise = 0.05;
  double obs_shift = 0.5;  // stddev of a common per-sample scalar shift
  double shortcut_frac = 0.0;     // p_S
  double shortcut_strength = 3.0;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class PerturbMode { None, Cosine, Sine, Both };

PerturbMode perturb_mode_from_string(const std::string& s);
const char* perturb_mode_name(PerturbMode m);

struct PerturbSpec {
  double c1 = 0.0, c2 = 0.0, c3 = 0.0, c4 = 0.0;
  PerturbMode mode = PerturbMode::None;

  // Coefficients ~ N(0.01, 0.5^2), one draw per episode.
  static PerturbSpec draw(std::uint64_t seed, PerturbMode mode);
};

// Adds the scalar shift c1 cos(c2 t) and/or c3 sin(c4 t) to every entry.
Eigen::MatrixXd apply_perturbation(const Eigen::MatrixXd& H, double t,
                                   const PerturbSpec& p);

struct Sample {
  Eigen::MatrixXd tokens;  // T x d
  ActionChunk actions;     // K x d_a
  bool is_shortcut = false;
};

// Frozen seeded "observation -> action chunk" family. Clean samples map a
// latent through fixed tanh networks; shortcut samples scramble the
// task-relevant tokens and plant the action signal in one nuisance token.
class TaskFamily {
 public:
  explicit TaskFamily(const TaskSpec& spec);

  const TaskSpec& spec() const { return spec_; }

  std::vector<Sample> sample_batch(int n, std::uint64_t seed) const;

  // Same family with shortcut corruption switched off (test-time draws).
  TaskFamily clean_variant() const;

 private:
  Sample draw_sample(class Rng& rng) const;

  TaskSpec spec_;
  // Frozen token featurizer: latent -> T*d.
  Eigen::MatrixXd tok_A_;
  Eigen::VectorXd tok_a0_;
  Eigen::MatrixXd tok_B_;
  Eigen::VectorXd tok_b0_;
  // Frozen action map: latent -> K*d_a.
  Eigen::MatrixXd act_A_;
  Eigen::VectorXd act_a0_;
  Eigen::MatrixXd act_B_;
  Eigen::VectorXd act_b0_;
  // Frozen spurious map: flattened actions -> nuisance token.
  Eigen::MatrixXd shortcut_map_;
};

}  // namespace digflow
