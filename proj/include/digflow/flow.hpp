#pragma once

#include <cstdint>
#include <functional>

#include <Eigen/Dense>

namespace digflow {

// K x d_a raw action chunk.
struct ActionChunk {
  Eigen::MatrixXd actions;

  int chunk_len() const { return static_cast<int>(actions.rows()); }
  int action_dim() const { return static_cast<int>(actions.cols()); }
};

// Linear map f: R^{d_a} -> R^d applied per action.
struct ActionEncoder {
  Eigen::MatrixXd E;  // d x d_a
};

Eigen::MatrixXd encode_actions(const ActionEncoder& enc, const ActionChunk& chunk);

// Row-major flattening of a chunk into a d_a*K vector and back.
Eigen::VectorXd flatten_chunk(const ActionChunk& chunk);
ActionChunk unflatten_chunk(const Eigen::VectorXd& x, int chunk_len, int action_dim);

struct FlowSample {
  Eigen::VectorXd x0;
  Eigen::VectorXd x1;
  double t = 0.0;
  Eigen::VectorXd xt;

  Eigen::VectorXd target_field() const { return x1 - x0; }
};

// Linear path x_t = (1-t) x0 + t x1 with target field x1 - x0.
FlowSample interpolate(const Eigen::VectorXd& x0, const Eigen::VectorXd& x1, double t);

struct MlpDims {
  int action_dim = 2;
  int chunk_len = 4;
  int feature_dim = 16;
  int hidden = 32;

  int flat_action() const { return action_dim * chunk_len; }
  int input() const { return flat_action() + 1 + feature_dim; }
  int output() const { return flat_action(); }
};

// Two-hidden-layer tanh perceptron v_theta(x, t | pooled(H)).
class VectorFieldModel {
 public:
  VectorFieldModel() = default;
  explicit VectorFieldModel(const MlpDims& dims);

  void init(std::uint64_t seed, double scale = 0.2);

  const MlpDims& dims() const { return dims_; }
  int num_params() const;
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& p);

  Eigen::VectorXd evaluate(const Eigen::VectorXd& x, double t,
                           const Eigen::VectorXd& pooled) const;

  // Test hook: when set, replaces the network output entirely.
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)> forced_field;

  Eigen::MatrixXd W1, W2, W3;
  Eigen::VectorXd b1, b2, b3;

 private:
  MlpDims dims_;
};

struct LossGrads {
  Eigen::VectorXd grad_params;  // same layout as VectorFieldModel::params()
  Eigen::MatrixXd grad_H;       // T x d, through mean pooling
};

double per_sample_loss(const VectorFieldModel& model, const FlowSample& sample,
                       const Eigen::MatrixXd& Hcond);

// Loss plus exact reverse-mode gradients w.r.t. parameters and w.r.t. Hcond.
double per_sample_loss_with_grads(const VectorFieldModel& model, const FlowSample& sample,
                                  const Eigen::MatrixXd& Hcond, LossGrads& out);

// Base-noise draw used by euler_sample; exposed so tests can replay it.
Eigen::VectorXd draw_base_noise(const MlpDims& dims, std::uint64_t seed);

// Fixed-step forward Euler integration of dx/dt = v_theta(x, t | pooled(H)).
ActionChunk euler_sample(const VectorFieldModel& model, const Eigen::MatrixXd& Hcond,
                         int steps, std::uint64_t seed);

}  // namespace digflow
