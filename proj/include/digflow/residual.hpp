#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace digflow {

// Affine map R(H) = W h_i + b applied rowwise, with a hard spectral-norm
// projection ||W||_2 <= spectral_bound maintained after optimizer steps.
struct ResidualOperator {
  Eigen::MatrixXd W;  // d x d
  Eigen::VectorXd b;  // d
  double spectral_bound = 2.0;
  int power_iters = 50;

  static ResidualOperator zero(int dim, double bound = 2.0) {
    return ResidualOperator{Eigen::MatrixXd::Zero(dim, dim),
                            Eigen::VectorXd::Zero(dim), bound, 50};
  }
};

Eigen::MatrixXd residual_apply(const ResidualOperator& op, const Eigen::MatrixXd& H);

// Power-iteration estimate of sigma_max(W) from a fixed seeded start vector.
double estimate_spectral_norm(const Eigen::MatrixXd& W, int power_iters);

// Rescales W into the spectral ball when the estimate exceeds the bound.
void spectral_project(ResidualOperator& op);

// H + lambda * g * R(H)
Eigen::MatrixXd gated_update(const Eigen::MatrixXd& H, double g, double lambda,
                             const ResidualOperator& op);

}  // namespace digflow
