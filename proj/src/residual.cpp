#include "digflow/residual.hpp"

#include <stdexcept>

#include "digflow/rng.hpp"

namespace digflow {

Eigen::MatrixXd residual_apply(const ResidualOperator& op, const Eigen::MatrixXd& H) {
  if (H.cols() != op.W.cols())
    throw std::invalid_argument("residual_apply: feature dimension mismatch");
  return (H * op.W.transpose()).rowwise() + op.b.transpose();
}

double estimate_spectral_norm(const Eigen::MatrixXd& W, int power_iters) {
  if (!W.allFinite()) throw std::invalid_argument("estimate_spectral_norm: non-finite W");
  const int d = static_cast<int>(W.cols());
  Rng rng(0x5eedULL);  // fixed start vector for determinism
  Eigen::VectorXd v = rng.normal_vector(d);
  v.normalize();
  for (int it = 0; it < power_iters; ++it) {
    Eigen::VectorXd u = W.transpose() * (W * v);
    const double nrm = u.norm();
    if (nrm == 0.0) return 0.0;
    v = u / nrm;
  }
  return (W * v).norm();
}

void spectral_project(ResidualOperator& op) {
  const double sigma = estimate_spectral_norm(op.W, op.power_iters);
  if (sigma > op.spectral_bound) op.W *= op.spectral_bound / sigma;
}

Eigen::MatrixXd gated_update(const Eigen::MatrixXd& H, double g, double lambda,
                             const ResidualOperator& op) {
  if (!(lambda > 0.0)) throw std::invalid_argument("gated_update: lambda must be positive");
  return H + lambda * g * residual_apply(op, H);
}

}  // namespace digflow
