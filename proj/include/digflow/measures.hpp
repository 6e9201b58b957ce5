#pragma once

#include <cstdint>
#include <stdexcept>

#include <Eigen/Dense>

namespace digflow {

// Uniform-weight point cloud over R^d. Each row of `points` is one atom.
struct EmpiricalMeasure {
  Eigen::MatrixXd points;  // n x d

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
};

inline EmpiricalMeasure measure_from_rows(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 1) throw std::invalid_argument("empirical measure needs at least one point");
  return EmpiricalMeasure{rows};
}

// Squared 1D Wasserstein-2 between equal-size uniform measures:
// sort both sides, average squared gaps.
double w2_1d(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// M unit directions drawn from normalized standard normals, one per row.
Eigen::MatrixXd sample_unit_directions(int num_directions, int dim, std::uint64_t seed);

// Sliced squared W2: average of w2_1d over projections onto the given
// directions (one direction per row). Test hook for injecting fixed slices.
double sliced_w2_with_directions(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                                 const Eigen::MatrixXd& directions);

double sliced_w2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                 int num_directions, std::uint64_t seed);

// Brute-force exact squared W2 via assignment enumeration; refuses n > 8.
double exact_w2_oracle(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

struct SinkhornOptions {
  double epsilon = 0.1;
  int max_iters = 10000;
  double tol = 1e-4;  // L1 row-marginal violation at exit
};

// Debiased entropic divergence S_eps(mu,nu) = OT_eps(mu,nu)
// - (OT_eps(mu,mu) + OT_eps(nu,nu)) / 2, log-domain iterations.
double sinkhorn_divergence(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                           const SinkhornOptions& opts);

// Sharp transport cost <P, C> of the converged entropic plan.
double sinkhorn_transport_cost(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                               const SinkhornOptions& opts);

// Squared MMD with RBF kernel exp(-||x-y||^2 / (2 sigma^2)), biased V-statistic.
double mmd_rbf(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double sigma);

// 1 - cos(mean(mu), mean(nu)); errors on zero-mean input.
double cosine_mean_discrepancy(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

struct DiscrepancyKind {
  enum class Tag { SlicedW2, Sinkhorn, MmdRbf, CosineMean };
  Tag tag = Tag::SlicedW2;
  int num_projections = 32;     // SlicedW2
  double epsilon = 0.1;         // Sinkhorn
  int max_iters = 10000;        // Sinkhorn
  double tol = 1e-4;            // Sinkhorn
  double sigma = 1.0;           // MmdRbf
};

// Dispatch on kind; `seed` feeds the sliced estimator only.
double discrepancy(const DiscrepancyKind& kind, const EmpiricalMeasure& mu,
                   const EmpiricalMeasure& nu, std::uint64_t seed);

const char* discrepancy_name(DiscrepancyKind::Tag tag);

}  // namespace digflow
