#include "digflow/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "digflow/rng.hpp"

namespace digflow {

namespace {

void check_pair(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.size() < 1 || nu.size() < 1)
    throw std::invalid_argument("empirical measure has zero points");
  if (mu.dim() != nu.dim())
    throw std::invalid_argument("dimension mismatch between measures");
}

Eigen::MatrixXd squared_cost(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const int n = static_cast<int>(x.rows());
  const int m = static_cast<int>(y.rows());
  Eigen::MatrixXd c(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) c(i, j) = (x.row(i) - y.row(j)).squaredNorm();
  return c;
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

struct SinkhornResult {
  double cost = 0.0;        // <P, C>
  double violation = 0.0;   // L1 row-marginal violation at exit
  bool converged = false;
};

SinkhornResult sinkhorn_plan_cost(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                  const SinkhornOptions& opts) {
  const int n = static_cast<int>(x.rows());
  const int m = static_cast<int>(y.rows());
  const double eps = opts.epsilon;
  const Eigen::MatrixXd c = squared_cost(x, y);
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));

  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m);

  const auto sweep = [&](double e) {
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd v = (g.transpose().array() - c.row(i).array()).transpose() / e;
      v.array() += log_b;
      f[i] = -e * log_sum_exp(v);
    }
    for (int j = 0; j < m; ++j) {
      Eigen::VectorXd v = (f.array() - c.col(j).array()) / e;
      v.array() += log_a;
      g[j] = -e * log_sum_exp(v);
    }
  };

  // Anneal the regularization down to the target, warm-starting the
  // potentials; plain iterations stall for small epsilon.
  double cur = std::max(eps, c.maxCoeff());
  while (cur > eps) {
    for (int it = 0; it < 20; ++it) sweep(cur);
    cur = std::max(eps, 0.5 * cur);
  }

  SinkhornResult res;
  for (int it = 0; it < opts.max_iters; ++it) {
    sweep(eps);
    // Column marginals are exact after the g update; measure row violation.
    double viol = 0.0;
    for (int i = 0; i < n; ++i) {
      double row = 0.0;
      for (int j = 0; j < m; ++j)
        row += std::exp((f[i] + g[j] - c(i, j)) / eps + log_a + log_b);
      viol += std::abs(row - std::exp(log_a));
    }
    res.violation = viol;
    if (viol <= opts.tol) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged)
    throw std::runtime_error("sinkhorn did not converge; last marginal violation " +
                             std::to_string(res.violation));
  double cost = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      cost += std::exp((f[i] + g[j] - c(i, j)) / eps + log_a + log_b) * c(i, j);
  res.cost = cost;
  return res;
}

}  // namespace

double w2_1d(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("w2_1d: unequal sizes");
  if (a.size() < 1) throw std::invalid_argument("w2_1d: empty input");
  std::vector<double> sa(a.data(), a.data() + a.size());
  std::vector<double> sb(b.data(), b.data() + b.size());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double d = sa[i] - sb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(sa.size());
}

Eigen::MatrixXd sample_unit_directions(int num_directions, int dim, std::uint64_t seed) {
  if (num_directions < 1) throw std::invalid_argument("need at least one direction");
  Rng rng(seed);
  Eigen::MatrixXd dirs(num_directions, dim);
  for (int m = 0; m < num_directions; ++m) {
    Eigen::VectorXd v = rng.normal_vector(dim);
    double nrm = v.norm();
    while (nrm == 0.0) {
      v = rng.normal_vector(dim);
      nrm = v.norm();
    }
    dirs.row(m) = v.transpose() / nrm;
  }
  return dirs;
}

double sliced_w2_with_directions(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                                 const Eigen::MatrixXd& directions) {
  check_pair(mu, nu);
  if (mu.size() != nu.size())
    throw std::invalid_argument("sliced_w2: unequal point counts");
  if (directions.cols() != mu.dim())
    throw std::invalid_argument("sliced_w2: direction dimension mismatch");
  const int m_dirs = static_cast<int>(directions.rows());
  double acc = 0.0;
  for (int m = 0; m < m_dirs; ++m) {
    const Eigen::VectorXd pa = mu.points * directions.row(m).transpose();
    const Eigen::VectorXd pb = nu.points * directions.row(m).transpose();
    acc += w2_1d(pa, pb);
  }
  return acc / static_cast<double>(m_dirs);
}

double sliced_w2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                 int num_directions, std::uint64_t seed) {
  check_pair(mu, nu);
  return sliced_w2_with_directions(
      mu, nu, sample_unit_directions(num_directions, mu.dim(), seed));
}

double exact_w2_oracle(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  check_pair(mu, nu);
  const int n = mu.size();
  if (n != nu.size())
    throw std::invalid_argument("exact_w2_oracle: unequal point counts");
  if (n > 8)
    throw std::invalid_argument("exact_w2_oracle: refusing n > 8 (factorial blow-up)");
  const Eigen::MatrixXd c = squared_cost(mu.points, nu.points);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (int i = 0; i < n; ++i) cost += c(i, perm[i]);
    best = std::min(best, cost);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

double sinkhorn_transport_cost(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                               const SinkhornOptions& opts) {
  check_pair(mu, nu);
  if (opts.epsilon <= 0.0) throw std::invalid_argument("sinkhorn: epsilon must be positive");
  return sinkhorn_plan_cost(mu.points, nu.points, opts).cost;
}

double sinkhorn_divergence(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                           const SinkhornOptions& opts) {
  check_pair(mu, nu);
  if (opts.epsilon <= 0.0) throw std::invalid_argument("sinkhorn: epsilon must be positive");
  const double xy = sinkhorn_plan_cost(mu.points, nu.points, opts).cost;
  const double xx = sinkhorn_plan_cost(mu.points, mu.points, opts).cost;
  const double yy = sinkhorn_plan_cost(nu.points, nu.points, opts).cost;
  return xy - 0.5 * (xx + yy);
}

double mmd_rbf(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double sigma) {
  check_pair(mu, nu);
  if (sigma <= 0.0) throw std::invalid_argument("mmd_rbf: sigma must be positive");
  const double inv = 1.0 / (2.0 * sigma * sigma);
  auto kernel_mean = [inv](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    double acc = 0.0;
    for (int i = 0; i < x.rows(); ++i)
      for (int j = 0; j < y.rows(); ++j)
        acc += std::exp(-(x.row(i) - y.row(j)).squaredNorm() * inv);
    return acc / static_cast<double>(x.rows() * y.rows());
  };
  return kernel_mean(mu.points, mu.points) + kernel_mean(nu.points, nu.points) -
         2.0 * kernel_mean(mu.points, nu.points);
}

double cosine_mean_discrepancy(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  check_pair(mu, nu);
  const Eigen::VectorXd ma = mu.points.colwise().mean();
  const Eigen::VectorXd mb = nu.points.colwise().mean();
  const double na = ma.norm();
  const double nb = mb.norm();
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine_mean_discrepancy: zero-mean input");
  return 1.0 - ma.dot(mb) / (na * nb);
}

double discrepancy(const DiscrepancyKind& kind, const EmpiricalMeasure& mu,
                   const EmpiricalMeasure& nu, std::uint64_t seed) {
  switch (kind.tag) {
    case DiscrepancyKind::Tag::SlicedW2:
      return sliced_w2(mu, nu, kind.num_projections, seed);
    case DiscrepancyKind::Tag::Sinkhorn: {
      SinkhornOptions opts{kind.epsilon, kind.max_iters, kind.tol};
      // Clamp tiny negatives from debiasing round-off.
      return std::max(0.0, sinkhorn_divergence(mu, nu, opts));
    }
    case DiscrepancyKind::Tag::MmdRbf:
      return std::max(0.0, mmd_rbf(mu, nu, kind.sigma));
    case DiscrepancyKind::Tag::CosineMean:
      return cosine_mean_discrepancy(mu, nu);
  }
  throw std::logic_error("unknown discrepancy kind");
}

const char* discrepancy_name(DiscrepancyKind::Tag tag) {
  switch (tag) {
    case DiscrepancyKind::Tag::SlicedW2: return "sliced_w2";
    case DiscrepancyKind::Tag::Sinkhorn: return "sinkhorn";
    case DiscrepancyKind::Tag::MmdRbf: return "mmd_rbf";
    case DiscrepancyKind::Tag::CosineMean: return "cosine_mean";
  }
  return "unknown";
}

}  // namespace digflow
