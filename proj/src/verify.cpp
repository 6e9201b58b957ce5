#include "digflow/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "digflow/flow.hpp"
#include "digflow/gating.hpp"
#include "digflow/refine.hpp"
#include "digflow/rng.hpp"

namespace digflow {

namespace {

class Timer {
 public:
  Timer() : t0_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                     t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

void track(CheckReport& rep, double margin, double tol = 0.0) {
  rep.worst_margin = std::min(rep.worst_margin, margin);
  if (margin < -tol) rep.violations += 1;
}

}  // namespace

std::string CheckReport::to_json() const {
  nlohmann::json j{{"name", name},
                   {"trials", trials},
                   {"violations", violations},
                   {"worst_margin", worst_margin},
                   {"parameters", parameters},
                   {"wall_ms", wall_ms},
                   {"pass", pass()}};
  return j.dump();
}

CheckReport check_gated_descent(int trials, std::uint64_t seed) {
  Timer timer;
  CheckReport rep;
  rep.name = "gated_descent";
  rep.trials = trials;
  rep.worst_margin = std::numeric_limits<double>::infinity();

  const int dim = 6;
  const int terms = 5;
  const GateConfig gate_cfg;
  Rng rng(seed);

  for (int trial = 0; trial < trials; ++trial) {
    std::vector<Eigen::MatrixXd> A(terms);
    std::vector<Eigen::VectorXd> b(terms);
    std::vector<double> g(terms);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
    for (int i = 0; i < terms; ++i) {
      A[i] = rng.normal_matrix(dim, dim);
      b[i] = rng.normal_vector(dim);
      g[i] = rng.uniform(gate_cfg.g_min, 1.0);
      hess += (2.0 * g[i] / terms) * A[i].transpose() * A[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hess);
    const double l_j = es.eigenvalues().maxCoeff();

    const Eigen::VectorXd theta = rng.normal_vector(dim);
    auto value = [&](const Eigen::VectorXd& th) {
      double v = 0.0;
      for (int i = 0; i < terms; ++i) v += g[i] * (A[i] * th - b[i]).squaredNorm();
      return v / terms;
    };
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < terms; ++i)
      grad += (2.0 * g[i] / terms) * A[i].transpose() * (A[i] * theta - b[i]);

    const double alpha = rng.uniform(0.05, 1.95) / l_j;
    const Eigen::VectorXd theta_plus = theta - alpha * grad;
    const double rhs = value(theta) - alpha * (1.0 - alpha * l_j / 2.0) * grad.squaredNorm();
    track(rep, rhs - value(theta_plus), 1e-10);
  }

  std::ostringstream params;
  params << "dim=" << dim << " terms=" << terms << " tol=1e-10 seed=" << seed;
  rep.parameters = params.str();
  rep.wall_ms = timer.ms();
  return rep;
}

CheckReport check_bracketing(int trials, std::uint64_t seed) {
  Timer timer;
  CheckReport rep;
  rep.name = "bracketing";
  rep.trials = trials;
  rep.worst_margin = std::numeric_limits<double>::infinity();

  const GateConfig gate_cfg;
  Rng rng(seed);
  for (int trial = 0; trial < trials; ++trial) {
    const int batch = 2 + rng.uniform_int(30);
    double sum_l = 0.0, sum_j = 0.0;
    for (int i = 0; i < batch; ++i) {
      const double loss = std::abs(rng.normal()) * 4.0;
      const double g = rng.uniform(gate_cfg.g_min, 1.0);
      sum_l += loss;
      sum_j += g * loss;
    }
    const double mean_l = sum_l / batch;
    const double mean_j = sum_j / batch;
    track(rep, mean_j - gate_cfg.g_min * mean_l, 1e-12);
    track(rep, mean_l - mean_j, 1e-12);
  }

  rep.parameters = "g_min=0.05 tol=1e-12 seed=" + std::to_string(seed);
  rep.wall_ms = timer.ms();
  return rep;
}

CheckReport check_residual_improvement(int grid_size, int trials, std::uint64_t seed) {
  Timer timer;
  CheckReport rep;
  rep.name = "residual_improvement";
  rep.trials = trials;
  rep.worst_margin = std::numeric_limits<double>::infinity();

  MlpDims dims;
  dims.action_dim = 2;
  dims.chunk_len = 2;
  dims.feature_dim = 4;
  dims.hidden = 8;
  const int tokens = 3;
  const int batch = 16;
  const GateConfig gate_cfg;

  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(seed, Stream::kInit, static_cast<std::uint64_t>(trial)));
    VectorFieldModel model(dims);
    model.init(splitmix64(seed + trial), 0.6);

    std::vector<Eigen::MatrixXd> H(batch), R(batch), grad(batch);
    std::vector<FlowSample> fs(batch);
    std::vector<double> g(batch), loss0(batch);
    double alpha0 = 0.0, c_sq = 0.0;
    for (int i = 0; i < batch; ++i) {
      H[i] = rng.normal_matrix(tokens, dims.feature_dim);
      const Eigen::VectorXd x0 = rng.normal_vector(dims.flat_action());
      const Eigen::VectorXd x1 = rng.normal_vector(dims.flat_action());
      fs[i] = interpolate(x0, x1, rng.uniform());
      g[i] = gate(std::abs(rng.normal()), gate_cfg);

      LossGrads lg;
      loss0[i] = per_sample_loss_with_grads(model, fs[i], H[i], lg);
      grad[i] = lg.grad_H;
      const double gn = grad[i].norm();
      const double hn = H[i].norm();
      if (gn < 1e-12) {
        R[i] = Eigen::MatrixXd::Zero(tokens, dims.feature_dim);
      } else {
        R[i] = -grad[i] / gn * hn;  // aligned test field, ||R(H)||_F = ||H||_F
        alpha0 += g[i] * gn * hn;
      }
      c_sq += hn * hn;
    }
    alpha0 /= batch;
    c_sq /= batch;
    if (alpha0 <= 0.0)
      throw std::runtime_error("check_residual_improvement: degenerate instance (alpha0 <= 0)");

    auto mean_loss_at = [&](double lam) {
      double acc = 0.0;
      for (int i = 0; i < batch; ++i)
        acc += per_sample_loss(model, fs[i], H[i] + lam * g[i] * R[i]);
      return acc / batch;
    };
    auto max_quotient = [&](double lam) {
      double q = 0.0;
      for (int i = 0; i < batch; ++i) {
        const Eigen::MatrixXd delta = lam * g[i] * R[i];
        const double dn2 = delta.squaredNorm();
        if (dn2 < 1e-20) continue;
        const double lin = (grad[i].array() * delta.array()).sum();
        const double rem = per_sample_loss(model, fs[i], H[i] + delta) - loss0[i] - lin;
        q = std::max(q, 2.0 * rem / dn2);
      }
      return q;
    };

    // Empirical smoothness constant: max difference quotient over the grid
    // scales along the actual update directions, 1.5x safety, fixed point in
    // lambda_max since larger steps can reveal more curvature.
    double l_hat = 1e-8;
    double lam_max = 0.0;
    for (int pass = 0; pass < 5; ++pass) {
      const double candidate = 2.0 * alpha0 / (l_hat * c_sq);
      if (lam_max > 0.0 && candidate >= lam_max * 0.999) break;
      lam_max = candidate;
      double q = 1e-8;
      for (int j = 1; j <= grid_size; ++j)
        q = std::max(q, max_quotient(lam_max * j / grid_size));
      l_hat = std::max(l_hat, 1.5 * q);
    }
    lam_max = 2.0 * alpha0 / (l_hat * c_sq);

    const double base = 0.0;
    (void)base;
    double mean_l0 = 0.0;
    for (int i = 0; i < batch; ++i) mean_l0 += loss0[i];
    mean_l0 /= batch;
    for (int j = 1; j <= grid_size; ++j) {
      const double lam = lam_max * j / grid_size;
      const double improvement = mean_l0 - mean_loss_at(lam);
      track(rep, improvement - 0.5 * alpha0 * lam, 1e-12);
    }
  }

  std::ostringstream params;
  params << "grid=" << grid_size << " batch=" << batch << " safety=1.5 seed=" << seed;
  rep.parameters = params.str();
  rep.wall_ms = timer.ms();
  return rep;
}

CheckReport check_contraction(int trials, std::uint64_t seed) {
  Timer timer;
  CheckReport rep;
  rep.name = "contraction";
  rep.trials = trials;
  rep.worst_margin = std::numeric_limits<double>::infinity();

  const int dim = 6;
  const int iterations = 60;
  Rng rng(seed);
  for (int trial = 0; trial < trials; ++trial) {
    const double mu = rng.uniform(0.2, 1.0);
    const double l_e = mu * rng.uniform(1.0, 4.0);
    // Last trial probes the edge of the admissible step-size window.
    const double frac = (trial == trials - 1) ? 1.0 - 1e-6 : rng.uniform(0.05, 0.95);
    const double alpha = frac * 2.0 * mu / (l_e * l_e);
    const double rho = std::sqrt(1.0 - 2.0 * alpha * mu + alpha * alpha * l_e * l_e);

    const ContractionField field =
        ContractionField::random(dim, mu, l_e, splitmix64(seed ^ (trial + 1)));
    const Eigen::VectorXd z0 = field.z_star + rng.normal_vector(dim);
    const double d0 = (z0 - field.z_star).norm();

    std::vector<double> ratios;
    Eigen::VectorXd z = z0;
    double dist = d0;
    bool cumulative_ok = true;
    // Below this distance the iterate has hit the fixed point to machine
    // precision and per-step ratios are rounding noise.
    const double floor = 1e-12 * (d0 + field.z_star.norm());
    for (int k = 1; k <= iterations; ++k) {
      z -= alpha * (field.A * (z - field.z_star));
      const double cur = (z - field.z_star).norm();
      if (dist <= floor) break;
      ratios.push_back(cur / dist);
      if (cur > std::pow(rho, k) * d0 + 1e-9) cumulative_ok = false;
      dist = cur;
    }
    double margin = std::numeric_limits<double>::infinity();
    for (double r : ratios) margin = std::min(margin, rho + 1e-9 - r);
    if (!cumulative_ok) margin = std::min(margin, -1.0);
    track(rep, margin);

    // Uniqueness: a second initialization lands on the same fixed point.
    if (trial < 5) {
      const Eigen::VectorXd z0b = field.z_star + 3.0 * rng.normal_vector(dim);
      Eigen::VectorXd za = z0, zb = z0b;
      const int settle = std::min(
          200000, static_cast<int>(std::ceil(std::log(1e-10) / std::log(std::min(rho, 0.999999)))));
      for (int k = 0; k < settle; ++k) {
        za -= alpha * (field.A * (za - field.z_star));
        zb -= alpha * (field.A * (zb - field.z_star));
      }
      track(rep, 1e-8 - (za - zb).norm());
    }
  }

  std::ostringstream params;
  params << "dim=" << dim << " iters=" << iterations << " slack=1e-9 seed=" << seed;
  rep.parameters = params.str();
  rep.wall_ms = timer.ms();
  return rep;
}

CheckReport check_concentration(const std::vector<int>& m_values, int repeats,
                                std::uint64_t seed) {
  Timer timer;
  CheckReport rep;
  rep.name = "concentration";
  rep.trials = static_cast<int>(m_values.size()) * repeats;
  rep.worst_margin = std::numeric_limits<double>::infinity();

  const GateConfig gate_cfg;
  Rng rng(seed);
  // Fixed measure pair inside a ball of radius 2.
  const int n = 6, d = 3;
  Eigen::MatrixXd xa = rng.normal_matrix(n, d);
  Eigen::MatrixXd xb = rng.normal_matrix(n, d);
  xa *= 2.0 / std::max(xa.rowwise().norm().maxCoeff(), 1e-12);
  xb *= 2.0 / std::max(xb.rowwise().norm().maxCoeff(), 1e-12);
  const EmpiricalMeasure mu{xa}, nu{xb};

  std::vector<double> log_m, log_sd;
  for (int m : m_values) {
    std::vector<double> estimates(repeats);
    double mean = 0.0;
    for (int r = 0; r < repeats; ++r) {
      estimates[r] = sliced_w2(mu, nu, m, derive_seed(seed, Stream::kSlice,
                                                      static_cast<std::uint64_t>(m * 100000 + r)));
      mean += estimates[r];
    }
    mean /= repeats;
    double var = 0.0;
    for (double e : estimates) var += (e - mean) * (e - mean);
    var /= (repeats - 1);
    log_m.push_back(std::log(static_cast<double>(m)));
    log_sd.push_back(0.5 * std::log(var));

    // Gate error inherits the Lipschitz bound exactly, every repeat.
    const double g_mean = gate(mean, gate_cfg);
    for (double e : estimates) {
      const double lhs = std::abs(gate(e, gate_cfg) - g_mean);
      track(rep, gate_cfg.tau * std::abs(e - mean) - lhs, 1e-12);
    }
  }

  // Least-squares slope of log stddev against log M.
  const int k = static_cast<int>(log_m.size());
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < k; ++i) { mx += log_m[i]; my += log_sd[i]; }
  mx /= k; my /= k;
  double sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < k; ++i) {
    sxx += (log_m[i] - mx) * (log_m[i] - mx);
    sxy += (log_m[i] - mx) * (log_sd[i] - my);
  }
  const double slope = sxy / sxx;
  track(rep, slope - (-0.65));
  track(rep, (-0.35) - slope);

  std::ostringstream params;
  params << "repeats=" << repeats << " slope=" << slope << " window=[-0.65,-0.35] seed=" << seed;
  rep.parameters = params.str();
  rep.wall_ms = timer.ms();
  return rep;
}

std::vector<CheckReport> run_all_checks(std::uint64_t seed) {
  std::vector<CheckReport> reports;
  reports.push_back(check_gated_descent(1000, derive_seed(seed, Stream::kInit, 11)));
  reports.push_back(check_bracketing(10000, derive_seed(seed, Stream::kInit, 12)));
  reports.push_back(check_residual_improvement(8, 200, derive_seed(seed, Stream::kInit, 13)));
  reports.push_back(check_contraction(50, derive_seed(seed, Stream::kInit, 14)));
  reports.push_back(check_concentration({8, 32, 128, 512}, 200,
                                        derive_seed(seed, Stream::kInit, 15)));
  return reports;
}

}  // namespace digflow
