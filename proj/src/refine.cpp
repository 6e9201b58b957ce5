#include "digflow/refine.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "digflow/rng.hpp"

namespace digflow {

void RefineConfig::validate() const {
  if (n_refine < 0) throw std::invalid_argument("refine: n_refine must be >= 0");
  if (euler_steps < 1) throw std::invalid_argument("refine: euler_steps must be >= 1");
}

ActionChunk infer(const TrainState& state, const Eigen::MatrixXd& H_raw,
                  const DigConfig& dig, const RefineConfig& cfg, RefineTrace* trace) {
  cfg.validate();
  if (!state.model.params().allFinite())
    throw std::runtime_error("infer: model parameters are not finite");

  const int T = static_cast<int>(H_raw.rows());
  const std::uint64_t noise_seed = derive_seed(cfg.seed, Stream::kRefine, 0);

  ActionChunk chunk = euler_sample(state.model, H_raw, cfg.euler_steps, noise_seed);
  for (int i = 1; i <= cfg.n_refine; ++i) {
    const Eigen::MatrixXd Z = encode_actions(state.encoder, chunk);
    const Eigen::MatrixXd Zb = centroid_broadcast(Z, T);
    const double D = discrepancy(dig.kind, EmpiricalMeasure{H_raw}, EmpiricalMeasure{Zb},
                                 derive_seed(cfg.seed, Stream::kSlice,
                                             static_cast<std::uint64_t>(i)));
    const double g = gate(D, dig.gate_cfg);
    if (trace) {
      trace->discrepancy.push_back(D);
      trace->gate.push_back(g);
    }
    const Eigen::MatrixXd Htilde =
        dig.lambda > 0.0 ? gated_update(H_raw, g, dig.lambda, state.residual) : H_raw;
    // Same base noise every round so feature changes are the only variable.
    chunk = euler_sample(state.model, Htilde, cfg.euler_steps, noise_seed);
  }
  return chunk;
}

EvalReport eval_policy(const TrainState& state, const TaskFamily& family,
                       const DigConfig& dig, const RefineConfig& cfg,
                       PerturbMode perturb, int episodes, std::uint64_t seed,
                       const EvalHooks& hooks) {
  if (episodes < 1) throw std::invalid_argument("eval_policy: episodes must be >= 1");
  const TaskFamily clean = family.clean_variant();

  EvalReport report;
  report.per_episode_error.reserve(episodes);
  double acc = 0.0;
  for (int e = 0; e < episodes; ++e) {
    const std::uint64_t ep_seed = derive_seed(seed, Stream::kEval, static_cast<std::uint64_t>(e));
    const Sample sample = clean.sample_batch(1, ep_seed)[0];
    const PerturbSpec p = PerturbSpec::draw(splitmix64(ep_seed ^ 0xabcdULL), perturb);
    const Eigen::MatrixXd H = apply_perturbation(sample.tokens, static_cast<double>(e), p);

    RefineConfig ep_cfg = cfg;
    ep_cfg.seed = ep_seed;
    RefineTrace trace;
    const ActionChunk pred = hooks.policy_override
                                 ? hooks.policy_override(sample)
                                 : infer(state, H, dig, ep_cfg, &trace);
    const double err = (pred.actions - sample.actions.actions).squaredNorm();
    report.per_episode_error.push_back(err);
    report.per_episode_gate.push_back(trace.gate.empty() ? 1.0 : trace.gate.back());
    acc += err;
  }
  report.mean_squared_error = acc / episodes;
  return report;
}

ContractionField ContractionField::random(int dim, double mu, double l_e,
                                          std::uint64_t seed) {
  if (!(mu > 0.0 && l_e >= mu))
    throw std::invalid_argument("contraction field: need 0 < mu <= L_E");
  Rng rng(seed);
  // Random orthogonal basis via QR of a Gaussian matrix.
  const Eigen::MatrixXd G = rng.normal_matrix(dim, dim);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  Eigen::MatrixXd Q = qr.householderQ();
  Eigen::VectorXd eig(dim);
  eig[0] = mu;
  eig[dim - 1] = l_e;
  for (int i = 1; i < dim - 1; ++i) eig[i] = rng.uniform(mu, l_e);

  ContractionField f;
  f.A = Q * eig.asDiagonal() * Q.transpose();
  f.A = 0.5 * (f.A + f.A.transpose());  // enforce exact symmetry
  f.z_star = rng.normal_vector(dim);
  f.mu = mu;
  f.l_e = l_e;
  return f;
}

Eigen::VectorXd fixed_gate_iterate(const ContractionField& field, double alpha,
                                   const Eigen::VectorXd& z0, int iterations,
                                   std::vector<double>* ratios) {
  const double window = 2.0 * field.mu / (field.l_e * field.l_e);
  if (!(alpha > 0.0 && alpha < window))
    throw std::invalid_argument("fixed_gate_iterate: alpha must lie in (0, 2*mu/L_E^2) = (0, " +
                                std::to_string(window) + ")");
  Eigen::VectorXd z = z0;
  double prev = (z - field.z_star).norm();
  for (int k = 0; k < iterations; ++k) {
    z -= alpha * (field.A * (z - field.z_star));
    const double cur = (z - field.z_star).norm();
    if (ratios) ratios->push_back(prev > 0.0 ? cur / prev : 0.0);
    prev = cur;
  }
  return z;
}

double estimate_rate(const std::vector<double>& ratios) {
  int count = 0;
  double log_acc = 0.0;
  for (double r : ratios) {
    if (r > 0.0) {
      log_acc += std::log(r);
      ++count;
    }
  }
  if (count < 3)
    throw std::invalid_argument("estimate_rate: need at least 3 positive ratios");
  return std::exp(log_acc / count);
}

}  // namespace digflow
