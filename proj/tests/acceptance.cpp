// Acceptance gate: one pass/fail line per criterion, nonzero exit on failure.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "digflow/config.hpp"
#include "digflow/measures.hpp"
#include "digflow/refine.hpp"
#include "digflow/rng.hpp"
#include "digflow/synthetic.hpp"
#include "digflow/trainer.hpp"
#include "digflow/verify.hpp"

using namespace digflow;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& what, const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", id, what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

EmpiricalMeasure gaussian_measure(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  return EmpiricalMeasure{rng.normal_matrix(n, d)};
}

double mean_of(const std::vector<double>& xs, std::size_t lo, std::size_t hi) {
  double acc = 0.0;
  for (std::size_t i = lo; i < hi; ++i) acc += xs[i];
  return acc / static_cast<double>(hi - lo);
}

// --------------------------------------------------------------------------

void criterion_1() {
  double worst_sliced = 0.0;
  for (std::uint64_t s = 1; s <= 10; ++s) {
    const auto mu = gaussian_measure(7, 1, s);
    const auto nu = gaussian_measure(7, 1, s + 40);
    const double ref = w2_1d(mu.points.col(0), nu.points.col(0));
    const double est = sliced_w2(mu, nu, 16, s);
    worst_sliced = std::max(worst_sliced, std::abs(est - ref) / std::max(ref, 1e-30));
  }

  Eigen::MatrixXd a(2, 2), b(2, 2);
  a << 0, 0, 1, 1;
  b << 1, 0, 0, 1;
  const double cross = exact_w2_oracle(EmpiricalMeasure{a}, EmpiricalMeasure{b});
  Eigen::MatrixXd c(3, 1), d(3, 1);
  c << 0, 1, 2;
  d << 10, 11, 12;
  const double shifted = exact_w2_oracle(EmpiricalMeasure{c}, EmpiricalMeasure{d});
  const bool oracle_ok = std::abs(cross - 1.0) == 0.0 && std::abs(shifted - 100.0) == 0.0;

  double worst_sink = 0.0;
  bool sink_ok = true;
  for (std::uint64_t s = 1; s <= 10; ++s) {
    const auto mu = gaussian_measure(5, 2, 7 * s);
    const auto nu = gaussian_measure(5, 2, 7 * s + 3);
    SinkhornOptions opts;
    opts.epsilon = 0.03;
    opts.tol = 1e-5;
    opts.max_iters = 50000;
    try {
      const double sk = sinkhorn_divergence(mu, nu, opts);
      const double ex = exact_w2_oracle(mu, nu);
      worst_sink = std::max(worst_sink, std::abs(sk - ex) / ex);
    } catch (const std::exception&) {
      sink_ok = false;
    }
  }
  sink_ok = sink_ok && worst_sink <= 0.05;

  std::ostringstream det;
  det << "sliced-vs-1d rel err " << worst_sliced << ", sinkhorn rel err " << worst_sink;
  report(1, worst_sliced <= 1e-12 && oracle_ok && sink_ok, "oracle equivalence",
         det.str());
}

void criterion_2() {
  const CheckReport rep =
      check_concentration({8, 32, 128, 512}, 200, derive_seed(42, Stream::kInit, 15));
  std::ostringstream det;
  det << rep.parameters << ", violations " << rep.violations << ", worst margin "
      << rep.worst_margin;
  report(2, rep.pass(), "sliced-W2 concentration and gate-Lipschitz propagation",
         det.str());
}

void criterion_3() {
  const CheckReport descent = check_gated_descent(1000, derive_seed(42, Stream::kInit, 11));
  const CheckReport bracket = check_bracketing(10000, derive_seed(42, Stream::kInit, 12));
  std::ostringstream det;
  det << "descent violations " << descent.violations << " (margin "
      << descent.worst_margin << "), bracketing violations " << bracket.violations;
  report(3, descent.pass() && bracket.pass(),
         "gated descent inequality and objective bracketing", det.str());
}

void criterion_4() {
  const CheckReport rep =
      check_residual_improvement(10, 200, derive_seed(42, Stream::kInit, 13));
  std::ostringstream det;
  det << "trials " << rep.trials << ", violations " << rep.violations << ", worst margin "
      << rep.worst_margin;
  report(4, rep.pass(), "aligned residual improvement over the lambda grid", det.str());
}

void criterion_5() {
  const CheckReport rep = check_contraction(50, derive_seed(42, Stream::kInit, 14));
  std::ostringstream det;
  det << "fields " << rep.trials << ", violations " << rep.violations << ", worst margin "
      << rep.worst_margin;
  report(5, rep.pass(), "fixed-gate contraction rate and fixed-point uniqueness",
         det.str());
}

void criterion_6() {
  double worst = 0.0;
  const double h = 1e-5;
  Rng pick(1234);
  for (int cfg_i = 0; cfg_i < 20; ++cfg_i) {
    MlpDims dims;
    dims.action_dim = 1 + pick.uniform_int(3);
    dims.chunk_len = 1 + pick.uniform_int(4);
    dims.feature_dim = 2 + pick.uniform_int(6);
    dims.hidden = 4 + pick.uniform_int(8);
    const int T = 1 + pick.uniform_int(5);

    VectorFieldModel model(dims);
    model.init(splitmix64(1000 + cfg_i), 0.6);
    Rng rng(splitmix64(2000 + cfg_i));
    const Eigen::VectorXd x0 = rng.normal_vector(dims.flat_action());
    const Eigen::VectorXd x1 = rng.normal_vector(dims.flat_action());
    const FlowSample s = interpolate(x0, x1, rng.uniform());
    const Eigen::MatrixXd H = rng.normal_matrix(T, dims.feature_dim);

    LossGrads g;
    per_sample_loss_with_grads(model, s, H, g);

    const Eigen::VectorXd theta = model.params();
    for (int k = 0; k < 10; ++k) {
      const int i = pick.uniform_int(static_cast<int>(theta.size()));
      Eigen::VectorXd tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      VectorFieldModel mp = model, mm = model;
      mp.set_params(tp);
      mm.set_params(tm);
      const double num = (per_sample_loss(mp, s, H) - per_sample_loss(mm, s, H)) / (2 * h);
      const double den = std::max({std::abs(num), std::abs(g.grad_params[i]), 1.0});
      worst = std::max(worst, std::abs(num - g.grad_params[i]) / den);
    }
    for (int k = 0; k < 6; ++k) {
      const int r = pick.uniform_int(T);
      const int c = pick.uniform_int(dims.feature_dim);
      Eigen::MatrixXd Hp = H, Hm = H;
      Hp(r, c) += h;
      Hm(r, c) -= h;
      const double num =
          (per_sample_loss(model, s, Hp) - per_sample_loss(model, s, Hm)) / (2 * h);
      const double den = std::max({std::abs(num), std::abs(g.grad_H(r, c)), 1.0});
      worst = std::max(worst, std::abs(num - g.grad_H(r, c)) / den);
    }
  }
  std::ostringstream det;
  det << "20 configurations, max rel err " << worst;
  report(6, worst <= 1e-5, "analytic gradients match central finite differences",
         det.str());
}

// Independent plain conditional-flow-matching loop: sample a batch, draw
// (t, x0) per element, average the regression gradients, AdamW on theta.
Eigen::VectorXd plain_cfm_train(const TaskFamily& family, const TrainConfig& cfg,
                                int steps) {
  MlpDims dims;
  dims.action_dim = family.spec().action_dim;
  dims.chunk_len = family.spec().chunk_len;
  dims.feature_dim = family.spec().feature_dim;
  dims.hidden = cfg.hidden;
  VectorFieldModel model(dims);
  model.init(derive_seed(cfg.seed, Stream::kInit, 1));
  AdamState opt = AdamState::zero(model.num_params());
  const int B = cfg.batch_size;

  for (int step = 0; step < steps; ++step) {
    const auto samples = family.sample_batch(
        B, derive_seed(cfg.seed, Stream::kBatch, static_cast<std::uint64_t>(step)));
    Rng flow_rng(derive_seed(cfg.seed, Stream::kFlow, static_cast<std::uint64_t>(step)));
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.num_params());
    for (int i = 0; i < B; ++i) {
      const double t = flow_rng.uniform();
      const Eigen::VectorXd x0 = flow_rng.normal_vector(dims.flat_action());
      const FlowSample fs = interpolate(x0, flatten_chunk(samples[i].actions), t);
      LossGrads lg;
      per_sample_loss_with_grads(model, fs, samples[i].tokens, lg);
      grad += (1.0 / B) * lg.grad_params;
    }
    Eigen::VectorXd theta = model.params();
    adamw_step(theta, grad, opt, cfg.optim);
    model.set_params(theta);
  }
  return model.params();
}

void criterion_7() {
  TaskSpec task;
  task.seed = 5;
  TrainConfig cfg;
  cfg.steps = 150;
  cfg.batch_size = 16;
  cfg.hidden = 16;
  cfg.seed = 5;
  cfg.dig.gate_enabled = false;
  cfg.dig.residual_enabled = false;
  const TaskFamily family(task);

  TrainState state = init_state(task, cfg);
  train(state, family, cfg);
  const Eigen::VectorXd oracle = plain_cfm_train(family, cfg, cfg.steps);
  const bool bitwise = (state.model.params() - oracle).norm() == 0.0;

  const std::string p1 = "/tmp/digflow_accept_ckpt1.bin";
  const std::string p2 = "/tmp/digflow_accept_ckpt2.bin";
  checkpoint_save(state, p1);
  const TrainState loaded = checkpoint_load(p1);
  checkpoint_save(loaded, p2);
  const auto slurp = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)),
                       std::istreambuf_iterator<char>());
  };
  const bool bytes_ok = !slurp(p1).empty() && slurp(p1) == slurp(p2) &&
                        (loaded.model.params() - state.model.params()).norm() == 0.0;
  std::remove(p1.c_str());
  std::remove(p2.c_str());

  TrainConfig half = cfg;
  half.steps = 75;
  TrainState split = init_state(task, cfg);
  train(split, family, half);
  train(split, family, half);
  const bool resume_ok = (split.model.params() - state.model.params()).norm() == 0.0;

  std::ostringstream det;
  det << "cfm bitwise " << (bitwise ? "yes" : "NO") << ", checkpoint bytes "
      << (bytes_ok ? "exact" : "DIFFER") << ", split-resume "
      << (resume_ok ? "exact" : "DIFFER");
  report(7, bitwise && bytes_ok && resume_ok,
         "disabled gate/residual reduces to plain flow matching", det.str());
}

// Reference toy configuration shared by criteria 8-10.
TaskSpec reference_task(std::uint64_t seed) {
  TaskSpec task;
  task.shortcut_frac = 0.3;
  task.seed = seed;
  return task;
}

TrainConfig reference_train(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.steps = 2000;
  cfg.batch_size = 64;
  cfg.hidden = 64;
  cfg.optim.lr = 5e-3;
  cfg.seed = seed;
  return cfg;
}

void criterion_8() {
  const std::uint64_t run_seed = derive_seed(1, Stream::kInit, 9000);
  // Clean task: shortcut labels are irreducible noise that floors the loss.
  TaskSpec task = reference_task(run_seed);
  task.shortcut_frac = 0.0;
  const TrainConfig cfg = reference_train(run_seed);
  const TaskFamily family(task);
  TrainState state = init_state(task, cfg);
  const MetricLog log = train(state, family, cfg);

  std::vector<double> loss, disc;
  for (const auto& m : log.records) {
    loss.push_back(m.raw_loss);
    disc.push_back(m.mean_discrepancy);
  }
  const std::size_t n = loss.size();
  const double loss_init = loss.front();
  const double loss_tail = mean_of(loss, n - n / 10, n);
  const double d_head = mean_of(disc, 0, n / 20);
  const double d_tail = mean_of(disc, n - n / 10, n);

  const bool ok = d_tail > 0.0 && d_tail > 0.1 * d_head && loss_tail < 0.1 * loss_init;
  std::ostringstream det;
  det << "loss " << loss_init << " -> " << loss_tail << " (ratio " << loss_tail / loss_init
      << "), mean D " << d_head << " -> " << d_tail << " (ratio " << d_tail / d_head << ")";
  report(8, ok, "transport cost stays alive while the loss collapses", det.str());
}

struct RobustnessResults {
  std::vector<TrainState> transport_states;  // one per seed
  std::vector<std::uint64_t> run_seeds;
  double transport_mse = 0.0;
  double fixed_mse = 0.0;
  double ungated_mse = 0.0;
  double gate_clean = 0.0;
  double gate_shortcut = 0.0;
};

double eval_perturbed(const TrainState& state, const TaskFamily& family,
                      const DigConfig& dig, int n_refine, std::uint64_t run_seed) {
  RefineConfig rc;
  rc.n_refine = n_refine;
  const EvalReport rep = eval_policy(state, family, dig, rc, PerturbMode::Both, 128,
                                     derive_seed(run_seed, Stream::kEval, 77));
  return rep.mean_squared_error;
}

RobustnessResults run_robustness() {
  RobustnessResults out;
  const int num_seeds = 5;
  double tr = 0.0, fx = 0.0, un = 0.0;
  double g_clean = 0.0, g_short = 0.0;
  long n_clean = 0, n_short = 0;

  for (int s = 0; s < num_seeds; ++s) {
    const std::uint64_t run_seed = derive_seed(42, Stream::kInit, 9000 + s);
    out.run_seeds.push_back(run_seed);
    const TaskSpec task = reference_task(run_seed);
    const TaskFamily family(task);

    TrainConfig transport_cfg = reference_train(run_seed);
    TrainState transport = init_state(task, transport_cfg);
    train(transport, family, transport_cfg);
    tr += eval_perturbed(transport, family, transport_cfg.dig, 0, run_seed);

    TrainConfig fixed_cfg = transport_cfg;
    fixed_cfg.dig.gate_strategy = GateStrategy::Fixed;
    fixed_cfg.dig.fixed_gate = 0.5;
    TrainState fixed = init_state(task, fixed_cfg);
    train(fixed, family, fixed_cfg);
    fx += eval_perturbed(fixed, family, fixed_cfg.dig, 0, run_seed);

    TrainConfig ungated_cfg = transport_cfg;
    ungated_cfg.dig.gate_enabled = false;
    TrainState ungated = init_state(task, ungated_cfg);
    train(ungated, family, ungated_cfg);
    un += eval_perturbed(ungated, family, ungated_cfg.dig, 0, run_seed);

    // Gate separation with the trained transport encoder.
    const auto batch = family.sample_batch(200, derive_seed(run_seed, Stream::kEval, 500));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Eigen::MatrixXd Z = encode_actions(transport.encoder, batch[i].actions);
      const Eigen::MatrixXd Zb = centroid_broadcast(Z, task.tokens);
      const double D =
          discrepancy(transport_cfg.dig.kind, EmpiricalMeasure{batch[i].tokens},
                      EmpiricalMeasure{Zb}, splitmix64(run_seed + i));
      const double g = gate(D, transport_cfg.dig.gate_cfg);
      if (batch[i].is_shortcut) {
        g_short += g;
        ++n_short;
      } else {
        g_clean += g;
        ++n_clean;
      }
    }
    out.transport_states.push_back(std::move(transport));
  }

  out.transport_mse = tr / num_seeds;
  out.fixed_mse = fx / num_seeds;
  out.ungated_mse = un / num_seeds;
  out.gate_clean = g_clean / n_clean;
  out.gate_shortcut = g_short / n_short;
  return out;
}

void criterion_9(const RobustnessResults& r) {
  const bool gate_dir = r.gate_clean > r.gate_shortcut;
  const bool vs_fixed = r.transport_mse <= 0.9 * r.fixed_mse;
  const bool vs_ungated = r.transport_mse <= 0.9 * r.ungated_mse;
  std::ostringstream det;
  det << "gate clean " << r.gate_clean << " vs shortcut " << r.gate_shortcut
      << "; perturbed mse transport " << r.transport_mse << ", fixed " << r.fixed_mse
      << ", ungated " << r.ungated_mse;
  report(9, gate_dir && vs_fixed && vs_ungated,
         "transport gating suppresses the shortcut and survives perturbation",
         det.str());
}

void criterion_10(const RobustnessResults& r) {
  std::vector<double> mse(9, 0.0);
  for (std::size_t s = 0; s < r.transport_states.size(); ++s) {
    const TaskSpec task = reference_task(r.run_seeds[s]);
    const TaskFamily family(task);
    const DigConfig dig = reference_train(r.run_seeds[s]).dig;
    for (int n = 0; n <= 8; ++n)
      mse[n] += eval_perturbed(r.transport_states[s], family, dig, n, r.run_seeds[s]);
  }
  for (auto& v : mse) v /= static_cast<double>(r.transport_states.size());

  const double best = *std::min_element(mse.begin(), mse.end());
  const bool saturates = mse[3] <= 1.02 * best;
  const bool beats_ungated = mse[0] < r.ungated_mse;
  std::ostringstream det;
  det << "mse by n_refine:";
  for (int n = 0; n <= 8; ++n) det << " " << mse[n];
  det << "; n=3 vs best " << mse[3] / best << ", n=0 vs ungated " << mse[0] << "/"
      << r.ungated_mse;
  report(10, saturates && beats_ungated, "refinement saturates near three rounds",
         det.str());
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  const RobustnessResults r = run_robustness();
  criterion_9(r);
  criterion_10(r);
  std::printf("%d/10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
