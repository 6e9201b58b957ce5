#include "digflow/synthetic.hpp"

#include <cmath>
#include <stdexcept>

#include "digflow/rng.hpp"

namespace digflow {

void TaskSpec::validate() const {
  if (latent_dim < 1 || tokens < 1 || feature_dim < 1 || chunk_len < 1 || action_dim < 1)
    throw std::invalid_argument("task spec: all dimensions must be >= 1");
  if (obs_noise < 0.0) throw std::invalid_argument("task spec: obs_noise must be >= 0");
  if (obs_shift < 0.0) throw std::invalid_argument("task spec: obs_shift must be >= 0");
  if (shortcut_frac < 0.0 || shortcut_frac > 1.0)
    throw std::invalid_argument("task spec: shortcut_frac must lie in [0,1]");
}

PerturbMode perturb_mode_from_string(const std::string& s) {
  if (s == "none") return PerturbMode::None;
  if (s == "cosine") return PerturbMode::Cosine;
  if (s == "sine") return PerturbMode::Sine;
  if (s == "both") return PerturbMode::Both;
  throw std::invalid_argument("unknown perturbation mode: " + s);
}

const char* perturb_mode_name(PerturbMode m) {
  switch (m) {
    case PerturbMode::None: return "none";
    case PerturbMode::Cosine: return "cosine";
    case PerturbMode::Sine: return "sine";
    case PerturbMode::Both: return "both";
  }
  return "unknown";
}

PerturbSpec PerturbSpec::draw(std::uint64_t seed, PerturbMode mode) {
  Rng rng(seed);
  PerturbSpec p;
  p.c1 = 0.01 + 0.5 * rng.normal();
  p.c2 = 0.01 + 0.5 * rng.normal();
  p.c3 = 0.01 + 0.5 * rng.normal();
  p.c4 = 0.01 + 0.5 * rng.normal();
  p.mode = mode;
  return p;
}

Eigen::MatrixXd apply_perturbation(const Eigen::MatrixXd& H, double t,
                                   const PerturbSpec& p) {
  double shift = 0.0;
  switch (p.mode) {
    case PerturbMode::None: return H;
    case PerturbMode::Cosine: shift = p.c1 * std::cos(p.c2 * t); break;
    case PerturbMode::Sine: shift = p.c3 * std::sin(p.c4 * t); break;
    case PerturbMode::Both:
      shift = p.c1 * std::cos(p.c2 * t) + p.c3 * std::sin(p.c4 * t);
      break;
  }
  return H.array() + shift;
}

namespace {
constexpr int kFrozenHidden = 32;
}

TaskFamily::TaskFamily(const TaskSpec& spec) : spec_(spec) {
  spec_.validate();
  Rng rng(derive_seed(spec_.seed, Stream::kInit, 0));
  const int dc = spec_.latent_dim;
  const int tok_out = spec_.tokens * spec_.feature_dim;
  const int act_out = spec_.chunk_len * spec_.action_dim;

  const double s_in = 1.0 / std::sqrt(static_cast<double>(dc));
  const double s_hid = 1.5 / std::sqrt(static_cast<double>(kFrozenHidden));

  tok_A_ = rng.normal_matrix(kFrozenHidden, dc) * s_in;
  tok_a0_ = rng.normal_vector(kFrozenHidden) * 0.1;
  tok_B_ = rng.normal_matrix(tok_out, kFrozenHidden) * s_hid;
  tok_b0_ = rng.normal_vector(tok_out) * 0.1;

  act_A_ = rng.normal_matrix(kFrozenHidden, dc) * s_in;
  act_a0_ = rng.normal_vector(kFrozenHidden) * 0.1;
  act_B_ = rng.normal_matrix(act_out, kFrozenHidden) * (2.0 * s_hid);
  act_b0_ = rng.normal_vector(act_out) * 0.1;

  shortcut_map_ = rng.normal_matrix(spec_.feature_dim, act_out) /
                  std::sqrt(static_cast<double>(act_out));
}

Sample TaskFamily::draw_sample(Rng& rng) const {
  const int T = spec_.tokens;
  const int d = spec_.feature_dim;

  const Eigen::VectorXd c = rng.normal_vector(spec_.latent_dim);
  const Eigen::VectorXd tok_h = (tok_A_ * c + tok_a0_).array().tanh();
  const Eigen::VectorXd tok_flat = tok_B_ * tok_h + tok_b0_;
  const Eigen::VectorXd act_h = (act_A_ * c + act_a0_).array().tanh();
  const Eigen::VectorXd act_flat = act_B_ * act_h + act_b0_;

  Sample s;
  s.tokens.resize(T, d);
  for (int r = 0; r < T; ++r) s.tokens.row(r) = tok_flat.segment(r * d, d).transpose();
  if (spec_.obs_noise > 0.0) s.tokens += spec_.obs_noise * rng.normal_matrix(T, d);
  if (spec_.obs_shift > 0.0) s.tokens.array() += spec_.obs_shift * rng.normal();
  s.actions = unflatten_chunk(act_flat, spec_.chunk_len, spec_.action_dim);

  s.is_shortcut = rng.uniform() < spec_.shortcut_frac;
  if (s.is_shortcut) {
    // Spurious-correlation regime: the labels come from an independent latent
    // and are readable only through the nuisance token. The task-relevant
    // tokens are decorrelated by strength-scaled noise, but the noise is
    // mean-compensated so the pooled summary looks exactly like a clean
    // sample: the corruption lives in the token geometry, not the mean.
    const Eigen::VectorXd c2 = rng.normal_vector(spec_.latent_dim);
    const Eigen::VectorXd act_h2 = (act_A_ * c2 + act_a0_).array().tanh();
    const Eigen::VectorXd act_flat2 = act_B_ * act_h2 + act_b0_;
    s.actions = unflatten_chunk(act_flat2, spec_.chunk_len, spec_.action_dim);
    const Eigen::RowVectorXd clean_mean = s.tokens.colwise().mean();
    s.tokens.row(0) = (shortcut_map_ * act_flat2).transpose();
    s.tokens.bottomRows(T - 1) +=
        spec_.shortcut_strength * rng.normal_matrix(T - 1, d);
    if (T > 1) {
      const Eigen::RowVectorXd offset = clean_mean - s.tokens.colwise().mean();
      s.tokens.bottomRows(T - 1).rowwise() +=
          offset * (static_cast<double>(T) / static_cast<double>(T - 1));
    }
  }
  return s;
}

std::vector<Sample> TaskFamily::sample_batch(int n, std::uint64_t seed) const {
  if (n < 1) throw std::invalid_argument("sample_batch: n must be >= 1");
  Rng rng(seed);
  std::vector<Sample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(draw_sample(rng));
  return out;
}

TaskFamily TaskFamily::clean_variant() const {
  TaskSpec clean = spec_;
  clean.shortcut_frac = 0.0;
  return TaskFamily(clean);
}

}  // namespace digflow
