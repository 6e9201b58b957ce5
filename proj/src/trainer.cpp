#include "digflow/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "digflow/rng.hpp"

namespace digflow {

GateStrategy gate_strategy_from_string(const std::string& s) {
  if (s == "transport") return GateStrategy::Transport;
  if (s == "fixed") return GateStrategy::Fixed;
  if (s == "random") return GateStrategy::Random;
  throw std::invalid_argument("unknown gate strategy: " + s);
}

const char* gate_strategy_name(GateStrategy g) {
  switch (g) {
    case GateStrategy::Transport: return "transport";
    case GateStrategy::Fixed: return "fixed";
    case GateStrategy::Random: return "random";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("train config: steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(optim.lr > 0.0)) throw std::invalid_argument("train config: learning rate must be > 0");
  dig.gate_cfg.validate();
}

void MetricLog::append(const StepMetrics& m) {
  if (!records.empty() && m.step <= records.back().step)
    throw std::invalid_argument("metric log: steps must be strictly increasing");
  records.push_back(m);
}

void MetricLog::write_jsonl(std::ostream& os) const {
  for (const auto& m : records) {
    nlohmann::json j{{"step", m.step},
                     {"mean_D", m.mean_discrepancy},
                     {"mean_g", m.mean_gate},
                     {"loss", m.raw_loss},
                     {"gated_objective", m.gated_objective},
                     {"wall_ms", m.wall_ms}};
    os << j.dump() << "\n";
  }
}

void adamw_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& st,
                const OptimConfig& cfg) {
  if (params.size() != grad.size() || params.size() != st.m.size())
    throw std::invalid_argument("adamw_step: size mismatch");
  st.t += 1;
  st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * grad;
  st.v = cfg.beta2 * st.v.array().matrix() +
         (1.0 - cfg.beta2) * grad.array().square().matrix();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  const Eigen::ArrayXd mhat = st.m.array() / bc1;
  const Eigen::ArrayXd vhat = st.v.array() / bc2;
  params.array() -= cfg.lr * (mhat / (vhat.sqrt() + cfg.eps));
  params.array() -= cfg.lr * cfg.weight_decay * params.array();
}

Eigen::MatrixXd centroid_broadcast(const Eigen::MatrixXd& Z, int T) {
  if (Z.rows() < 1) throw std::invalid_argument("centroid_broadcast: empty input");
  if (T < 1) throw std::invalid_argument("centroid_broadcast: T must be >= 1");
  const Eigen::RowVectorXd centroid = Z.colwise().mean();
  return centroid.replicate(T, 1);
}

TrainState init_state(const TaskSpec& task, const TrainConfig& cfg) {
  cfg.validate();
  task.validate();
  MlpDims dims;
  dims.action_dim = task.action_dim;
  dims.chunk_len = task.chunk_len;
  dims.feature_dim = task.feature_dim;
  dims.hidden = cfg.hidden;

  TrainState st;
  st.seed = cfg.seed;
  st.model = VectorFieldModel(dims);
  st.model.init(derive_seed(cfg.seed, Stream::kInit, 1));
  Rng enc_rng(derive_seed(cfg.seed, Stream::kInit, 2));
  st.encoder.E = enc_rng.normal_matrix(task.feature_dim, task.action_dim) /
                 std::sqrt(static_cast<double>(task.action_dim));
  st.residual = ResidualOperator::zero(task.feature_dim, cfg.dig.spectral_bound);
  st.opt_model = AdamState::zero(st.model.num_params());
  st.opt_encoder = AdamState::zero(static_cast<int>(st.encoder.E.size()));
  st.opt_residual = AdamState::zero(task.feature_dim * task.feature_dim + task.feature_dim);
  return st;
}

namespace {

struct StepGradients {
  Eigen::VectorXd model;
  Eigen::MatrixXd res_W;
  Eigen::VectorXd res_b;
};

// Forward + backward for one gated training step, without touching state.
void compute_step(const TrainState& state, const TaskFamily& family,
                  const TrainConfig& cfg, const TrainHooks& hooks,
                  StepGradients& grads, StepMetrics& metrics) {
  const int B = cfg.batch_size;
  const int T = family.spec().tokens;
  const int d = family.spec().feature_dim;
  const auto& dig = cfg.dig;

  const auto samples = family.sample_batch(B, derive_seed(state.seed, Stream::kBatch,
                                                          static_cast<std::uint64_t>(state.step)));
  Rng flow_rng(derive_seed(state.seed, Stream::kFlow, static_cast<std::uint64_t>(state.step)));
  Rng gate_rng(derive_seed(state.seed, Stream::kGate, static_cast<std::uint64_t>(state.step)));
  const std::uint64_t slice_base =
      derive_seed(state.seed, Stream::kSlice, static_cast<std::uint64_t>(state.step));

  grads.model = Eigen::VectorXd::Zero(state.model.num_params());
  grads.res_W = Eigen::MatrixXd::Zero(d, d);
  grads.res_b = Eigen::VectorXd::Zero(d);

  // Discrepancies first (needed up front for the batch-pooled gate mode).
  std::vector<double> discrepancies(B, 0.0);
  for (int i = 0; i < B; ++i) {
    const Eigen::MatrixXd Z = encode_actions(state.encoder, samples[i].actions);
    const Eigen::MatrixXd Zb = centroid_broadcast(Z, T);
    discrepancies[i] = discrepancy(dig.kind, EmpiricalMeasure{samples[i].tokens},
                                   EmpiricalMeasure{Zb}, splitmix64(slice_base + i));
  }

  double pooled_gate = 1.0;
  if (dig.batch_pooled_gate) {
    double mean_d = 0.0;
    for (double v : discrepancies) mean_d += v;
    mean_d /= B;
    pooled_gate = gate(mean_d, dig.gate_cfg);
  }

  double sum_d = 0.0, sum_g = 0.0, sum_loss = 0.0, sum_obj = 0.0;
  for (int i = 0; i < B; ++i) {
    double g = 1.0;
    if (dig.gate_enabled) {
      switch (dig.gate_strategy) {
        case GateStrategy::Transport:
          g = dig.batch_pooled_gate ? pooled_gate : gate(discrepancies[i], dig.gate_cfg);
          break;
        case GateStrategy::Fixed:
          g = dig.fixed_gate;
          break;
        case GateStrategy::Random:
          g = gate_rng.uniform();
          break;
      }
    }
    if (hooks.gate_override) g = *hooks.gate_override;

    const Eigen::MatrixXd& H = samples[i].tokens;
    const Eigen::MatrixXd Htilde =
        dig.residual_enabled ? gated_update(H, g, dig.lambda, state.residual) : H;

    const double t = flow_rng.uniform();
    const Eigen::VectorXd x0 = flow_rng.normal_vector(state.model.dims().flat_action());
    const Eigen::VectorXd x1 = flatten_chunk(samples[i].actions);
    const FlowSample fs = interpolate(x0, x1, t);

    LossGrads lg;
    const double loss = per_sample_loss_with_grads(state.model, fs, Htilde, lg);
    if (!std::isfinite(loss))
      throw std::runtime_error("train_step: non-finite loss at step " +
                               std::to_string(state.step) + ", batch element " +
                               std::to_string(i));

    // Gate is a stopped constant: it scales the objective and the residual
    // path but receives no gradient itself.
    grads.model += (g / B) * lg.grad_params;
    if (dig.residual_enabled) {
      const double w = g * dig.lambda * g / B;  // objective weight times path factor
      grads.res_W += w * lg.grad_H.transpose() * H;
      grads.res_b += w * lg.grad_H.colwise().sum().transpose();
    }

    sum_d += discrepancies[i];
    sum_g += g;
    sum_loss += loss;
    sum_obj += g * loss;
  }

  metrics.step = state.step;
  metrics.mean_discrepancy = sum_d / B;
  metrics.mean_gate = sum_g / B;
  metrics.raw_loss = sum_loss / B;
  metrics.gated_objective = sum_obj / B;
}

}  // namespace

StepMetrics train_step(TrainState& state, const TaskFamily& family,
                       const TrainConfig& cfg, const TrainHooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  StepGradients grads;
  StepMetrics metrics;
  compute_step(state, family, cfg, hooks, grads, metrics);

  Eigen::VectorXd theta = state.model.params();
  adamw_step(theta, grads.model, state.opt_model, cfg.optim);
  state.model.set_params(theta);

  // Encoder: stop-gradient blocks the only path from E into J, so the update
  // is decoupled weight decay alone.
  Eigen::Map<Eigen::VectorXd> enc(state.encoder.E.data(), state.encoder.E.size());
  Eigen::VectorXd enc_params = enc;
  adamw_step(enc_params, Eigen::VectorXd::Zero(enc_params.size()), state.opt_encoder,
             cfg.optim);
  enc = enc_params;

  if (cfg.dig.residual_enabled) {
    const int d = static_cast<int>(state.residual.b.size());
    Eigen::VectorXd res_params(d * d + d);
    res_params.head(d * d) =
        Eigen::Map<const Eigen::VectorXd>(state.residual.W.data(), d * d);
    res_params.tail(d) = state.residual.b;
    Eigen::VectorXd res_grad(d * d + d);
    res_grad.head(d * d) = Eigen::Map<const Eigen::VectorXd>(grads.res_W.data(), d * d);
    res_grad.tail(d) = grads.res_b;
    adamw_step(res_params, res_grad, state.opt_residual, cfg.optim);
    Eigen::Map<Eigen::VectorXd>(state.residual.W.data(), d * d) = res_params.head(d * d);
    state.residual.b = res_params.tail(d);
    spectral_project(state.residual);
  }

  state.step += 1;
  const auto t1 = std::chrono::steady_clock::now();
  metrics.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  return metrics;
}

MetricLog train(TrainState& state, const TaskFamily& family, const TrainConfig& cfg) {
  cfg.validate();
  MetricLog log;
  for (int s = 0; s < cfg.steps; ++s) log.append(train_step(state, family, cfg));
  return log;
}

Eigen::VectorXd objective_model_grad(const TrainState& state, const TaskFamily& family,
                                     const TrainConfig& cfg, const TrainHooks& hooks) {
  StepGradients grads;
  StepMetrics metrics;
  compute_step(state, family, cfg, hooks, grads, metrics);
  return grads.model;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr char kMagic[4] = {'D', 'I', 'G', 'F'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_vec(const Eigen::VectorXd& v) {
    put<std::int64_t>(v.size());
    buf_.append(reinterpret_cast<const char*>(v.data()),
                static_cast<std::size_t>(v.size()) * sizeof(double));
  }
  void put_mat(const Eigen::MatrixXd& m) {
    put<std::int64_t>(m.rows());
    put<std::int64_t>(m.cols());
    buf_.append(reinterpret_cast<const char*>(m.data()),
                static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}
  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  Eigen::VectorXd get_vec() {
    const auto n = get<std::int64_t>();
    need(static_cast<std::size_t>(n) * sizeof(double));
    Eigen::VectorXd v(n);
    std::memcpy(v.data(), buf_.data() + pos_, static_cast<std::size_t>(n) * sizeof(double));
    pos_ += static_cast<std::size_t>(n) * sizeof(double);
    return v;
  }
  Eigen::MatrixXd get_mat() {
    const auto r = get<std::int64_t>();
    const auto c = get<std::int64_t>();
    need(static_cast<std::size_t>(r * c) * sizeof(double));
    Eigen::MatrixXd m(r, c);
    std::memcpy(m.data(), buf_.data() + pos_,
                static_cast<std::size_t>(r * c) * sizeof(double));
    pos_ += static_cast<std::size_t>(r * c) * sizeof(double);
    return m;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

void put_adam(Writer& w, const AdamState& st) {
  w.put<std::int64_t>(st.t);
  w.put_vec(st.m);
  w.put_vec(st.v);
}

AdamState get_adam(Reader& r) {
  AdamState st;
  st.t = r.get<std::int64_t>();
  st.m = r.get_vec();
  st.v = r.get_vec();
  return st;
}

}  // namespace

void checkpoint_save(const TrainState& state, const std::string& path) {
  Writer w;
  w.put(kMagic);
  w.put<std::uint32_t>(kVersion);
  const MlpDims& dims = state.model.dims();
  w.put<std::int32_t>(dims.action_dim);
  w.put<std::int32_t>(dims.chunk_len);
  w.put<std::int32_t>(dims.feature_dim);
  w.put<std::int32_t>(dims.hidden);
  w.put<std::uint64_t>(state.seed);
  w.put<std::int64_t>(state.step);  // RNG cursor

  w.put_vec(state.model.params());
  w.put_mat(state.encoder.E);
  w.put_mat(state.residual.W);
  w.put_vec(state.residual.b);
  w.put<double>(state.residual.spectral_bound);
  w.put<std::int32_t>(state.residual.power_iters);
  put_adam(w, state.opt_model);
  put_adam(w, state.opt_encoder);
  put_adam(w, state.opt_residual);

  const std::uint64_t checksum = fnv1a64(w.bytes());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint_save: cannot open " + path);
  os.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  os.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
  if (!os) throw std::runtime_error("checkpoint_save: write failed for " + path);
}

TrainState checkpoint_load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint_load: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(std::uint64_t) + 8)
    throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - sizeof(stored), sizeof(stored));
  const std::string payload = bytes.substr(0, bytes.size() - sizeof(stored));
  if (fnv1a64(payload) != stored)
    throw std::runtime_error("checkpoint: checksum mismatch");

  Reader r(payload);
  char magic[4];
  magic[0] = r.get<char>(); magic[1] = r.get<char>();
  magic[2] = r.get<char>(); magic[3] = r.get<char>();
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

  MlpDims dims;
  dims.action_dim = r.get<std::int32_t>();
  dims.chunk_len = r.get<std::int32_t>();
  dims.feature_dim = r.get<std::int32_t>();
  dims.hidden = r.get<std::int32_t>();

  TrainState st;
  st.seed = r.get<std::uint64_t>();
  st.step = r.get<std::int64_t>();
  st.model = VectorFieldModel(dims);
  st.model.set_params(r.get_vec());
  st.encoder.E = r.get_mat();
  st.residual.W = r.get_mat();
  st.residual.b = r.get_vec();
  st.residual.spectral_bound = r.get<double>();
  st.residual.power_iters = r.get<std::int32_t>();
  st.opt_model = get_adam(r);
  st.opt_encoder = get_adam(r);
  st.opt_residual = get_adam(r);
  return st;
}

}  // namespace digflow
