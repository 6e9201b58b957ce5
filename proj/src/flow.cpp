#include "digflow/flow.hpp"

#include <cmath>
#include <stdexcept>

#include "digflow/rng.hpp"

namespace digflow {

Eigen::MatrixXd encode_actions(const ActionEncoder& enc, const ActionChunk& chunk) {
  if (enc.E.cols() != chunk.action_dim())
    throw std::invalid_argument("encode_actions: action dimension mismatch");
  return chunk.actions * enc.E.transpose();  // K x d
}

Eigen::VectorXd flatten_chunk(const ActionChunk& chunk) {
  const int k = chunk.chunk_len();
  const int da = chunk.action_dim();
  Eigen::VectorXd x(k * da);
  for (int r = 0; r < k; ++r) x.segment(r * da, da) = chunk.actions.row(r).transpose();
  return x;
}

ActionChunk unflatten_chunk(const Eigen::VectorXd& x, int chunk_len, int action_dim) {
  if (x.size() != chunk_len * action_dim)
    throw std::invalid_argument("unflatten_chunk: size mismatch");
  Eigen::MatrixXd a(chunk_len, action_dim);
  for (int r = 0; r < chunk_len; ++r)
    a.row(r) = x.segment(r * action_dim, action_dim).transpose();
  return ActionChunk{a};
}

FlowSample interpolate(const Eigen::VectorXd& x0, const Eigen::VectorXd& x1, double t) {
  if (x0.size() != x1.size())
    throw std::invalid_argument("interpolate: dimension mismatch");
  if (!(t >= 0.0 && t <= 1.0))
    throw std::invalid_argument("interpolate: t outside [0,1]");
  FlowSample s;
  s.x0 = x0;
  s.x1 = x1;
  s.t = t;
  s.xt = (1.0 - t) * x0 + t * x1;
  return s;
}

VectorFieldModel::VectorFieldModel(const MlpDims& dims) : dims_(dims) {
  W1 = Eigen::MatrixXd::Zero(dims.hidden, dims.input());
  b1 = Eigen::VectorXd::Zero(dims.hidden);
  W2 = Eigen::MatrixXd::Zero(dims.hidden, dims.hidden);
  b2 = Eigen::VectorXd::Zero(dims.hidden);
  W3 = Eigen::MatrixXd::Zero(dims.output(), dims.hidden);
  b3 = Eigen::VectorXd::Zero(dims.output());
}

void VectorFieldModel::init(std::uint64_t seed, double scale) {
  Rng rng(seed);
  const double s1 = scale / std::sqrt(static_cast<double>(dims_.input()));
  const double s2 = scale / std::sqrt(static_cast<double>(dims_.hidden));
  W1 = rng.normal_matrix(dims_.hidden, dims_.input()) * s1;
  b1.setZero();
  W2 = rng.normal_matrix(dims_.hidden, dims_.hidden) * s2;
  b2.setZero();
  W3 = rng.normal_matrix(dims_.output(), dims_.hidden) * s2;
  b3.setZero();
}

int VectorFieldModel::num_params() const {
  return static_cast<int>(W1.size() + b1.size() + W2.size() + b2.size() + W3.size() +
                          b3.size());
}

Eigen::VectorXd VectorFieldModel::params() const {
  Eigen::VectorXd p(num_params());
  int off = 0;
  auto put_m = [&](const Eigen::MatrixXd& m) {
    p.segment(off, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    off += static_cast<int>(m.size());
  };
  auto put_v = [&](const Eigen::VectorXd& v) {
    p.segment(off, v.size()) = v;
    off += static_cast<int>(v.size());
  };
  put_m(W1); put_v(b1); put_m(W2); put_v(b2); put_m(W3); put_v(b3);
  return p;
}

void VectorFieldModel::set_params(const Eigen::VectorXd& p) {
  if (p.size() != num_params())
    throw std::invalid_argument("set_params: size mismatch");
  int off = 0;
  auto get_m = [&](Eigen::MatrixXd& m) {
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = p.segment(off, m.size());
    off += static_cast<int>(m.size());
  };
  auto get_v = [&](Eigen::VectorXd& v) {
    v = p.segment(off, v.size());
    off += static_cast<int>(v.size());
  };
  get_m(W1); get_v(b1); get_m(W2); get_v(b2); get_m(W3); get_v(b3);
}

namespace {

Eigen::VectorXd build_input(const MlpDims& dims, const Eigen::VectorXd& x, double t,
                            const Eigen::VectorXd& pooled) {
  if (x.size() != dims.flat_action())
    throw std::invalid_argument("vector field: action size mismatch");
  if (pooled.size() != dims.feature_dim)
    throw std::invalid_argument("vector field: feature size mismatch");
  Eigen::VectorXd in(dims.input());
  in.head(dims.flat_action()) = x;
  in[dims.flat_action()] = t;
  in.tail(dims.feature_dim) = pooled;
  return in;
}

}  // namespace

Eigen::VectorXd VectorFieldModel::evaluate(const Eigen::VectorXd& x, double t,
                                           const Eigen::VectorXd& pooled) const {
  if (forced_field) return forced_field(x, t);
  const Eigen::VectorXd in = build_input(dims_, x, t, pooled);
  const Eigen::VectorXd a1 = (W1 * in + b1).array().tanh();
  const Eigen::VectorXd a2 = (W2 * a1 + b2).array().tanh();
  return W3 * a2 + b3;
}

double per_sample_loss(const VectorFieldModel& model, const FlowSample& sample,
                       const Eigen::MatrixXd& Hcond) {
  const Eigen::VectorXd pooled = Hcond.colwise().mean();
  const Eigen::VectorXd v = model.evaluate(sample.xt, sample.t, pooled);
  return (v - sample.target_field()).squaredNorm();
}

double per_sample_loss_with_grads(const VectorFieldModel& model, const FlowSample& sample,
                                  const Eigen::MatrixXd& Hcond, LossGrads& out) {
  const MlpDims& dims = model.dims();
  const int T = static_cast<int>(Hcond.rows());
  const Eigen::VectorXd pooled = Hcond.colwise().mean();
  const Eigen::VectorXd in = build_input(dims, sample.xt, sample.t, pooled);

  const Eigen::VectorXd a1 = (model.W1 * in + model.b1).array().tanh();
  const Eigen::VectorXd a2 = (model.W2 * a1 + model.b2).array().tanh();
  const Eigen::VectorXd v = model.W3 * a2 + model.b3;

  const Eigen::VectorXd resid = v - sample.target_field();
  const double loss = resid.squaredNorm();

  const Eigen::VectorXd dv = 2.0 * resid;
  const Eigen::MatrixXd gW3 = dv * a2.transpose();
  const Eigen::VectorXd da2 = model.W3.transpose() * dv;
  const Eigen::VectorXd dz2 = da2.array() * (1.0 - a2.array().square());
  const Eigen::MatrixXd gW2 = dz2 * a1.transpose();
  const Eigen::VectorXd da1 = model.W2.transpose() * dz2;
  const Eigen::VectorXd dz1 = da1.array() * (1.0 - a1.array().square());
  const Eigen::MatrixXd gW1 = dz1 * in.transpose();
  const Eigen::VectorXd din = model.W1.transpose() * dz1;

  out.grad_params.resize(model.num_params());
  int off = 0;
  auto put_m = [&](const Eigen::MatrixXd& m) {
    out.grad_params.segment(off, m.size()) =
        Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    off += static_cast<int>(m.size());
  };
  auto put_v = [&](const Eigen::VectorXd& vv) {
    out.grad_params.segment(off, vv.size()) = vv;
    off += static_cast<int>(vv.size());
  };
  put_m(gW1); put_v(dz1); put_m(gW2); put_v(dz2); put_m(gW3); put_v(dv);

  // Mean pooling spreads the pooled gradient uniformly across token rows.
  const Eigen::VectorXd grad_pooled = din.tail(dims.feature_dim);
  out.grad_H = (grad_pooled.transpose() / static_cast<double>(T)).replicate(T, 1);

  return loss;
}

Eigen::VectorXd draw_base_noise(const MlpDims& dims, std::uint64_t seed) {
  Rng rng(seed);
  return rng.normal_vector(dims.flat_action());
}

ActionChunk euler_sample(const VectorFieldModel& model, const Eigen::MatrixXd& Hcond,
                         int steps, std::uint64_t seed) {
  if (steps < 1) throw std::invalid_argument("euler_sample: steps must be >= 1");
  const MlpDims& dims = model.dims();
  const Eigen::VectorXd pooled = Hcond.colwise().mean();
  Eigen::VectorXd x = draw_base_noise(dims, seed);
  const double h = 1.0 / static_cast<double>(steps);
  for (int s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) * h;
    x += h * model.evaluate(x, t, pooled);
  }
  return unflatten_chunk(x, dims.chunk_len, dims.action_dim);
}

}  // namespace digflow
