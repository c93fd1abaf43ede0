// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>

#include "caninelab/distill.hpp"
#include "caninelab/error.hpp"
#include "caninelab/random.hpp"

namespace caninelab::distill {

VectorXd one_hot(int label, int k) {
  if (label < 0 || label >= k) {
    throw Error(ErrorKind::LabelOutOfRange,
                "label " + std::to_string(label) + " outside 0.." + std::to_string(k - 1));
  }
  VectorXd v = VectorXd::Zero(k);
  v[label] = 1.0;
  return v;
}

VectorXd log_softmax(const VectorXd& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

VectorXd softmax(const VectorXd& logits) {
  const double m = logits.maxCoeff();
  VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

// ---------------------------------------------------------------------------

MlpModel::MlpModel(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw Error(ErrorKind::ShapeMismatch, "a model needs input and output sizes");
  for (std::size_t i = 0; i < sizes_.size(); ++i) {
    if (sizes_[i] < 0 || (i > 0 && sizes_[i] == 0)) {
      throw Error(ErrorKind::ShapeMismatch, "layer sizes must be positive");
    }
  }
  for (std::size_t l = 1; l < sizes_.size(); ++l) {
    weights_.push_back(MatrixXd::Zero(sizes_[l], sizes_[l - 1]));
    biases_.push_back(VectorXd::Zero(sizes_[l]));
  }
}

MlpModel MlpModel::zeros(std::vector<int> layer_sizes) { return MlpModel(std::move(layer_sizes)); }

MlpModel MlpModel::initialize(std::vector<int> layer_sizes, std::uint64_t seed) {
  MlpModel m(std::move(layer_sizes));
  Rng rng(seed);
  for (auto& w : m.weights_) {
    if (w.cols() == 0) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(w.cols()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
  }
  return m;
}

ForwardResult MlpModel::forward(const VectorXd& input) const {
  if (input.size() != sizes_.front()) {
    throw Error(ErrorKind::ShapeMismatch, "input has " + std::to_string(input.size()) + " values, model expects " +
                                              std::to_string(sizes_.front()));
  }
  VectorXd a = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    VectorXd z = weights_[l] * a + biases_[l];
    a = l + 1 < weights_.size() ? VectorXd(z.cwiseMax(0.0)) : z;
  }
  return {a, softmax(a)};
}

Gradients MlpModel::zero_gradients() const {
  Gradients g;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    g.weights.push_back(MatrixXd::Zero(weights_[l].rows(), weights_[l].cols()));
    g.biases.push_back(VectorXd::Zero(biases_[l].size()));
  }
  return g;
}

void MlpModel::backward(const VectorXd& input, const VectorXd& dlogits, Gradients& acc) const {
  // Recompute the forward pass, keeping pre-activations.
  std::vector<VectorXd> activations{input};
  std::vector<VectorXd> pre;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    pre.push_back(weights_[l] * activations.back() + biases_[l]);
    activations.push_back(l + 1 < weights_.size() ? VectorXd(pre.back().cwiseMax(0.0)) : pre.back());
  }
  VectorXd delta = dlogits;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    acc.weights[l].noalias() += delta * activations[l].transpose();
    acc.biases[l] += delta;
    if (l > 0) {
      VectorXd back = weights_[l].transpose() * delta;
      delta = (pre[l - 1].array() > 0.0).select(back, 0.0);
    }
  }
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l)
    n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
  return n;
}

namespace {

template <typename Ws, typename Bs>
VectorXd flatten_layers(const Ws& weights, const Bs& biases, std::size_t count) {
  VectorXd flat(static_cast<Eigen::Index>(count));
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < weights[l].cols(); ++c) flat[k++] = weights[l](r, c);
    for (Eigen::Index r = 0; r < biases[l].size(); ++r) flat[k++] = biases[l][r];
  }
  return flat;
}

}  // namespace

VectorXd MlpModel::parameters() const { return flatten_layers(weights_, biases_, parameter_count()); }

VectorXd MlpModel::flatten(const Gradients& g) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < g.weights.size(); ++l)
    n += static_cast<std::size_t>(g.weights[l].size() + g.biases[l].size());
  return flatten_layers(g.weights, g.biases, n);
}

void MlpModel::set_parameters(const VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
    throw Error(ErrorKind::ShapeMismatch, "parameter vector has the wrong length");
  }
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    for (Eigen::Index r = 0; r < weights_[l].rows(); ++r)
      for (Eigen::Index c = 0; c < weights_[l].cols(); ++c) weights_[l](r, c) = flat[k++];
    for (Eigen::Index r = 0; r < biases_[l].size(); ++r) biases_[l][r] = flat[k++];
  }
}

double MlpModel::weight_norm_squared() const {
  double s = 0.0;
  for (const auto& w : weights_) s += w.squaredNorm();
  return s;
}

bool operator==(const MlpModel& a, const MlpModel& b) {
  if (a.sizes_ != b.sizes_) return false;
  for (std::size_t l = 0; l < a.weights_.size(); ++l) {
    if (a.weights_[l] != b.weights_[l] || a.biases_[l] != b.biases_[l]) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

LossValue cross_entropy(const VectorXd& logits, const VectorXd& target) {
  if (logits.size() != target.size()) throw Error(ErrorKind::ShapeMismatch, "logits and target differ in size");
  const VectorXd logp = log_softmax(logits);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i)
    if (target[i] != 0.0) loss -= target[i] * logp[i];
  return {loss, softmax(logits) - target};
}

LossValue kd_loss(const VectorXd& student_logits, const VectorXd& teacher_probs, const VectorXd& true_one_hot,
                  double temperature, double alpha) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorKind::InvalidTemperature, "temperature must be positive");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::InvalidParameter, "alpha must lie in [0, 1]");
  if (teacher_probs.size() != student_logits.size()) {
    throw Error(ErrorKind::ShapeMismatch, "teacher and student disagree on class count");
  }
  const LossValue ce = cross_entropy(student_logits, true_one_hot);

  // Soften the teacher: q_t proportional to p_t^(1/T).
  VectorXd teacher_log(teacher_probs.size());
  for (Eigen::Index i = 0; i < teacher_probs.size(); ++i) {
    teacher_log[i] = teacher_probs[i] > 0.0 ? std::log(teacher_probs[i]) / temperature
                                            : -std::numeric_limits<double>::infinity();
  }
  const VectorXd log_qt = log_softmax(teacher_log);
  const VectorXd qt = log_qt.array().exp();
  const VectorXd log_qs = log_softmax(student_logits / temperature);
  const VectorXd qs = log_qs.array().exp();
  double kl = 0.0;
  for (Eigen::Index i = 0; i < qt.size(); ++i)
    if (qt[i] > 0.0) kl += qt[i] * (log_qt[i] - log_qs[i]);

  const double t2 = temperature * temperature;
  LossValue out;
  out.loss = alpha * ce.loss + (1.0 - alpha) * t2 * kl;
  out.grad = alpha * ce.grad + (1.0 - alpha) * temperature * (qs - qt);
  return out;
}

double gradient_check(const MlpModel& model, const LogitLoss& loss, const VectorXd& input, double l2, double h) {
  auto objective = [&](const MlpModel& m) {
    return loss(m.forward(input).logits).loss + 0.5 * l2 * m.weight_norm_squared();
  };
  Gradients g = model.zero_gradients();
  model.backward(input, loss(model.forward(input).logits).grad, g);
  for (std::size_t l = 0; l < model.layer_count(); ++l) g.weights[l] += l2 * model.weight(l);
  const VectorXd analytic = MlpModel::flatten(g);

  const VectorXd theta = model.parameters();
  MlpModel probe = model;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    VectorXd t = theta;
    t[i] = theta[i] + h;
    probe.set_parameters(t);
    const double up = objective(probe);
    t[i] = theta[i] - h;
    probe.set_parameters(t);
    const double down = objective(probe);
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace caninelab::distill
