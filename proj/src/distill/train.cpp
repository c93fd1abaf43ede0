// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "caninelab/distill.hpp"
#include "caninelab/error.hpp"
#include "caninelab/random.hpp"

namespace caninelab::distill {

using nlohmann::json;

void DistillConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); };
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorKind::InvalidTemperature, "temperature must be positive");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) bad("alpha must lie in [0, 1]");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be positive");
  if (batch_size < 1) bad("batch_size must be at least 1");
  if (max_epochs < 0) bad("max_epochs must be non-negative");
  if (patience < 1) bad("patience must be at least 1");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) bad("l2 must be non-negative");
  for (int h : teacher_hidden)
    if (h < 1) bad("hidden layer sizes must be positive");
  for (int h : student_hidden)
    if (h < 1) bad("hidden layer sizes must be positive");
}

json to_json(const DistillConfig& c) {
  return json{{"temperature", c.temperature},       {"alpha", c.alpha},
              {"learning_rate", c.learning_rate},   {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},         {"patience", c.patience},
              {"early_stopping", c.early_stopping}, {"l2", c.l2},
              {"seed", c.seed},                     {"teacher_hidden", c.teacher_hidden},
              {"student_hidden", c.student_hidden}};
}

DistillConfig distill_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "config must be a JSON object");
  static const std::set<std::string> known{"temperature", "alpha",          "learning_rate", "batch_size",
                                           "max_epochs",  "patience",       "early_stopping", "l2",
                                           "seed",        "teacher_hidden", "student_hidden"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw Error(ErrorKind::InvalidConfig, "unknown config key '" + key + "'");
  }
  DistillConfig c;
  try {
    c.temperature = j.value("temperature", c.temperature);
    c.alpha = j.value("alpha", c.alpha);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.early_stopping = j.value("early_stopping", c.early_stopping);
    c.l2 = j.value("l2", c.l2);
    c.seed = j.value("seed", c.seed);
    c.teacher_hidden = j.value("teacher_hidden", c.teacher_hidden);
    c.student_hidden = j.value("student_hidden", c.student_hidden);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

Normalizer Normalizer::fit(const std::vector<VectorXd>& rows) {
  if (rows.empty()) throw Error(ErrorKind::EmptyDataset, "cannot fit a normalizer on no rows");
  const auto d = rows.front().size();
  Normalizer n{VectorXd::Zero(d), VectorXd::Zero(d)};
  for (const auto& r : rows) n.mean += r;
  n.mean /= static_cast<double>(rows.size());
  for (const auto& r : rows) n.stddev += (r - n.mean).cwiseAbs2();
  n.stddev = (n.stddev / static_cast<double>(rows.size())).cwiseSqrt();
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(n.stddev[i] > 0.0)) n.stddev[i] = 1.0;
  return n;
}

VectorXd Normalizer::apply(const VectorXd& x) const { return (x - mean).cwiseQuotient(stddev); }

std::string_view to_string(Role role) {
  switch (role) {
    case Role::Teacher: return "teacher";
    case Role::Student: return "student";
    case Role::Baseline: return "baseline";
  }
  return "?";
}

namespace {

VectorXd clinical_vector(const Clinical& c) {
  VectorXd v(3);
  v << c.depth_mm, c.angle_deg, c.root_maturity;
  return v;
}

// Stream tags for seed derivation.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kBatchStream = 2;

std::uint64_t role_stream(Role role) {
  // The baseline deliberately shares the student's streams.
  return role == Role::Teacher ? 100 : 200;
}

struct FitData {
  std::vector<VectorXd> inputs;
  std::vector<int> labels;
};

/// Mini-batch gradient descent on mean per-sample loss + l2/2 |W|^2.
/// `sample_loss(i, logits)` gives the loss of training sample i.
template <typename SampleLoss>
void fit(TrainedModel& out, const FitData& train, const FitData& validation, const DistillConfig& config,
         SampleLoss&& sample_loss) {
  auto& model = out.model;
  Rng batch_rng(derive_seed(config.seed, role_stream(out.role) + kBatchStream));
  std::vector<std::size_t> order(train.inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto val_accuracy = [&] {
    if (validation.inputs.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < validation.inputs.size(); ++i) {
      Eigen::Index arg;
      model.forward(validation.inputs[i]).logits.maxCoeff(&arg);
      correct += arg == validation.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(validation.inputs.size());
  };

  const bool stop_early = config.early_stopping && !validation.inputs.empty();
  double best_acc = -1.0;
  VectorXd best_params = model.parameters();
  int since_best = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    batch_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      Gradients g = model.zero_gradients();
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const LossValue lv = sample_loss(i, model.forward(train.inputs[i]).logits);
        if (!std::isfinite(lv.loss)) {
          throw Error(ErrorKind::NonFiniteLoss, "loss diverged at epoch " + std::to_string(epoch));
        }
        epoch_loss += lv.loss;
        model.backward(train.inputs[i], lv.grad, g);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t l = 0; l < model.layer_count(); ++l) {
        model.weight(l) -= config.learning_rate * (scale * g.weights[l] + config.l2 * model.weight(l));
        model.bias(l) -= config.learning_rate * (scale * g.biases[l]);
      }
    }
    const double mean_loss =
        epoch_loss / static_cast<double>(order.size()) + 0.5 * config.l2 * model.weight_norm_squared();
    if (!std::isfinite(mean_loss)) {
      throw Error(ErrorKind::NonFiniteLoss, "loss diverged at epoch " + std::to_string(epoch));
    }
    const double acc = val_accuracy();
    out.log.push_back(EpochLog{epoch, mean_loss, acc});
    if (!stop_early) {
      out.best_epoch = epoch;
      continue;
    }
    if (acc > best_acc) {
      best_acc = acc;
      best_params = model.parameters();
      out.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  if (stop_early && !out.log.empty()) model.set_parameters(best_params);
}

FitData fit_data(const TrainedModel& m, const Dataset& data) {
  FitData f;
  for (const auto& s : data) {
    f.inputs.push_back(m.input_for(s));
    f.labels.push_back(s.label);
  }
  return f;
}

std::vector<int> with_io(int in, const std::vector<int>& hidden) {
  std::vector<int> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(kClasses);
  return sizes;
}

int feature_dim(const Dataset& train) {
  if (train.empty()) throw Error(ErrorKind::EmptyDataset, "training set is empty");
  const auto m = train.front().image_features.size();
  for (const auto& s : train) {
    if (s.image_features.size() != m) throw Error(ErrorKind::ShapeMismatch, "samples differ in feature length");
  }
  return static_cast<int>(m);
}

TrainedModel image_only(Role role, const Dataset& train, const DistillConfig& config) {
  return TrainedModel{role,
                      MlpModel::initialize(with_io(feature_dim(train), config.student_hidden),
                                           derive_seed(config.seed, role_stream(role) + kInitStream)),
                      std::nullopt,
                      {},
                      0};
}

}  // namespace

VectorXd TrainedModel::input_for(const Sample& s) const {
  if (!clinical) return s.image_features;
  VectorXd x(s.image_features.size() + 3);
  x << s.image_features, clinical->apply(clinical_vector(s.clinical));
  return x;
}

ForwardResult TrainedModel::predict(const Sample& s) const { return model.forward(input_for(s)); }

int TrainedModel::predict_label(const Sample& s) const {
  Eigen::Index arg;
  predict(s).logits.maxCoeff(&arg);
  return static_cast<int>(arg);
}

TrainedModel train_teacher(const Dataset& train, const Dataset& validation, const DistillConfig& config) {
  config.validate();
  const int m = feature_dim(train);
  std::vector<VectorXd> clinical_rows;
  for (const auto& s : train) clinical_rows.push_back(clinical_vector(s.clinical));
  TrainedModel out{Role::Teacher,
                   MlpModel::initialize(with_io(m + 3, config.teacher_hidden),
                                        derive_seed(config.seed, role_stream(Role::Teacher) + kInitStream)),
                   Normalizer::fit(clinical_rows),
                   {},
                   0};
  const FitData tr = fit_data(out, train);
  const FitData va = fit_data(out, validation);
  fit(out, tr, va, config, [&](std::size_t i, const VectorXd& logits) {
    return cross_entropy(logits, one_hot(tr.labels[i]));
  });
  return out;
}

TrainedModel train_baseline(const Dataset& train, const Dataset& validation, const DistillConfig& config) {
  config.validate();
  TrainedModel out = image_only(Role::Baseline, train, config);
  const FitData tr = fit_data(out, train);
  const FitData va = fit_data(out, validation);
  fit(out, tr, va, config, [&](std::size_t i, const VectorXd& logits) {
    return cross_entropy(logits, one_hot(tr.labels[i]));
  });
  return out;
}

TrainedModel distill_student(const TrainedModel& teacher, const Dataset& train, const Dataset& validation,
                             const DistillConfig& config) {
  config.validate();
  TrainedModel out = image_only(Role::Student, train, config);
  const FitData tr = fit_data(out, train);
  const FitData va = fit_data(out, validation);
  std::vector<VectorXd> teacher_probs;
  teacher_probs.reserve(train.size());
  for (const auto& s : train) teacher_probs.push_back(teacher.predict(s).probabilities);
  fit(out, tr, va, config, [&](std::size_t i, const VectorXd& logits) {
    return kd_loss(logits, teacher_probs[i], one_hot(tr.labels[i]), config.temperature, config.alpha);
  });
  return out;
}

std::vector<int> predict_labels(const TrainedModel& m, const Dataset& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(m.predict_label(s));
  return out;
}

double accuracy(const TrainedModel& m, const Dataset& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : data) correct += m.predict_label(s) == s.label;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------

json model_archive(const TrainedModel& m, const DistillConfig& config) {
  json weights = json::array(), biases = json::array();
  for (std::size_t l = 0; l < m.model.layer_count(); ++l) {
    const auto& w = m.model.weight(l);
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    weights.push_back(flat);
    const auto& b = m.model.bias(l);
    biases.push_back(std::vector<double>(b.data(), b.data() + b.size()));
  }
  json j{{"format", "caninelab-mlp/1"},
         {"role", to_string(m.role)},
         {"layer_sizes", m.model.layer_sizes()},
         {"weights", weights},
         {"biases", biases},
         {"best_epoch", m.best_epoch},
         {"config", to_json(config)},
         {"seed", config.seed}};
  if (m.clinical) {
    const auto& n = *m.clinical;
    j["clinical_normalization"] = {{"mean", std::vector<double>(n.mean.data(), n.mean.data() + n.mean.size())},
                                   {"std", std::vector<double>(n.stddev.data(), n.stddev.data() + n.stddev.size())}};
  }
  return j;
}

TrainedModel model_from_archive(const json& archive) {
  try {
    if (archive.at("format") != "caninelab-mlp/1") throw Error(ErrorKind::ParseError, "unknown model format");
    const auto role_name = archive.at("role").get<std::string>();
    Role role = role_name == "teacher" ? Role::Teacher : role_name == "student" ? Role::Student : Role::Baseline;
    auto model = MlpModel::zeros(archive.at("layer_sizes").get<std::vector<int>>());
    const auto& weights = archive.at("weights");
    const auto& biases = archive.at("biases");
    if (weights.size() != model.layer_count() || biases.size() != model.layer_count()) {
      throw Error(ErrorKind::ShapeMismatch, "archive layer count mismatch");
    }
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
      const auto w = weights[l].get<std::vector<double>>();
      const auto b = biases[l].get<std::vector<double>>();
      auto& W = model.weight(l);
      if (w.size() != static_cast<std::size_t>(W.size()) || b.size() != static_cast<std::size_t>(model.bias(l).size())) {
        throw Error(ErrorKind::ShapeMismatch, "archive layer shape mismatch");
      }
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < W.rows(); ++r)
        for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = w[k++];
      for (std::size_t i = 0; i < b.size(); ++i) model.bias(l)[static_cast<Eigen::Index>(i)] = b[i];
    }
    TrainedModel out{role, std::move(model), std::nullopt, {}, archive.value("best_epoch", 0)};
    if (archive.contains("clinical_normalization")) {
      const auto mean = archive["clinical_normalization"].at("mean").get<std::vector<double>>();
      const auto sd = archive["clinical_normalization"].at("std").get<std::vector<double>>();
      out.clinical = Normalizer{Eigen::Map<const VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                                Eigen::Map<const VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()))};
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("model archive: ") + e.what());
  }
}

}  // namespace caninelab::distill
