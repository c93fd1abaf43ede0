// SPDX-License-Identifier: Apache-2.0
//
// Teacher/student knowledge distillation at desk scale. The teacher is a
// multilayer perceptron over image features plus normalized clinical
// metadata; the student sees image features only and is trained on a mix of
// the true labels and the teacher's temperature-softened outputs.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "caninelab/geometry.hpp"

namespace caninelab::distill {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr int kClasses = 3;  // A, B, C

struct Clinical {
  double depth_mm = 0.0;
  double angle_deg = 0.0;
  double root_maturity = 0.0;
};

struct Sample {
  std::string case_id;
  VectorXd image_features;
  Clinical clinical;
  int label = 0;  // 0 = A, 1 = B, 2 = C
};

using Dataset = std::vector<Sample>;

VectorXd one_hot(int label, int k = kClasses);

VectorXd softmax(const VectorXd& logits);
VectorXd log_softmax(const VectorXd& logits);

struct ForwardResult {
  VectorXd logits;
  VectorXd probabilities;
};

/// Gradient of a scalar objective with respect to every model parameter,
/// laid out like the model itself.
struct Gradients {
  std::vector<MatrixXd> weights;
  std::vector<VectorXd> biases;
};

/// Fully connected network, rectifier on hidden layers, softmax output.
class MlpModel {
 public:
  /// Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases zero.
  static MlpModel initialize(std::vector<int> layer_sizes, std::uint64_t seed);
  static MlpModel zeros(std::vector<int> layer_sizes);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  std::size_t layer_count() const { return weights_.size(); }

  MatrixXd& weight(std::size_t layer) { return weights_[layer]; }
  const MatrixXd& weight(std::size_t layer) const { return weights_[layer]; }
  VectorXd& bias(std::size_t layer) { return biases_[layer]; }
  const VectorXd& bias(std::size_t layer) const { return biases_[layer]; }

  /// Throws ShapeMismatch when the input length differs from the first layer.
  ForwardResult forward(const VectorXd& input) const;

  Gradients zero_gradients() const;
  /// Adds d(objective)/d(params) for one input, given d(objective)/d(logits).
  void backward(const VectorXd& input, const VectorXd& dlogits, Gradients& acc) const;

  std::size_t parameter_count() const;
  VectorXd parameters() const;  // weights (row-major) then biases, per layer
  void set_parameters(const VectorXd& flat);
  static VectorXd flatten(const Gradients& g);

  /// Sum of squared weights (biases are not penalized).
  double weight_norm_squared() const;

  friend bool operator==(const MlpModel& a, const MlpModel& b);

 private:
  explicit MlpModel(std::vector<int> sizes);

  std::vector<int> sizes_;
  std::vector<MatrixXd> weights_;
  std::vector<VectorXd> biases_;
};

struct LossValue {
  double loss = 0.0;
  VectorXd grad;  // with respect to the logits
};

LossValue cross_entropy(const VectorXd& logits, const VectorXd& target);

/// alpha * CE(target, softmax(z)) + (1 - alpha) * T^2 * KL(teacher_T || student_T),
/// where x_T is the distribution softened by temperature T.
/// Throws InvalidTemperature for T <= 0 and InvalidParameter for alpha outside [0, 1].
LossValue kd_loss(const VectorXd& student_logits, const VectorXd& teacher_probs,
                  const VectorXd& true_one_hot, double temperature, double alpha);

using LogitLoss = std::function<LossValue(const VectorXd& logits)>;

/// Largest relative difference between the analytic gradient of
/// loss(forward(input)) + l2/2 * |W|^2 and central finite differences with
/// step h. Relative error is |a - n| / max(|a|, |n|, 1e-6).
double gradient_check(const MlpModel& model, const LogitLoss& loss, const VectorXd& input,
                      double l2 = 0.0, double h = 1e-5);

// ---------------------------------------------------------------------------
// Training

struct DistillConfig {
  double temperature = 2.0;
  double alpha = 0.5;
  double learning_rate = 0.01;
  int batch_size = 32;
  int max_epochs = 200;
  int patience = 10;
  bool early_stopping = true;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
  std::vector<int> teacher_hidden{32, 32};
  std::vector<int> student_hidden{32};

  /// Throws InvalidTemperature or InvalidConfig.
  void validate() const;
};

nlohmann::json to_json(const DistillConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
DistillConfig distill_config_from_json(const nlohmann::json& j);

/// Per-feature z-score with statistics from the training set only.
struct Normalizer {
  VectorXd mean;
  VectorXd stddev;

  static Normalizer fit(const std::vector<VectorXd>& rows);
  VectorXd apply(const VectorXd& x) const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

enum class Role { Teacher, Student, Baseline };
std::string_view to_string(Role role);

struct TrainedModel {
  Role role = Role::Teacher;
  MlpModel model;
  std::optional<Normalizer> clinical;  // present when the model reads clinical data
  std::vector<EpochLog> log;
  int best_epoch = 0;

  VectorXd input_for(const Sample& s) const;
  ForwardResult predict(const Sample& s) const;
  int predict_label(const Sample& s) const;
};

/// Image features + clinical metadata, cross-entropy + L2. Early stopping on
/// validation accuracy restores the best epoch's parameters. Throws
/// EmptyDataset, NonFiniteLoss.
TrainedModel train_teacher(const Dataset& train, const Dataset& validation, const DistillConfig& config);

/// Image features only, trained with kd_loss against the teacher.
TrainedModel distill_student(const TrainedModel& teacher, const Dataset& train, const Dataset& validation,
                             const DistillConfig& config);

/// Image features only, cross-entropy: the student without a teacher. Shares
/// the student's initialization and batch order for a given seed.
TrainedModel train_baseline(const Dataset& train, const Dataset& validation, const DistillConfig& config);

double accuracy(const TrainedModel& m, const Dataset& data);
std::vector<int> predict_labels(const TrainedModel& m, const Dataset& data);

nlohmann::json model_archive(const TrainedModel& m, const DistillConfig& config);
TrainedModel model_from_archive(const nlohmann::json& archive);

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  double train_fraction = 0.8;
  bool stratified = false;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// |train| = round(fraction * N). Stratified splits allocate per-class train
/// counts by largest remainder (ties to the lower class index). Indices are
/// returned in ascending order.
SplitIndices split_indices(const Dataset& data, const SplitSpec& spec);
std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec);

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
  std::array<double, 3> proportions{592.0 / 1528.0, 568.0 / 1528.0, 368.0 / 1528.0};
  std::size_t n = 1528;
  double noise_sigma = 0.05;
  int feature_dim = 16;
  std::string preset = "mesial-risk";
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

/// Landmark annotation and canine point that generated one sample.
struct SynthSource {
  geometry::CanineCase annotation;
  geometry::Distances distances{};  // signed boundary distances (px)
};

struct SynthDataset {
  Dataset samples;
  std::vector<SynthSource> sources;
};

/// Draws a label by the configured proportions, a jittered incisor fixture,
/// and a canine point uniformly inside that label's sector strip. Image
/// features are a fixed random projection of the point's four signed
/// boundary distances and its coordinates, plus N(0, sigma^2) noise. Clinical
/// values grow linearly with the mesial position of the point, plus noise.
SynthDataset synth_generate(const SynthConfig& config);

// ---------------------------------------------------------------------------
// Manifest CSV: case_id,label,depth_mm,angle_deg,root_maturity,f0..f{m-1}

std::string write_manifest(const Dataset& data);
Dataset parse_manifest(std::string_view csv);

}  // namespace caninelab::distill

