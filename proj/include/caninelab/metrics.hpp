// SPDX-License-Identifier: Apache-2.0
//
// Multiclass evaluation over a confusion matrix: accuracy, per-class
// precision/recall, support-weighted and macro recall, and ordinal error
// measures (MAE, MSE, RMSE) over numeric class codes.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace caninelab::metrics {

class ConfusionMatrix {
 public:
  /// Class names default to "1".."k".
  explicit ConfusionMatrix(std::size_t k, std::vector<std::string> class_names = {});

  /// Rows are true classes, columns predicted classes.
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows,
                                   std::vector<std::string> class_names = {});

  std::size_t k() const { return k_; }
  const std::vector<std::string>& class_names() const { return names_; }

  std::int64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
  void add(std::size_t truth, std::size_t predicted, std::int64_t n = 1);

  std::int64_t total() const;
  std::int64_t true_positives(std::size_t i) const { return at(i, i); }
  std::int64_t false_positives(std::size_t i) const;
  std::int64_t false_negatives(std::size_t i) const;
  std::int64_t true_negatives(std::size_t i) const;
  std::int64_t support(std::size_t i) const;    // row sum
  std::int64_t predicted(std::size_t i) const;  // column sum

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_;
  std::vector<std::string> names_;
  std::vector<std::int64_t> counts_;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, std::size_t k,
                          std::vector<std::string> class_names = {});

struct ClassMetrics {
  std::string name;
  double code = 0.0;
  std::int64_t support = 0;
  std::int64_t true_positives = 0;
  std::int64_t predicted = 0;
  double recall = 0.0;
  double precision = 0.0;
  bool precision_defined = true;  // false when nothing was predicted as this class
  bool recall_defined = true;     // false when the class has no support
  double one_vs_rest_accuracy = 0.0;
};

struct MetricReport {
  std::int64_t total = 0;
  double accuracy = 0.0;
  std::vector<ClassMetrics> classes;
  double weighted_recall = 0.0;
  double macro_recall = 0.0;
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
};

/// `class_codes` are the ordinal values used by MAE/MSE/RMSE (default 1..k).
MetricReport evaluate(const ConfusionMatrix& cm, std::optional<std::vector<double>> class_codes = std::nullopt);

nlohmann::json to_json(const MetricReport& r);
nlohmann::json to_json(const ConfusionMatrix& cm);

/// Bullet layout: one line per class with correct/support counts, recall and
/// precision, followed by the error measures and overall accuracy/recall.
std::string render_text(const MetricReport& r);

/// A reported value to check against: `metric` is "accuracy", "macro_recall",
/// "weighted_recall", "mae", "mse", "rmse", or "precision"/"recall" with a
/// class name.
struct ReferenceValue {
  std::string metric;
  std::string class_name;
  double value = 0.0;
  double tolerance = 5e-5;
};

struct Discrepancy {
  ReferenceValue reference;
  double observed = 0.0;
  std::string explanation;
};

std::vector<ReferenceValue> parse_reference(const nlohmann::json& j);

/// Reference values that the matrix does not reproduce, with the fraction the
/// matrix actually yields (e.g. "64/82").
std::vector<Discrepancy> compare_to_reference(const MetricReport& report,
                                              std::span<const ReferenceValue> reference);

nlohmann::json to_json(const Discrepancy& d);

struct Prediction {
  std::string case_id;
  std::string truth;
  std::string predicted;
};

/// JSON lines `{"case", "true", "pred"}`; errors name the offending line.
std::vector<Prediction> parse_predictions_jsonl(std::string_view text);

/// Confusion matrix over string labels. Sector labels of a single space use
/// that space's full class order; other labels are sorted.
ConfusionMatrix confusion_from_predictions(std::span<const Prediction> predictions);

}  // namespace caninelab::metrics
