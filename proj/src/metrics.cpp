// SPDX-License-Identifier: Apache-2.0
#include "caninelab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "caninelab/error.hpp"
#include "caninelab/geometry.hpp"
#include "caninelab/io.hpp"

namespace caninelab::metrics {

using nlohmann::json;

ConfusionMatrix::ConfusionMatrix(std::size_t k, std::vector<std::string> class_names)
    : k_(k), names_(std::move(class_names)), counts_(k * k, 0) {
  if (k == 0) throw Error(ErrorKind::InvalidParameter, "confusion matrix needs at least one class");
  if (names_.empty()) {
    for (std::size_t i = 0; i < k; ++i) names_.push_back(std::to_string(i + 1));
  }
  if (names_.size() != k) throw Error(ErrorKind::ShapeMismatch, "class name count differs from k");
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::int64_t>>& rows,
                                           std::vector<std::string> class_names) {
  ConfusionMatrix cm(rows.size(), std::move(class_names));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != rows.size()) throw Error(ErrorKind::ShapeMismatch, "confusion matrix must be square");
    for (std::size_t p = 0; p < rows.size(); ++p) cm.add(t, p, rows[t][p]);
  }
  return cm;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::int64_t n) {
  if (truth >= k_ || predicted >= k_) throw Error(ErrorKind::LabelOutOfRange, "class index outside matrix");
  if (n < 0) throw Error(ErrorKind::InvalidParameter, "negative count");
  counts_[truth * k_ + predicted] += n;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

std::int64_t ConfusionMatrix::support(std::size_t i) const {
  std::int64_t s = 0;
  for (std::size_t p = 0; p < k_; ++p) s += at(i, p);
  return s;
}

std::int64_t ConfusionMatrix::predicted(std::size_t i) const {
  std::int64_t s = 0;
  for (std::size_t t = 0; t < k_; ++t) s += at(t, i);
  return s;
}

std::int64_t ConfusionMatrix::false_positives(std::size_t i) const { return predicted(i) - at(i, i); }
std::int64_t ConfusionMatrix::false_negatives(std::size_t i) const { return support(i) - at(i, i); }
std::int64_t ConfusionMatrix::true_negatives(std::size_t i) const {
  return total() - support(i) - predicted(i) + at(i, i);
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, std::size_t k,
                          std::vector<std::string> class_names) {
  if (truth.size() != predicted.size()) {
    throw Error(ErrorKind::LengthMismatch, fmt::format("{} true labels but {} predictions", truth.size(),
                                                       predicted.size()));
  }
  ConfusionMatrix cm(k, std::move(class_names));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || predicted[i] < 0 || static_cast<std::size_t>(truth[i]) >= k ||
        static_cast<std::size_t>(predicted[i]) >= k) {
      throw Error(ErrorKind::LabelOutOfRange, fmt::format("item {}: label outside 0..{}", i, k - 1));
    }
    cm.add(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(predicted[i]));
  }
  return cm;
}

MetricReport evaluate(const ConfusionMatrix& cm, std::optional<std::vector<double>> class_codes) {
  const auto k = cm.k();
  const auto total = cm.total();
  if (total <= 0) throw Error(ErrorKind::EmptyMatrix, "confusion matrix has no items");
  std::vector<double> codes;
  if (class_codes) {
    if (class_codes->size() != k) throw Error(ErrorKind::ShapeMismatch, "one class code per class required");
    codes = *class_codes;
  } else {
    for (std::size_t i = 0; i < k; ++i) codes.push_back(static_cast<double>(i + 1));
  }

  MetricReport r;
  r.total = total;
  const double n = static_cast<double>(total);
  std::int64_t trace = 0;
  double abs_err = 0.0, sq_err = 0.0, weighted = 0.0, macro = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    ClassMetrics c;
    c.name = cm.class_names()[i];
    c.code = codes[i];
    c.support = cm.support(i);
    c.true_positives = cm.true_positives(i);
    c.predicted = cm.predicted(i);
    c.recall_defined = c.support > 0;
    c.recall = c.recall_defined ? static_cast<double>(c.true_positives) / static_cast<double>(c.support) : 0.0;
    c.precision_defined = c.predicted > 0;
    c.precision =
        c.precision_defined ? static_cast<double>(c.true_positives) / static_cast<double>(c.predicted) : 0.0;
    c.one_vs_rest_accuracy = static_cast<double>(cm.true_positives(i) + cm.true_negatives(i)) / n;
    trace += c.true_positives;
    weighted += c.recall * static_cast<double>(c.support);
    macro += c.recall;
    for (std::size_t p = 0; p < k; ++p) {
      const double diff = codes[i] - codes[p];
      const auto count = static_cast<double>(cm.at(i, p));
      abs_err += count * std::abs(diff);
      sq_err += count * diff * diff;
    }
    r.classes.push_back(std::move(c));
  }
  r.accuracy = static_cast<double>(trace) / n;
  r.weighted_recall = weighted / n;
  r.macro_recall = macro / static_cast<double>(k);
  r.mae = abs_err / n;
  r.mse = sq_err / n;
  r.rmse = std::sqrt(r.mse);
  return r;
}

json to_json(const ConfusionMatrix& cm) {
  json rows = json::array();
  for (std::size_t t = 0; t < cm.k(); ++t) {
    json row = json::array();
    for (std::size_t p = 0; p < cm.k(); ++p) row.push_back(cm.at(t, p));
    rows.push_back(std::move(row));
  }
  return json{{"classes", cm.class_names()}, {"rows", rows}};
}

json to_json(const MetricReport& r) {
  json classes = json::array();
  for (const auto& c : r.classes) {
    classes.push_back({{"name", c.name},
                       {"code", c.code},
                       {"support", c.support},
                       {"true_positives", c.true_positives},
                       {"predicted", c.predicted},
                       {"recall", c.recall},
                       {"recall_defined", c.recall_defined},
                       {"precision", c.precision},
                       {"precision_defined", c.precision_defined},
                       {"precision_fraction", fmt::format("{}/{}", c.true_positives, c.predicted)},
                       {"one_vs_rest_accuracy", c.one_vs_rest_accuracy}});
  }
  return json{{"total", r.total},         {"accuracy", r.accuracy}, {"classes", classes},
              {"weighted_recall", r.weighted_recall}, {"macro_recall", r.macro_recall},
              {"mae", r.mae},             {"mse", r.mse},           {"rmse", r.rmse}};
}

std::string render_text(const MetricReport& r) {
  std::string out;
  for (std::size_t i = 0; i < r.classes.size(); ++i) {
    const auto& c = r.classes[i];
    const std::string precision =
        c.precision_defined ? fmt::format("{:.2f}%", 100.0 * c.precision) : std::string("undefined");
    out += fmt::format("- Class {} ({}): correctly classified {} out of {} (recall {:.2f}%, precision {} = {}/{})\n",
                       i + 1, c.name, c.true_positives, c.support, 100.0 * c.recall, precision,
                       c.true_positives, c.predicted);
  }
  out += fmt::format("MAE {:.3f}  MSE {:.3f}  RMSE {:.3f}\n", r.mae, r.mse, r.rmse);
  out += fmt::format("Accuracy {:.2f}%  macro recall {:.2f}%  weighted recall {:.2f}%  (n = {})\n",
                     100.0 * r.accuracy, 100.0 * r.macro_recall, 100.0 * r.weighted_recall, r.total);
  return out;
}

std::vector<ReferenceValue> parse_reference(const json& j) {
  std::vector<ReferenceValue> out;
  try {
    for (const auto& e : j.at("values")) {
      ReferenceValue v;
      v.metric = e.at("metric").get<std::string>();
      v.class_name = e.value("class", "");
      v.value = e.at("value").get<double>();
      v.tolerance = e.value("tolerance", j.value("tolerance", 5e-5));
      out.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("reference values: ") + e.what());
  }
  return out;
}

std::vector<Discrepancy> compare_to_reference(const MetricReport& report,
                                              std::span<const ReferenceValue> reference) {
  std::vector<Discrepancy> out;
  for (const auto& ref : reference) {
    double observed = 0.0;
    std::string derivation;
    if (ref.metric == "precision" || ref.metric == "recall") {
      auto it = std::find_if(report.classes.begin(), report.classes.end(),
                             [&](const ClassMetrics& c) { return c.name == ref.class_name; });
      if (it == report.classes.end()) {
        throw Error(ErrorKind::InvalidParameter, "reference names unknown class '" + ref.class_name + "'");
      }
      if (ref.metric == "precision") {
        observed = it->precision;
        derivation = fmt::format("{}/{}", it->true_positives, it->predicted);
      } else {
        observed = it->recall;
        derivation = fmt::format("{}/{}", it->true_positives, it->support);
      }
    } else if (ref.metric == "accuracy") {
      observed = report.accuracy;
    } else if (ref.metric == "macro_recall") {
      observed = report.macro_recall;
    } else if (ref.metric == "weighted_recall") {
      observed = report.weighted_recall;
    } else if (ref.metric == "mae") {
      observed = report.mae;
    } else if (ref.metric == "mse") {
      observed = report.mse;
    } else if (ref.metric == "rmse") {
      observed = report.rmse;
    } else {
      throw Error(ErrorKind::InvalidParameter, "unknown reference metric '" + ref.metric + "'");
    }
    if (std::abs(observed - ref.value) <= ref.tolerance) continue;
    Discrepancy d{ref, observed, ""};
    const std::string subject = ref.class_name.empty() ? ref.metric : ref.metric + " of class " + ref.class_name;
    d.explanation = fmt::format("reported {} = {:.4f} but the confusion matrix yields {:.4f}", subject, ref.value,
                                observed);
    if (!derivation.empty()) d.explanation += " (" + derivation + ")";
    out.push_back(std::move(d));
  }
  return out;
}

json to_json(const Discrepancy& d) {
  json j{{"metric", d.reference.metric},
         {"reported", d.reference.value},
         {"observed", d.observed},
         {"explanation", d.explanation}};
  if (!d.reference.class_name.empty()) j["class"] = d.reference.class_name;
  return j;
}

std::vector<Prediction> parse_predictions_jsonl(std::string_view text) {
  std::vector<Prediction> out;
  const auto lines = io::split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t") == std::string::npos) continue;
    try {
      const auto j = json::parse(lines[i]);
      out.push_back(Prediction{j.value("case", ""), j.at("true").get<std::string>(),
                               j.at("pred").get<std::string>()});
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ParseError, fmt::format("line {}: {}", i + 1, e.what()));
    }
  }
  return out;
}

ConfusionMatrix confusion_from_predictions(std::span<const Prediction> predictions) {
  if (predictions.empty()) throw Error(ErrorKind::EmptyMatrix, "no predictions");
  std::set<std::string> names;
  for (const auto& p : predictions) {
    names.insert(p.truth);
    names.insert(p.predicted);
  }
  std::vector<std::string> order;
  std::optional<geometry::Space> space;
  bool sectors = true;
  for (const auto& n : names) {
    try {
      const auto label = geometry::SectorLabel::parse(n);
      if (space && *space != label.space()) sectors = false;
      space = label.space();
    } catch (const Error&) {
      sectors = false;
    }
  }
  if (sectors && space) {
    order = geometry::class_names(*space);
  } else {
    order.assign(names.begin(), names.end());
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < order.size(); ++i) index[order[i]] = i;
  ConfusionMatrix cm(order.size(), order);
  for (const auto& p : predictions) {
    // Sector labels may arrive in lower case.
    auto lookup = [&](const std::string& s) {
      if (sectors) return index.at(std::string(geometry::SectorLabel::parse(s).name()));
      return index.at(s);
    };
    cm.add(lookup(p.truth), lookup(p.predicted));
  }
  return cm;
}

}  // namespace caninelab::metrics
