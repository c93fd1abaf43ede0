// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "caninelab/distill.hpp"
#include "caninelab/error.hpp"
#include "caninelab/io.hpp"
#include "caninelab/random.hpp"

namespace caninelab::distill {

using geometry::Point2D;
using geometry::Side;
using nlohmann::json;

SplitIndices split_indices(const Dataset& data, const SplitSpec& spec) {
  if (data.empty()) throw Error(ErrorKind::EmptyDataset, "cannot split an empty dataset");
  if (!(spec.train_fraction >= 0.0 && spec.train_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "train_fraction must lie in [0, 1]");
  }
  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  Rng rng(derive_seed(spec.seed, 0x5b11));
  std::vector<bool> in_train(n, false);

  if (!spec.stratified) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;
  } else {
    std::vector<std::vector<std::size_t>> by_class(kClasses);
    for (std::size_t i = 0; i < n; ++i) {
      const int label = data[i].label;
      if (label < 0 || label >= kClasses) throw Error(ErrorKind::LabelOutOfRange, "sample label outside A..C");
      by_class[static_cast<std::size_t>(label)].push_back(i);
    }
    // Largest remainder allocation of n_train across classes.
    std::vector<std::size_t> quota(kClasses);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t allocated = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      const double exact = static_cast<double>(by_class[c].size()) * static_cast<double>(n_train) / static_cast<double>(n);
      quota[c] = static_cast<std::size_t>(std::floor(exact));
      allocated += quota[c];
      remainders.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; allocated < n_train && r < remainders.size(); ++r, ++allocated) {
      ++quota[remainders[r].second];
    }
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      auto members = by_class[c];
      rng.shuffle(members.begin(), members.end());
      for (std::size_t i = 0; i < quota[c]; ++i) in_train[members[i]] = true;
    }
  }
  SplitIndices out;
  for (std::size_t i = 0; i < n; ++i) (in_train[i] ? out.train : out.validation).push_back(i);
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec) {
  const auto idx = split_indices(data, spec);
  Dataset train, validation;
  train.reserve(idx.train.size());
  validation.reserve(idx.validation.size());
  for (auto i : idx.train) train.push_back(data[i]);
  for (auto i : idx.validation) validation.push_back(data[i]);
  return {std::move(train), std::move(validation)};
}

// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
  double sum = 0.0;
  for (double p : proportions) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw Error(ErrorKind::InvalidProportions, "proportions must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw Error(ErrorKind::InvalidProportions, fmt::format("proportions sum to {}, not 1", sum));
  }
  if (feature_dim < 6) throw Error(ErrorKind::InvalidConfig, "feature_dim must be at least 6");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw Error(ErrorKind::InvalidConfig, "noise_sigma must be non-negative");
  }
  geometry::MergeMap3::preset(preset).validate();
}

json to_json(const SynthConfig& c) {
  return json{{"proportions", c.proportions}, {"n", c.n},           {"noise_sigma", c.noise_sigma},
              {"feature_dim", c.feature_dim}, {"preset", c.preset}, {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "synth config must be a JSON object");
  static const std::set<std::string> known{"proportions", "n", "noise_sigma", "feature_dim", "preset", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw Error(ErrorKind::InvalidConfig, "unknown synth key '" + key + "'");
  }
  SynthConfig c;
  try {
    c.proportions = j.value("proportions", c.proportions);
    c.n = j.value("n", c.n);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.preset = j.value("preset", c.preset);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

namespace {

// Fixture dimensions in pixels. Local frame: u grows mesially, v grows
// toward the root (image up); crown tips sit at v = 0.
constexpr double kImageWidth = 2000.0;
constexpr double kCrownRow = 900.0;
constexpr double kOuterMargin = 40.0;   // width of the outer strips S1 and S5
constexpr double kPointVMin = 20.0;     // canine points lie apical of the crowns
constexpr double kPointVMax = 100.0;
constexpr double kMmPerPx = 0.1;
constexpr double kDistanceScale = 10.0;  // px per feature unit
constexpr double kCoordScale = 500.0;

struct Fixture {
  std::array<double, 4> u0{};     // crossing of each line with v = 0
  std::array<double, 4> slope{};  // du/dv
  double lateral_root = 0.0;
  double central_root = 0.0;
  double origin_x = 0.0;          // image x of u = 0 (right side)
  Side side = Side::Right;

  double u_at(std::size_t line, double v) const { return u0[line] + slope[line] * v; }

  Point2D to_image(double u, double v) const {
    const double x = origin_x + u;
    return {side == Side::Right ? x : kImageWidth - x, kCrownRow - v};
  }
};

Fixture draw_fixture(Rng& rng) {
  Fixture f;
  const double half_distal = rng.uniform(25.0, 35.0);
  const double half_mesial = rng.uniform(25.0, 35.0);
  f.u0 = {-half_distal, 0.0, half_mesial, half_mesial + rng.uniform(30.0, 50.0)};
  for (auto& s : f.slope) s = std::tan(rng.uniform(-0.08, 0.08));
  f.lateral_root = rng.uniform(120.0, 160.0);
  f.central_root = rng.uniform(140.0, 180.0);
  f.origin_x = 850.0 + rng.uniform(-40.0, 40.0);
  f.side = rng.uniform() < 0.5 ? Side::Right : Side::Left;
  return f;
}

geometry::CanineCase annotate(const Fixture& f, Point2D canine, std::string id) {
  auto on = [&](std::size_t line, double v) { return f.to_image(f.u_at(line, v), v); };
  geometry::CanineCase c;
  c.case_id = std::move(id);
  c.side = f.side;
  c.canine_point = canine;
  c.lateral.crown_tip = on(1, 0.0);
  c.lateral.root_apex = on(1, f.lateral_root);
  c.lateral.distal_crown_hoc = on(0, 5.0);
  c.lateral.distal_root_hoc = on(0, 80.0);
  c.lateral.mesial_crown_hoc = on(2, 5.0);
  c.lateral.mesial_root_hoc = on(2, 80.0);
  c.central.crown_tip = on(3, 0.0);
  c.central.root_apex = on(3, f.central_root);
  return c;
}

}  // namespace

SynthDataset synth_generate(const SynthConfig& config) {
  config.validate();
  const auto merge = geometry::MergeMap3::preset(config.preset);
  const int m = config.feature_dim;

  Rng projection_rng(derive_seed(config.seed, 0x9e01));
  MatrixXd projection(m, 6);
  for (Eigen::Index r = 0; r < projection.rows(); ++r)
    for (Eigen::Index c = 0; c < projection.cols(); ++c) projection(r, c) = projection_rng.normal() / std::sqrt(6.0);

  Rng rng(derive_seed(config.seed, 0x9e02));
  SynthDataset out;
  out.samples.reserve(config.n);
  out.sources.reserve(config.n);
  for (std::size_t i = 0; i < config.n; ++i) {
    const double draw = rng.uniform();
    int label = kClasses - 1;
    double cumulative = 0.0;
    for (int c = 0; c < kClasses; ++c) {
      cumulative += config.proportions[static_cast<std::size_t>(c)];
      if (draw < cumulative) {
        label = c;
        break;
      }
    }
    // Guard against a zero-proportion tail class catching rounding residue.
    while (config.proportions[static_cast<std::size_t>(label)] == 0.0) --label;

    // The five-sector run that merges into this label.
    int first = -1, last = -1;
    for (int s = 0; s < 5; ++s) {
      if (merge.to_three[static_cast<std::size_t>(s)] == label) {
        if (first < 0) first = s;
        last = s;
      }
    }
    if (first < 0) throw Error(ErrorKind::InvalidConfig, "merge preset never produces the drawn label");

    const Fixture f = draw_fixture(rng);
    const double v = rng.uniform(kPointVMin, kPointVMax);
    const double lo = first == 0 ? f.u_at(0, v) - kOuterMargin : f.u_at(static_cast<std::size_t>(first - 1), v);
    const double hi = last == 4 ? f.u_at(3, v) + kOuterMargin : f.u_at(static_cast<std::size_t>(last), v);
    const double u = rng.uniform(lo, hi);
    const Point2D point = f.to_image(u, v);

    auto annotation = annotate(f, point, fmt::format("syn{:06d}", i + 1));
    const auto boundaries = geometry::build_boundaries(annotation);
    const auto distances = geometry::signed_distances(point, boundaries);
    if (geometry::merge_to3(geometry::classify5(distances), merge).index() != label) {
      throw Error(ErrorKind::AmbiguousGeometry, "generated point for " + annotation.case_id +
                                                    " does not classify into its drawn label");
    }

    VectorXd raw(6);
    raw << distances[0] / kDistanceScale, distances[1] / kDistanceScale, distances[2] / kDistanceScale,
        distances[3] / kDistanceScale, (point.x - kImageWidth / 2.0) / kCoordScale, (point.y - kCrownRow) / kCoordScale;
    VectorXd features = projection * raw;
    for (Eigen::Index k = 0; k < features.size(); ++k) features[k] += config.noise_sigma * rng.normal();

    // Clinical values grow with the mesial position past the distal tangent.
    const double mesial_mm = distances[0] * kMmPerPx;
    Sample s;
    s.case_id = annotation.case_id;
    s.image_features = std::move(features);
    s.label = label;
    s.clinical.depth_mm = 10.0 + 0.3 * mesial_mm + 0.5 * rng.normal();
    s.clinical.angle_deg = 10.0 + 1.5 * mesial_mm + 2.0 * rng.normal();
    s.clinical.root_maturity = std::clamp(0.5 + 0.02 * mesial_mm + 0.15 * rng.normal(), 0.0, 1.0);

    out.samples.push_back(std::move(s));
    out.sources.push_back(SynthSource{std::move(annotation), distances});
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string write_manifest(const Dataset& data) {
  if (data.empty()) throw Error(ErrorKind::EmptyDataset, "nothing to write");
  const auto m = data.front().image_features.size();
  std::string out = "case_id,label,depth_mm,angle_deg,root_maturity";
  for (Eigen::Index k = 0; k < m; ++k) out += fmt::format(",f{}", k);
  out += '\n';
  for (const auto& s : data) {
    if (s.image_features.size() != m) throw Error(ErrorKind::ShapeMismatch, "samples differ in feature length");
    if (s.case_id.find_first_of(",\n\r\"") != std::string::npos) {
      throw Error(ErrorKind::InvalidParameter, "case_id '" + s.case_id + "' cannot be written unquoted");
    }
    out += s.case_id;
    out += ',';
    out += geometry::SectorLabel(geometry::Space::Three, s.label).name();
    for (double v : {s.clinical.depth_mm, s.clinical.angle_deg, s.clinical.root_maturity}) {
      out += ',';
      out += io::format_double(v);
    }
    for (Eigen::Index k = 0; k < m; ++k) {
      out += ',';
      out += io::format_double(s.image_features[k]);
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

double parse_number(std::string_view text, std::size_t line) {
  double v = 0.0;
  const auto* begin = text.data();
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw Error(ErrorKind::ParseError, fmt::format("line {}: '{}' is not a finite number", line, text));
  }
  return v;
}

}  // namespace

Dataset parse_manifest(std::string_view csv) {
  const auto lines = io::split_lines(csv);
  if (lines.empty()) throw Error(ErrorKind::ParseError, "manifest is empty");
  const auto header = split_fields(lines[0]);
  const std::array<std::string_view, 5> fixed{"case_id", "label", "depth_mm", "angle_deg", "root_maturity"};
  if (header.size() < fixed.size() + 1) throw Error(ErrorKind::ParseError, "manifest header has no feature columns");
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    if (header[i] != fixed[i]) {
      throw Error(ErrorKind::ParseError, fmt::format("header column {} must be '{}'", i + 1, fixed[i]));
    }
  }
  const std::size_t m = header.size() - fixed.size();
  for (std::size_t k = 0; k < m; ++k) {
    if (header[fixed.size() + k] != fmt::format("f{}", k)) {
      throw Error(ErrorKind::ParseError, fmt::format("header column {} must be 'f{}'", fixed.size() + k + 1, k));
    }
  }
  Dataset out;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const auto fields = split_fields(lines[li]);
    if (fields.size() != header.size()) {
      throw Error(ErrorKind::ParseError,
                  fmt::format("line {}: expected {} fields, got {}", li + 1, header.size(), fields.size()));
    }
    Sample s;
    s.case_id = std::string(fields[0]);
    try {
      const auto label = geometry::SectorLabel::parse(fields[1]);
      if (label.space() != geometry::Space::Three) throw Error(ErrorKind::InvalidLabel, "not a three-sector label");
      s.label = label.index();
    } catch (const Error& e) {
      throw Error(ErrorKind::ParseError, fmt::format("line {}: {}", li + 1, e.message()));
    }
    s.clinical = Clinical{parse_number(fields[2], li + 1), parse_number(fields[3], li + 1),
                          parse_number(fields[4], li + 1)};
    s.image_features.resize(static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < m; ++k) {
      s.image_features[static_cast<Eigen::Index>(k)] = parse_number(fields[fixed.size() + k], li + 1);
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw Error(ErrorKind::EmptyDataset, "manifest has no samples");
  return out;
}

}  // namespace caninelab::distill
