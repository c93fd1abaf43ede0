// SPDX-License-Identifier: Apache-2.0
#include "caninelab/geometry.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "caninelab/error.hpp"
#include "caninelab/io.hpp"

namespace caninelab::geometry {

namespace {

constexpr std::array<std::string_view, 5> kFiveNames{"S1", "S2", "S3", "S4", "S5"};
constexpr std::array<std::string_view, 4> kFourNames{"I", "II", "III", "IV"};
constexpr std::array<std::string_view, 3> kThreeNames{"A", "B", "C"};

std::string upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

}  // namespace

double dot(Point2D a, Point2D b) { return a.x * b.x + a.y * b.y; }
double norm(Point2D a) { return std::hypot(a.x, a.y); }

Line2D Line2D::through(Point2D a, Point2D b, Point2D mesial) {
  const Point2D d = b - a;
  const double len = norm(d);
  if (!(len > kDegenerateTolerance)) {
    throw Error(ErrorKind::DegenerateLine, "defining points coincide");
  }
  const Point2D dir = (1.0 / len) * d;
  Point2D normal{-dir.y, dir.x};
  const double side = dot(normal, mesial);
  if (std::abs(side) < 1e-9) {
    throw Error(ErrorKind::DegenerateLine, "line is parallel to the mesial direction");
  }
  if (side < 0) normal = -1.0 * normal;
  return Line2D(a, dir, normal);
}

std::string_view to_string(Side side) { return side == Side::Left ? "left" : "right"; }

Side parse_side(std::string_view text) {
  const auto u = upper(text);
  if (u == "LEFT") return Side::Left;
  if (u == "RIGHT") return Side::Right;
  throw Error(ErrorKind::ParseError, "side must be 'left' or 'right', got '" + std::string(text) + "'");
}

const Line2D& SectorBoundarySet::operator[](std::size_t i) const {
  switch (i) {
    case 0: return distal_tangent;
    case 1: return lateral_axis;
    case 2: return mesial_tangent;
    default: return central_axis;
  }
}

std::string_view to_string(Space space) {
  switch (space) {
    case Space::Five: return "FIVE";
    case Space::Four: return "FOUR";
    case Space::Three: return "THREE";
  }
  return "?";
}

Space parse_space(std::string_view text) {
  const auto u = upper(text);
  if (u == "FIVE" || u == "5") return Space::Five;
  if (u == "FOUR" || u == "4") return Space::Four;
  if (u == "THREE" || u == "3") return Space::Three;
  throw Error(ErrorKind::ParseError, "unknown label space '" + std::string(text) + "'");
}

SectorLabel::SectorLabel(Space space, int index) : space_(space), index_(index) {
  if (index < 0 || index >= class_count(space)) {
    throw Error(ErrorKind::InvalidLabel, "index " + std::to_string(index) + " outside " +
                                             std::string(to_string(space)) + " space");
  }
}

SectorLabel SectorLabel::parse(std::string_view name) {
  const auto u = upper(name);
  for (std::size_t i = 0; i < kFiveNames.size(); ++i)
    if (u == kFiveNames[i]) return {Space::Five, static_cast<int>(i)};
  for (std::size_t i = 0; i < kFourNames.size(); ++i)
    if (u == kFourNames[i]) return {Space::Four, static_cast<int>(i)};
  for (std::size_t i = 0; i < kThreeNames.size(); ++i)
    if (u == kThreeNames[i]) return {Space::Three, static_cast<int>(i)};
  throw Error(ErrorKind::InvalidLabel, "unknown sector label '" + std::string(name) + "'");
}

std::string_view SectorLabel::name() const {
  switch (space_) {
    case Space::Five: return kFiveNames[index_];
    case Space::Four: return kFourNames[index_];
    case Space::Three: return kThreeNames[index_];
  }
  return "?";
}

std::vector<std::string> class_names(Space space) {
  std::vector<std::string> out;
  for (int i = 0; i < class_count(space); ++i) out.emplace_back(SectorLabel(space, i).name());
  return out;
}

void MergeMap3::validate() const {
  for (int v : to_three) {
    if (v < 0 || v > 2) throw Error(ErrorKind::InvalidMergeMap, name + ": target outside A..C");
  }
  // Each target value must occupy a single run along S1..S5.
  std::set<int> closed;
  for (std::size_t i = 0; i < to_three.size(); ++i) {
    if (closed.contains(to_three[i])) {
      throw Error(ErrorKind::InvalidMergeMap, name + ": sectors of one class are interleaved");
    }
    if (i + 1 < to_three.size() && to_three[i + 1] != to_three[i]) closed.insert(to_three[i]);
  }
}

MergeMap3 MergeMap3::mesial_risk() { return {"mesial-risk", {2, 1, 0, 0, 0}}; }
MergeMap3 MergeMap3::distal_favorable() { return {"distal-favorable", {0, 0, 1, 1, 2}}; }

MergeMap3 MergeMap3::preset(std::string_view name) {
  if (name == "mesial-risk") return mesial_risk();
  if (name == "distal-favorable") return distal_favorable();
  throw Error(ErrorKind::InvalidMergeMap, "unknown merge preset '" + std::string(name) + "'");
}

SectorBoundarySet build_boundaries(const CanineCase& c) {
  const Point2D toward_central = c.central.crown_tip - c.lateral.crown_tip;
  const double len = norm(toward_central);
  if (!(len > kDegenerateTolerance)) {
    throw Error(ErrorKind::DegenerateDirection,
                "case '" + c.case_id + "': lateral and central crown tips coincide");
  }
  const Point2D mesial = (1.0 / len) * toward_central;
  auto line = [&](Point2D a, Point2D b, std::string_view what) {
    try {
      return Line2D::through(a, b, mesial);
    } catch (const Error& e) {
      throw Error(e.kind(), "case '" + c.case_id + "', " + std::string(what) + ": " + e.message());
    }
  };
  return SectorBoundarySet{
      line(c.lateral.distal_crown_hoc, c.lateral.distal_root_hoc, "lateral distal tangent"),
      line(c.lateral.crown_tip, c.lateral.root_apex, "lateral long axis"),
      line(c.lateral.mesial_crown_hoc, c.lateral.mesial_root_hoc, "lateral mesial tangent"),
      line(c.central.crown_tip, c.central.root_apex, "central long axis"),
      mesial,
  };
}

Distances signed_distances(Point2D p, const SectorBoundarySet& b) {
  return {b.distal_tangent.signed_distance(p), b.lateral_axis.signed_distance(p),
          b.mesial_tangent.signed_distance(p), b.central_axis.signed_distance(p)};
}

SectorLabel classify5(const Distances& d, double eps) {
  // Valid patterns are a run of mesial (+) signs followed by distal (-) signs.
  int mesial_count = 0;
  bool seen_distal = false;
  for (double delta : d) {
    const bool mesial = delta >= -eps;
    if (mesial && seen_distal) {
      throw Error(ErrorKind::AmbiguousGeometry,
                  "point is distal to one boundary but mesial to a later one");
    }
    if (mesial) {
      ++mesial_count;
    } else {
      seen_distal = true;
    }
  }
  return {Space::Five, mesial_count};
}

SectorLabel classify5(Point2D p, const SectorBoundarySet& b, double eps) {
  return classify5(signed_distances(p, b), eps);
}

SectorLabel merge_to4(const SectorLabel& five) {
  if (five.space() != Space::Five) throw Error(ErrorKind::InvalidLabel, "merge_to4 expects S1..S5");
  return {Space::Four, std::min(five.index(), 3)};
}

SectorLabel merge_to3(const SectorLabel& five, const MergeMap3& map) {
  if (five.space() != Space::Five) throw Error(ErrorKind::InvalidLabel, "merge_to3 expects S1..S5");
  return {Space::Three, map.to_three[static_cast<std::size_t>(five.index())]};
}

SectorLabel classify(const CanineCase& c, Space space, const MergeMap3& map) {
  const auto five = classify5(c.canine_point, build_boundaries(c));
  switch (space) {
    case Space::Five: return five;
    case Space::Four: return merge_to4(five);
    case Space::Three: return merge_to3(five, map);
  }
  return five;
}

bool side_consistent(const CanineCase& c, const SectorBoundarySet& b) {
  return (c.side == Side::Right) == (b.mesial_dir.x > 0);
}

// ---------------------------------------------------------------------------

namespace {

Point2D point_from(const nlohmann::json& j, std::string_view field) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw Error(ErrorKind::ParseError, std::string(field) + " must be [x, y]");
  }
  Point2D p{j[0].get<double>(), j[1].get<double>()};
  if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
    throw Error(ErrorKind::ParseError, std::string(field) + " is not finite");
  }
  return p;
}

Point2D required_point(const nlohmann::json& obj, const char* field) {
  if (!obj.contains(field)) throw Error(ErrorKind::ParseError, std::string("missing ") + field);
  return point_from(obj.at(field), field);
}

}  // namespace

Radiograph parse_annotations(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::ParseError, e.what());
  }
  if (!doc.is_object() || !doc.contains("cases") || !doc["cases"].is_array()) {
    throw Error(ErrorKind::ParseError, "annotation document needs a 'cases' array");
  }
  Radiograph r;
  r.radiograph_id = doc.value("radiograph_id", "");
  std::set<std::string> seen;
  try {
  for (const auto& jc : doc["cases"]) {
    CanineCase c;
    c.case_id = jc.value("case_id", "");
    if (c.case_id.empty()) throw Error(ErrorKind::ParseError, "case without case_id");
    if (!seen.insert(c.case_id).second) {
      throw Error(ErrorKind::ParseError, "duplicate case_id '" + c.case_id + "'");
    }
    c.side = parse_side(jc.value("side", ""));
    c.canine_point = required_point(jc, "canine_point");
    const auto& lat = jc.at("lateral");
    c.lateral.crown_tip = required_point(lat, "crown_tip");
    c.lateral.root_apex = required_point(lat, "root_apex");
    c.lateral.distal_crown_hoc = required_point(lat, "distal_crown_hoc");
    c.lateral.distal_root_hoc = required_point(lat, "distal_root_hoc");
    c.lateral.mesial_crown_hoc = required_point(lat, "mesial_crown_hoc");
    c.lateral.mesial_root_hoc = required_point(lat, "mesial_root_hoc");
    const auto& cen = jc.at("central");
    c.central.crown_tip = required_point(cen, "crown_tip");
    c.central.root_apex = required_point(cen, "root_apex");
    r.cases.push_back(std::move(c));
  }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, e.what());
  }
  return r;
}

Radiograph load_annotations(const std::string& path) {
  return parse_annotations(io::read_text_file(path));
}

}  // namespace caninelab::geometry
