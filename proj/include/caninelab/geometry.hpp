// SPDX-License-Identifier: Apache-2.0
//
// Sector boundaries around the maxillary lateral incisor and classification
// of an unerupted canine's crown point into the 5-, 4- and 3-sector systems.
//
// Image coordinates are pixels with y increasing downward. Every boundary
// line carries a normal oriented toward the mesial side, so a positive
// signed distance always means "mesial of this line".
#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace caninelab::geometry {

struct Point2D {
  double x = 0.0;
  double y = 0.0;

  friend Point2D operator+(Point2D a, Point2D b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2D operator-(Point2D a, Point2D b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2D operator*(double s, Point2D a) { return {s * a.x, s * a.y}; }
  friend bool operator==(const Point2D&, const Point2D&) = default;
};

double dot(Point2D a, Point2D b);
double norm(Point2D a);

/// Minimum separation (px) of the two points defining a line.
inline constexpr double kDegenerateTolerance = 1e-6;
/// Default half-width of the on-boundary tie band (px).
inline constexpr double kTieEpsilon = 1e-9;

class Line2D {
 public:
  /// Line through `a` and `b` whose normal points toward `mesial`.
  /// Throws DegenerateLine if the points coincide within 1e-6 px or the line
  /// runs parallel to the mesial direction (it would separate nothing).
  static Line2D through(Point2D a, Point2D b, Point2D mesial);

  Point2D anchor() const { return anchor_; }
  Point2D direction() const { return direction_; }
  Point2D normal() const { return normal_; }

  /// Mesial-positive perpendicular distance from `p`.
  double signed_distance(Point2D p) const { return dot(p - anchor_, normal_); }

 private:
  Line2D(Point2D anchor, Point2D direction, Point2D normal)
      : anchor_(anchor), direction_(direction), normal_(normal) {}

  Point2D anchor_;
  Point2D direction_;
  Point2D normal_;
};

struct IncisorAnnotation {
  Point2D crown_tip;
  Point2D root_apex;
  // Heights of contour; unused for the central incisor.
  Point2D distal_crown_hoc;
  Point2D distal_root_hoc;
  Point2D mesial_crown_hoc;
  Point2D mesial_root_hoc;
};

enum class Side { Left, Right };

std::string_view to_string(Side side);
Side parse_side(std::string_view text);

struct CanineCase {
  std::string case_id;
  Side side = Side::Right;
  Point2D canine_point;
  IncisorAnnotation lateral;
  IncisorAnnotation central;  // only crown_tip and root_apex are read
};

struct SectorBoundarySet {
  Line2D distal_tangent;  // d1
  Line2D lateral_axis;    // d2
  Line2D mesial_tangent;  // d3
  Line2D central_axis;    // d4
  Point2D mesial_dir;

  const Line2D& operator[](std::size_t i) const;
};

using Distances = std::array<double, 4>;

// ---------------------------------------------------------------------------
// Labels

enum class Space { Five, Four, Three };

inline constexpr int class_count(Space s) {
  switch (s) {
    case Space::Five: return 5;
    case Space::Four: return 4;
    case Space::Three: return 3;
  }
  return 0;
}

std::string_view to_string(Space space);
/// Accepts "FIVE"/"5", "FOUR"/"4", "THREE"/"3" (case-insensitive).
Space parse_space(std::string_view text);

class SectorLabel {
 public:
  /// `index` is zero based: S1 is {Five, 0}, IV is {Four, 3}, C is {Three, 2}.
  SectorLabel(Space space, int index);

  /// Parses "S1".."S5", "I".."IV", "A".."C"; the space follows from the name.
  static SectorLabel parse(std::string_view name);

  Space space() const { return space_; }
  int index() const { return index_; }
  std::string_view name() const;

  friend bool operator==(const SectorLabel&, const SectorLabel&) = default;

 private:
  Space space_;
  int index_;
};

std::vector<std::string> class_names(Space space);

struct MergeMap3 {
  std::string name;
  std::array<int, 5> to_three{};  // S1..S5 -> A=0, B=1, C=2

  /// Throws InvalidMergeMap unless every target is in {0,1,2} and each
  /// three-class label covers one contiguous run of five-sector labels.
  void validate() const;

  static MergeMap3 mesial_risk();        // S1->C, S2->B, S3..S5->A
  static MergeMap3 distal_favorable();   // S1,S2->A, S3,S4->B, S5->C
  static MergeMap3 preset(std::string_view name);
};

// ---------------------------------------------------------------------------
// Operations

SectorBoundarySet build_boundaries(const CanineCase& c);

Distances signed_distances(Point2D p, const SectorBoundarySet& b);

/// Sector from a sign pattern. Distances within [-eps, eps] count as mesial.
/// Throws AmbiguousGeometry for non-monotone patterns.
SectorLabel classify5(const Distances& d, double eps = kTieEpsilon);
SectorLabel classify5(Point2D p, const SectorBoundarySet& b, double eps = kTieEpsilon);

SectorLabel merge_to4(const SectorLabel& five);
SectorLabel merge_to3(const SectorLabel& five, const MergeMap3& map);

SectorLabel classify(const CanineCase& c, Space space,
                     const MergeMap3& map = MergeMap3::mesial_risk());

/// True when the side tag agrees with the crown-tip derived mesial direction
/// (patient right appears on the image left, so its mesial direction is +x).
bool side_consistent(const CanineCase& c, const SectorBoundarySet& b);

// ---------------------------------------------------------------------------
// Annotation files

struct Radiograph {
  std::string radiograph_id;
  std::vector<CanineCase> cases;
};

Radiograph parse_annotations(std::string_view json_text);
Radiograph load_annotations(const std::string& path);

}  // namespace caninelab::geometry
