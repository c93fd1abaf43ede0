// SPDX-License-Identifier: Apache-2.0
//
// Fixtures shared by the unit and acceptance tests.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "caninelab/geometry.hpp"
#include "caninelab/random.hpp"

namespace caninelab::testing {

using geometry::CanineCase;
using geometry::Point2D;

/// The vertical-strip fixture: lateral tangents at x=10 and x=30, lateral
/// axis at x=20, central axis at x=40, mesial = +x.
inline CanineCase vertical_strip(Point2D canine = {25, 0}) {
  CanineCase c;
  c.case_id = "strip";
  c.side = geometry::Side::Right;
  c.canine_point = canine;
  c.lateral.crown_tip = {20, 0};
  c.lateral.root_apex = {20, -100};
  c.lateral.distal_crown_hoc = {10, 0};
  c.lateral.distal_root_hoc = {10, -100};
  c.lateral.mesial_crown_hoc = {30, 0};
  c.lateral.mesial_root_hoc = {30, -100};
  c.central.crown_tip = {40, 0};
  c.central.root_apex = {40, -100};
  return c;
}

/// A boundary fixture in a local frame: boundary i is u = c[i] + s[i] * v in
/// coordinates (u along the mesial direction, v across it). For |v| <= reach
/// the four lines keep their order, so nothing crosses there.
struct LocalFixture {
  std::array<double, 4> c{};
  std::array<double, 4> s{};
  double reach = 100.0;
  Point2D origin;
  double angle = 0.0;  // of the mesial direction
  double scale = 1.0;

  Point2D mesial() const { return {std::cos(angle), std::sin(angle)}; }
  Point2D across() const { return {-std::sin(angle), std::cos(angle)}; }

  Point2D world(double u, double v) const { return origin + scale * (u * mesial() + v * across()); }

  /// u of boundary i at height v.
  double boundary_u(int i, double v) const { return c[i] + s[i] * v; }

  /// Number of boundaries the local point lies mesial to: the five-sector index.
  int expected_index(double u, double v) const {
    int n = 0;
    for (int i = 0; i < 4; ++i) n += u >= boundary_u(i, v) ? 1 : 0;
    return n;
  }

  CanineCase to_case(Point2D canine_world) const {
    const double crown = 0.5 * reach;
    const double root = -reach;
    auto at = [&](int i, double v) { return world(boundary_u(i, v), v); };
    CanineCase k;
    k.case_id = "fixture";
    k.side = mesial().x > 0 ? geometry::Side::Right : geometry::Side::Left;
    k.canine_point = canine_world;
    k.lateral.distal_crown_hoc = at(0, crown);
    k.lateral.distal_root_hoc = at(0, root);
    k.lateral.mesial_crown_hoc = at(2, crown);
    k.lateral.mesial_root_hoc = at(2, root);
    // Both crown tips sit on the same v so the derived mesial direction is
    // the frame's u axis.
    k.lateral.crown_tip = world(c[1], 0.0);
    k.lateral.root_apex = at(1, root);
    k.central.crown_tip = world(c[3], 0.0);
    k.central.root_apex = at(3, root);
    return k;
  }
};

inline LocalFixture random_fixture(Rng& rng) {
  LocalFixture f;
  f.reach = rng.uniform(50.0, 150.0);
  double u = rng.uniform(-50.0, 50.0);
  for (int i = 0; i < 4; ++i) {
    // Gap > 2 * max|s| * reach keeps the lines apart for |v| <= reach.
    f.s[i] = rng.uniform(-0.1, 0.1);
    f.c[i] = u;
    u += rng.uniform(0.25, 1.0) * f.reach;
  }
  f.origin = {rng.uniform(-500.0, 2500.0), rng.uniform(-500.0, 1500.0)};
  f.angle = rng.uniform(0.0, 2.0 * 3.141592653589793);
  f.scale = rng.uniform(0.2, 5.0);
  return f;
}

inline std::filesystem::path data_dir() { return CANINELAB_TEST_DATA_DIR; }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("caninelab-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace caninelab::testing
