// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <string>

#include "caninelab/error.hpp"
#include "caninelab/geometry.hpp"
#include "support.hpp"

using namespace caninelab;
using namespace caninelab::geometry;
using caninelab::testing::vertical_strip;

namespace {

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::IoError;
}

CanineCase mirrored(const CanineCase& c, double axis_x) {
  auto m = [axis_x](Point2D p) { return Point2D{2 * axis_x - p.x, p.y}; };
  CanineCase r = c;
  r.side = c.side == Side::Right ? Side::Left : Side::Right;
  r.canine_point = m(c.canine_point);
  for (auto* inc : {&r.lateral, &r.central}) {
    inc->crown_tip = m(inc->crown_tip);
    inc->root_apex = m(inc->root_apex);
    inc->distal_crown_hoc = m(inc->distal_crown_hoc);
    inc->distal_root_hoc = m(inc->distal_root_hoc);
    inc->mesial_crown_hoc = m(inc->mesial_crown_hoc);
    inc->mesial_root_hoc = m(inc->mesial_root_hoc);
  }
  return r;
}

}  // namespace

TEST_CASE("vertical strip boundaries have +x normals") {
  const auto b = build_boundaries(vertical_strip());
  CHECK(b.mesial_dir == Point2D{1, 0});
  const double xs[] = {10, 20, 30, 40};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(b[i].normal().x == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(b[i].normal().y) < 1e-15);
    CHECK(b[i].signed_distance({xs[i], 57.0}) == doctest::Approx(0.0));
    CHECK(std::abs(norm(b[i].direction()) - 1.0) < 1e-9);
    CHECK(std::abs(dot(b[i].direction(), b[i].normal())) < 1e-12);
  }
}

TEST_CASE("mirrored strip keeps the lines and flips the normals") {
  const auto c = mirrored(vertical_strip(), 0.0);
  const auto b = build_boundaries(c);
  CHECK(b.mesial_dir == Point2D{-1, 0});
  const double xs[] = {-10, -20, -30, -40};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(b[i].normal().x == doctest::Approx(-1.0));
    CHECK(b[i].signed_distance({xs[i], 3.0}) == doctest::Approx(0.0));
  }
  CHECK(side_consistent(c, b));
}

TEST_CASE("degenerate annotations are rejected") {
  auto c = vertical_strip();
  c.lateral.distal_root_hoc = c.lateral.distal_crown_hoc;
  CHECK(kind_of([&] { build_boundaries(c); }) == ErrorKind::DegenerateLine);

  auto d = vertical_strip();
  d.central.crown_tip = d.lateral.crown_tip;
  CHECK(kind_of([&] { build_boundaries(d); }) == ErrorKind::DegenerateDirection);

  auto e = vertical_strip();
  e.lateral.root_apex = e.lateral.crown_tip + Point2D{5e-7, 0};
  CHECK(kind_of([&] { build_boundaries(e); }) == ErrorKind::DegenerateLine);
}

TEST_CASE("signed distances on the strip are x offsets") {
  const auto b = build_boundaries(vertical_strip());
  const auto d = signed_distances({25, 0}, b);
  CHECK(d[0] == doctest::Approx(15));
  CHECK(d[1] == doctest::Approx(5));
  CHECK(d[2] == doctest::Approx(-5));
  CHECK(d[3] == doctest::Approx(-15));
  CHECK(signed_distances({20, 0}, b)[1] == 0.0);
}

TEST_CASE("slanted line distance") {
  const auto line = Line2D::through({0, 0}, {0, 1}, {1, 0});
  CHECK(line.signed_distance({3, 7}) == doctest::Approx(3.0));
  // Point-line distance by the cross-product formula.
  const auto slanted = Line2D::through({0, 0}, {1, 2}, {1, 0});
  const double expected = std::abs(3.0 * 2.0 - 7.0 * 1.0) / std::sqrt(5.0);
  CHECK(std::abs(slanted.signed_distance({3, 7})) == doctest::Approx(expected));
  CHECK(slanted.signed_distance({3, 7}) < 0);  // (3,7) lies on the -x side of y = 2x
}

TEST_CASE("five-sector classification on the strip") {
  const auto b = build_boundaries(vertical_strip());
  CHECK(classify5({25, 0}, b).name() == "S3");
  CHECK(classify5({20, 0}, b).name() == "S3");
  CHECK(classify5({45, 0}, b).name() == "S5");
  CHECK(classify5({5, 0}, b).name() == "S1");
  CHECK(classify5({15, 0}, b).name() == "S2");
  CHECK(classify5({35, 0}, b).name() == "S4");
  CHECK(kind_of([] { classify5(Distances{-1, 1, -1, -1}); }) == ErrorKind::AmbiguousGeometry);
  CHECK(kind_of([] { classify5(Distances{1, 1, -1, 1}); }) == ErrorKind::AmbiguousGeometry);
  CHECK(classify5(Distances{-1e-9, -1, -1, -1}).name() == "S2");
  CHECK(classify5(Distances{-1.1e-9, -1, -1, -1}).name() == "S1");
}

TEST_CASE("merges") {
  const char* five[] = {"S1", "S2", "S3", "S4", "S5"};
  const char* four[] = {"I", "II", "III", "IV", "IV"};
  const char* risk[] = {"C", "B", "A", "A", "A"};
  const char* favorable[] = {"A", "A", "B", "B", "C"};
  for (int i = 0; i < 5; ++i) {
    const auto s = SectorLabel::parse(five[i]);
    CHECK(merge_to4(s).name() == four[i]);
    CHECK(merge_to3(s, MergeMap3::mesial_risk()).name() == risk[i]);
    CHECK(merge_to3(s, MergeMap3::preset("distal-favorable")).name() == favorable[i]);
  }
  MergeMap3 interleaved{"bad", {0, 1, 0, 2, 2}};
  CHECK(kind_of([&] { interleaved.validate(); }) == ErrorKind::InvalidMergeMap);
  MergeMap3 out_of_range{"bad", {0, 1, 3, 2, 2}};
  CHECK(kind_of([&] { out_of_range.validate(); }) == ErrorKind::InvalidMergeMap);
  CHECK(kind_of([] { MergeMap3::preset("nope"); }) == ErrorKind::InvalidMergeMap);
}

TEST_CASE("classify composes") {
  CHECK(classify(vertical_strip({25, 0}), Space::Three).name() == "A");
  CHECK(classify(vertical_strip({5, 0}), Space::Four).name() == "I");
  CHECK(classify(vertical_strip({35, 0}), Space::Three).name() == "A");
  CHECK(classify(vertical_strip({5, 0}), Space::Three).name() == "C");
  CHECK(classify(vertical_strip({25, 0}), Space::Five).name() == "S3");
}

TEST_CASE("labels parse and name round-trip") {
  for (auto space : {Space::Five, Space::Four, Space::Three}) {
    for (int i = 0; i < class_count(space); ++i) {
      const SectorLabel l(space, i);
      CHECK(SectorLabel::parse(l.name()) == l);
    }
    CHECK(parse_space(to_string(space)) == space);
  }
  CHECK(parse_space("4") == Space::Four);
  CHECK(kind_of([] { SectorLabel::parse("S6"); }) == ErrorKind::InvalidLabel);
  CHECK(kind_of([] { SectorLabel::parse("D"); }) == ErrorKind::InvalidLabel);
  CHECK(kind_of([] { SectorLabel(Space::Four, 4); }) == ErrorKind::InvalidLabel);
}

TEST_CASE("annotation file parsing") {
  const std::string text = R"({"radiograph_id": "r1", "cases": [
    {"case_id": "c1A", "side": "right", "canine_point": [25, 0],
     "lateral": {"crown_tip": [20, 0], "root_apex": [20, -100], "distal_crown_hoc": [10, 0],
                 "distal_root_hoc": [10, -100], "mesial_crown_hoc": [30, 0], "mesial_root_hoc": [30, -100]},
     "central": {"crown_tip": [40, 0], "root_apex": [40, -100]}}]})";
  const auto r = parse_annotations(text);
  REQUIRE(r.cases.size() == 1);
  CHECK(r.radiograph_id == "r1");
  CHECK(classify(r.cases[0], Space::Five).name() == "S3");
  CHECK(kind_of([] { parse_annotations("{"); }) == ErrorKind::ParseError);
  CHECK(kind_of([] { parse_annotations(R"({"radiograph_id": "r", "cases": [{"case_id": "x"}]})"); }) ==
        ErrorKind::ParseError);
  CHECK(kind_of([] { load_annotations("/nonexistent/file.json"); }) == ErrorKind::IoError);
}

TEST_CASE("randomized fixtures satisfy the sector properties") {
  Rng rng(derive_seed(7, 1));
  for (int trial = 0; trial < 500; ++trial) {
    const auto f = caninelab::testing::random_fixture(rng);
    const double v = rng.uniform(-f.reach, f.reach);
    const auto c = f.to_case(f.world(0, 0));
    const auto b = build_boundaries(c);
    int last = -1;
    for (double u = f.c[0] - 20; u <= f.c[3] + 20; u += 1.0) {
      const auto label = classify5(f.world(u, v), b);
      CHECK(label.index() >= last);
      CHECK(label.index() == f.expected_index(u, v));
      last = label.index();
    }
    CHECK(last == 4);
  }
}
