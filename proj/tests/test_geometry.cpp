#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mshield/common.hpp"
#include "mshield/geometry.hpp"

using namespace mshield;

namespace {

RoadGeometry default_road() { return RoadGeometry(RoadParams{}); }

// Exact rectangle-overlap via the separating axis theorem.
struct Rect {
  double x, y, phi, length, width;
};

bool rects_overlap(const Rect& a, const Rect& b) {
  auto corners = [](const Rect& r) {
    std::array<std::pair<double, double>, 4> c;
    const double co = std::cos(r.phi), si = std::sin(r.phi);
    const double hl = 0.5 * r.length, hw = 0.5 * r.width;
    int k = 0;
    for (double sx : {-1.0, 1.0})
      for (double sy : {-1.0, 1.0})
        c[k++] = {r.x + sx * hl * co - sy * hw * si, r.y + sx * hl * si + sy * hw * co};
    return c;
  };
  const auto ca = corners(a), cb = corners(b);
  const double axes[4][2] = {{std::cos(a.phi), std::sin(a.phi)},
                             {-std::sin(a.phi), std::cos(a.phi)},
                             {std::cos(b.phi), std::sin(b.phi)},
                             {-std::sin(b.phi), std::cos(b.phi)}};
  for (const auto& ax : axes) {
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (const auto& p : ca) {
      const double d = p.first * ax[0] + p.second * ax[1];
      amin = std::min(amin, d);
      amax = std::max(amax, d);
    }
    for (const auto& p : cb) {
      const double d = p.first * ax[0] + p.second * ax[1];
      bmin = std::min(bmin, d);
      bmax = std::max(bmax, d);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

// Largest inset m such that the rectangle shrunk by m is fully covered by the
// six-circle union. The binding points are the bumper corners and the lane
// side midway between adjacent circle centers.
double coverage_inset(double length, double width) {
  const double r = length / 6.0;
  const double w = width;
  // Corner condition: (r-m)^2 + (w/2-m)^2 <= r^2.
  const double A = 2.0, B = -(2.0 * r + w), C = 0.25 * w * w;
  const double disc = B * B - 4.0 * A * C;
  const double m_corner = disc >= 0.0 ? (-B - std::sqrt(disc)) / (2.0 * A) : 0.5 * w;
  // Mid-gap condition: w/2 - m <= sqrt(r^2 - (0.4 r)^2).
  const double m_gap = 0.5 * w - std::sqrt(r * r - 0.16 * r * r);
  return std::max({m_corner, m_gap, 0.0});
}

}  // namespace

TEST_CASE("decompose_circles radius and spacing") {
  VehiclePose p;
  p.length = 4.8;
  const auto c = decompose_circles(p);
  const double expect_x[6] = {-1.6, -0.96, -0.32, 0.32, 0.96, 1.6};
  for (int i = 0; i < 6; ++i) {
    CHECK(c[i].r == Catch::Approx(0.8).margin(1e-12));
    CHECK(c[i].cx == Catch::Approx(expect_x[i]).margin(1e-12));
    CHECK(c[i].cy == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("decompose_circles quarter turn swaps axes") {
  VehiclePose p;
  p.length = 4.8;
  p.phi = kPi / 2.0;
  const auto c = decompose_circles(p);
  const double expect_y[6] = {-1.6, -0.96, -0.32, 0.32, 0.96, 1.6};
  for (int i = 0; i < 6; ++i) {
    CHECK(c[i].cx == Catch::Approx(0.0).margin(1e-9));
    CHECK(c[i].cy == Catch::Approx(expect_y[i]).margin(1e-9));
  }
}

TEST_CASE("decompose_circles rotation equivariance") {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    VehiclePose p;
    p.x = rng.uniform(-50, 50);
    p.y = rng.uniform(-50, 50);
    p.phi = rng.uniform(-kPi, kPi);
    p.length = rng.uniform(3.0, 12.0);
    const double theta = rng.uniform(-kPi, kPi);
    VehiclePose q = p;
    const double co = std::cos(theta), si = std::sin(theta);
    q.x = p.x * co - p.y * si;
    q.y = p.x * si + p.y * co;
    q.phi = wrap_angle(p.phi + theta);
    const auto cp = decompose_circles(p);
    const auto cq = decompose_circles(q);
    for (int i = 0; i < 6; ++i) {
      const double rx = cp[i].cx * co - cp[i].cy * si;
      const double ry = cp[i].cx * si + cp[i].cy * co;
      REQUIRE(std::fabs(rx - cq[i].cx) < 1e-9);
      REQUIRE(std::fabs(ry - cq[i].cy) < 1e-9);
    }
  }
}

TEST_CASE("decompose_circles covers the centerline with bumper tangency") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    VehiclePose p;
    p.length = rng.uniform(3.0, 12.0);
    const auto c = decompose_circles(p);
    const double r = p.length / 6.0;
    // End circles tangent to the bumpers.
    REQUIRE(c[0].cx - r == Catch::Approx(-0.5 * p.length).margin(1e-12));
    REQUIRE(c[5].cx + r == Catch::Approx(0.5 * p.length).margin(1e-12));
    // Every centerline point inside some circle.
    for (int k = 0; k <= 500; ++k) {
      const double x = -0.5 * p.length + p.length * k / 500.0;
      bool covered = false;
      for (const auto& ci : c) covered = covered || std::fabs(x - ci.cx) <= ci.r + 1e-12;
      REQUIRE(covered);
    }
  }
}

TEST_CASE("vehicle_constraints formula and ordering") {
  VehiclePose ego;
  VehiclePose other;
  other.y = 3.0;  // same-index circle pairs are exactly 3.0 m apart
  const auto h = vehicle_constraints(ego, {other});
  REQUIRE(h.size() == 36);
  for (int i = 0; i < 6; ++i) {
    CHECK(h[i * 6 + i] == Catch::Approx(1.6 - 3.0).margin(1e-12));
  }
}

TEST_CASE("vehicle_constraints tangency is exactly zero") {
  // L = 4.5 gives r = 0.75; lateral offset 1.5 = r+r with exact arithmetic.
  VehiclePose ego;
  ego.length = 4.5;
  VehiclePose other = ego;
  other.y = 1.5;
  const auto h = vehicle_constraints(ego, {other});
  double hmax = -1e300;
  for (double v : h) hmax = std::max(hmax, v);
  CHECK(hmax == 0.0);
  const auto road = default_road();
  VehiclePose ego_on_road = ego;
  ego_on_road.x = 150.0;
  ego_on_road.y = road.lane_center_y(1);
  VehiclePose other_on_road = other;
  other_on_road.x = 150.0;
  other_on_road.y = road.lane_center_y(1) + 1.5;
  CHECK_FALSE(in_collision(ego_on_road, {other_on_road}, road));
}

TEST_CASE("constraint cardinality is 6*(6N+2)") {
  const auto road = default_road();
  Rng rng(3);
  for (int n = 0; n <= 16; ++n) {
    VehiclePose ego;
    ego.x = 150.0;
    ego.y = road.lane_center_y(1);
    std::vector<VehiclePose> others;
    for (int k = 0; k < n; ++k) {
      VehiclePose v;
      v.x = 10.0 + 15.0 * k;
      v.y = road.lane_center_y(k % 3);
      others.push_back(v);
    }
    const auto cs = make_constraint_set(ego, others, road);
    REQUIRE(cs.size() == static_cast<std::size_t>(6 * (6 * n + 2)));
    REQUIRE(cs.vehicle_h.size() == static_cast<std::size_t>(36 * n));
    REQUIRE(cs.road_h.size() == 12);
    for (double v : cs.vehicle_h) REQUIRE(std::isfinite(v));
    for (double v : cs.road_h) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("road_constraints clearance in an edge lane") {
  const auto road = default_road();
  VehiclePose ego;
  ego.x = 300.0;  // past the acceleration lane: corridor is the 3-lane mainline
  ego.y = road.lane_center_y(0);
  ego.phi = 0.0;
  const auto h = road_constraints(ego, road);
  REQUIRE(h.size() == 12);
  // Right edge is the nearer one: 0.8 - 1.875.
  for (int i = 0; i < 6; ++i) {
    CHECK(h[i * 2 + 1] == Catch::Approx(0.8 - 1.875).margin(1e-12));
    CHECK(h[i * 2 + 0] == Catch::Approx(0.8 - (3.5 * 3.75 - 3.75)).margin(1e-12));
  }
}

TEST_CASE("road_constraints circle center on an edge gives h = r") {
  const auto road = default_road();
  VehiclePose ego;
  ego.x = 300.0;
  ego.y = road.mainline_right_edge_y();  // centers exactly on the right edge
  const auto h = road_constraints(ego, road);
  for (int i = 0; i < 6; ++i) {
    CHECK(h[i * 2 + 1] == Catch::Approx(0.8).margin(1e-12));
  }
}

TEST_CASE("station_frame basics") {
  const auto road = default_road();
  {
    const auto f = road.station_frame(150.0, road.lane_center_y(0));
    CHECK(f.segment == RoadGeometry::kSegLane0);
    CHECK(f.lateral == Catch::Approx(0.0).margin(1e-12));
    CHECK(f.heading == 0.0);
    CHECK(f.station == Catch::Approx(150.0));
  }
  {
    const auto f = road.station_frame(150.0, road.lane_center_y(0) + 1.0);
    CHECK(f.lateral == Catch::Approx(1.0).margin(1e-12));
  }
  {
    double x, y;
    road.ramp_point(0.0, &x, &y);
    const auto f = road.station_frame(x, y);
    CHECK(f.segment == RoadGeometry::kSegRamp);
    CHECK(f.station == Catch::Approx(0.0).margin(1e-9));
    CHECK(f.heading == Catch::Approx(road.ramp_angle()));
  }
}

TEST_CASE("station_frame round trip") {
  const auto road = default_road();
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    int seg;
    double station, lateral;
    const int pick = static_cast<int>(rng.uniform_index(5));
    if (pick == 0) {
      seg = RoadGeometry::kSegRamp;
      station = rng.uniform(0.0, road.ramp_length() - 5.0);
      lateral = rng.uniform(-1.5, 1.5);
    } else if (pick == 1) {
      seg = RoadGeometry::kSegAccel;
      station = rng.uniform(road.merge_station() + 1.0, road.accel_lane_end() - 1.0);
      lateral = rng.uniform(-1.5, 1.5);
    } else {
      seg = RoadGeometry::kSegLane0 + (pick - 2);
      station = rng.uniform(0.0, road.mainline_length());
      lateral = rng.uniform(-1.5, 1.5);
    }
    double x, y;
    road.frame_to_xy(seg, station, lateral, &x, &y);
    const auto f = road.station_frame(x, y);
    REQUIRE(f.segment == seg);
    double rx, ry;
    road.frame_to_xy(f.segment, f.station, f.lateral, &rx, &ry);
    REQUIRE(std::fabs(rx - x) < 1e-6);
    REQUIRE(std::fabs(ry - y) < 1e-6);
  }
}

TEST_CASE("station_frame off network") {
  const auto road = default_road();
  CHECK_THROWS_AS(road.station_frame(-100.0, 0.0), OffNetworkError);
  CHECK_THROWS_AS(road.station_frame(150.0, 200.0), OffNetworkError);
}

TEST_CASE("in_collision basics") {
  const auto road = default_road();
  VehiclePose ego;
  ego.x = 150.0;
  ego.y = road.lane_center_y(1);
  CHECK_FALSE(in_collision(ego, {}, road));
  CHECK(in_collision(ego, {ego}, road));
}

TEST_CASE("in_collision agrees one-sidedly with a rectangle oracle") {
  // The circle union under-covers the footprint near the corners; the oracle
  // therefore tests rectangles shrunk by the coverage inset (plus a hair), for
  // which overlap implies circle overlap.
  const auto road = default_road();
  Rng rng(2024);
  int overlaps = 0;
  for (int trial = 0; trial < 100000; ++trial) {
    VehiclePose a, b;
    a.length = rng.uniform(3.0, 12.0);
    a.width = rng.uniform(0.5, 2.0) * (a.length / 6.0);
    b.length = rng.uniform(3.0, 12.0);
    b.width = rng.uniform(0.5, 2.0) * (b.length / 6.0);
    a.x = 150.0 + rng.uniform(-6.0, 6.0);
    a.y = road.lane_center_y(1) + rng.uniform(-2.0, 2.0);
    a.phi = rng.uniform(-kPi, kPi);
    b.x = a.x + rng.uniform(-8.0, 8.0);
    b.y = a.y + rng.uniform(-4.0, 4.0);
    b.phi = rng.uniform(-kPi, kPi);
    const double ma = coverage_inset(a.length, a.width) + 0.01;
    const double mb = coverage_inset(b.length, b.width) + 0.01;
    const Rect ra{a.x, a.y, a.phi, a.length - 2 * ma, a.width - 2 * ma};
    const Rect rb{b.x, b.y, b.phi, b.length - 2 * mb, b.width - 2 * mb};
    if (rects_overlap(ra, rb)) {
      ++overlaps;
      REQUIRE(circles_overlap(a, b));
    }
  }
  REQUIRE(overlaps > 1000);  // the corpus must actually exercise the property
}

TEST_CASE("corridor widths are consistent") {
  const auto road = default_road();
  // d_l + d_r recoverable from signed clearances anywhere inside.
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const double x = rng.uniform(5.0, 315.0);
    const double y = rng.uniform(-1.5, 12.5);
    StationFrame f;
    try {
      f = road.station_frame(x, y);
    } catch (const OffNetworkError&) {
      continue;
    }
    const auto cor = road.corridor_at(f);
    const double dl = signed_clearance(cor.left, x, y);
    const double dr = signed_clearance(cor.right, x, y);
    if (dl > 0.2 && dr > 0.2) {  // interior points, away from segment ends
      REQUIRE(std::fabs(dl + dr - cor.width) < 1e-6);
    }
  }
}
