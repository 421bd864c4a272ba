#pragma once

// Road network, coordinate frames, six-circle vehicle decomposition and the
// signed state-constraint functions h(.) shared by the collision detector
// and the safety shield.
//
// Global frame: the mainline runs along +x from 0 to mainline_length. The
// acceleration lane centerline is y = 0 and spans x in [merge_station,
// merge_station + accel_lane_length]. Mainline lane i (0 = rightmost) has
// its centerline at y = (i+1)*lane_width. The on-ramp is a straight segment
// at ramp_angle below the acceleration lane, meeting its centerline at
// (merge_station, 0); the ramp start sits at x = 0.
//
// Sign convention for h: negative means satisfied with clearance |h|,
// positive means violated. Lateral offsets are positive to the left of the
// direction of travel.

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mshield/common.hpp"

namespace mshield {

struct RoadParams {
  double mainline_length_m = 320.0;
  double lane_width_m = 3.75;
  int lanes = 3;
  double merge_station_m = 100.0;
  double ramp_angle_deg = 10.0;
  double accel_lane_length_m = 180.0;
  double speed_limit_mps = 35.0;
};

struct VehiclePose {
  double x = 0.0;
  double y = 0.0;
  double phi = 0.0;  // heading, global frame, (-pi, pi]
  double v = 0.0;    // m/s, >= 0
  double length = 4.8;
  double width = 1.8;

  bool valid() const {
    return v >= 0.0 && length > 0.0 && width > 0.0 && std::isfinite(x) &&
           std::isfinite(y) && std::isfinite(phi);
  }
};

struct Circle {
  double cx = 0.0;
  double cy = 0.0;
  double r = 0.0;
};

struct StationFrame {
  int segment = 0;       // kSegRamp, kSegAccel or kSegLane0 + i
  double station = 0.0;  // along-segment coordinate (ramp: from ramp start; others: global x)
  double lateral = 0.0;  // signed offset from centerline, left positive
  double heading = 0.0;  // centerline tangent heading
};

// One straight corridor edge with an inward direction.
struct EdgeSegment {
  double x0, y0, x1, y1;  // endpoints
  double nx, ny;          // unit normal pointing into the corridor
};

struct Corridor {
  EdgeSegment left;
  EdgeSegment right;
  double width = 0.0;
};

// Signed clearance of a point to an edge: distance to the segment, negated
// when the point lies outside the corridor (against the inward normal of
// the edge line).
inline double signed_clearance(const EdgeSegment& e, double px, double py) {
  const double dx = e.x1 - e.x0;
  const double dy = e.y1 - e.y0;
  const double len2 = dx * dx + dy * dy;
  double t = ((px - e.x0) * dx + (py - e.y0) * dy) / len2;
  t = clamp(t, 0.0, 1.0);
  const double cx = e.x0 + t * dx;
  const double cy = e.y0 + t * dy;
  const double dist = std::hypot(px - cx, py - cy);
  const double side = (px - e.x0) * e.nx + (py - e.y0) * e.ny;
  return side >= 0.0 ? dist : -dist;
}

struct ConstraintSet {
  std::vector<double> vehicle_h;  // 36*N, vehicle-major, then ego circle, then other circle
  std::array<double, 12> road_h{};  // ego circle major, edge (0=left, 1=right) minor
  int n_vehicles = 0;

  std::size_t size() const { return vehicle_h.size() + road_h.size(); }

  double max_h() const {
    double m = -1e300;
    for (double h : vehicle_h) m = std::max(m, h);
    for (double h : road_h) m = std::max(m, h);
    return m;
  }

  bool any_violation() const {
    for (double h : vehicle_h)
      if (h > 0.0) return true;
    for (double h : road_h)
      if (h > 0.0) return true;
    return false;
  }
};

class RoadGeometry {
 public:
  static constexpr int kSegRamp = 0;
  static constexpr int kSegAccel = 1;
  static constexpr int kSegLane0 = 2;
  static constexpr double kNetworkMargin = 20.0;

  explicit RoadGeometry(const RoadParams& p) : p_(p) {
    if (p_.mainline_length_m <= 0 || p_.lane_width_m <= 0 || p_.lanes <= 0 ||
        p_.merge_station_m <= 0 || p_.accel_lane_length_m <= 0 ||
        p_.speed_limit_mps <= 0) {
      throw ConfigError("road: all lengths and the speed limit must be > 0");
    }
    if (p_.merge_station_m + p_.accel_lane_length_m > p_.mainline_length_m) {
      throw ConfigError(
          "road: merge_station_m + accel_lane_length_m exceeds mainline_length_m");
    }
    ramp_angle_ = deg2rad(p_.ramp_angle_deg);
    ramp_length_ = p_.merge_station_m / std::cos(ramp_angle_);
    ramp_start_x_ = 0.0;
    ramp_start_y_ = -p_.merge_station_m * std::tan(ramp_angle_);
  }

  const RoadParams& params() const { return p_; }
  double lane_width() const { return p_.lane_width_m; }
  int lane_count() const { return p_.lanes; }
  double mainline_length() const { return p_.mainline_length_m; }
  double merge_station() const { return p_.merge_station_m; }
  double accel_lane_end() const { return p_.merge_station_m + p_.accel_lane_length_m; }
  double speed_limit() const { return p_.speed_limit_mps; }
  double ramp_angle() const { return ramp_angle_; }
  double ramp_length() const { return ramp_length_; }

  double lane_center_y(int lane) const { return (lane + 1) * p_.lane_width_m; }
  double accel_center_y() const { return 0.0; }
  double mainline_right_edge_y() const { return 0.5 * p_.lane_width_m; }
  double mainline_left_edge_y() const { return (p_.lanes + 0.5) * p_.lane_width_m; }
  double accel_right_edge_y() const { return -0.5 * p_.lane_width_m; }

  // Point on the ramp centerline at the given ramp station.
  void ramp_point(double station, double* x, double* y) const {
    *x = ramp_start_x_ + station * std::cos(ramp_angle_);
    *y = ramp_start_y_ + station * std::sin(ramp_angle_);
  }

  StationFrame station_frame(double x, double y) const {
    if (x < -kNetworkMargin || x > p_.mainline_length_m + kNetworkMargin) {
      throw OffNetworkError("station_frame: x outside extended network region");
    }
    StationFrame best;
    double best_abs = 1e300;
    auto consider = [&](int seg, double station, double lateral, double heading) {
      const double a = std::fabs(lateral);
      if (a < best_abs - 1e-12 || (a < best_abs + 1e-12 && seg > best.segment)) {
        best_abs = a;
        best = StationFrame{seg, station, lateral, heading};
      }
    };
    // Mainline lane nearest in y.
    {
      int lane = static_cast<int>(std::floor(y / p_.lane_width_m - 0.5));
      lane = lane < 0 ? 0 : (lane >= p_.lanes ? p_.lanes - 1 : lane);
      consider(kSegLane0 + lane, x, y - lane_center_y(lane), 0.0);
    }
    // Acceleration lane over its extent.
    if (x >= p_.merge_station_m && x <= accel_lane_end()) {
      consider(kSegAccel, x, y, 0.0);
    }
    // Ramp.
    {
      const double c = std::cos(ramp_angle_), s = std::sin(ramp_angle_);
      const double rx = x - ramp_start_x_, ry = y - ramp_start_y_;
      const double station = rx * c + ry * s;
      const double lateral = -rx * s + ry * c;
      if (station >= -kNetworkMargin && station <= ramp_length_ &&
          x <= p_.merge_station_m + 1.0) {
        consider(kSegRamp, station, lateral, ramp_angle_);
      }
    }
    if (best_abs > kNetworkMargin) {
      throw OffNetworkError("station_frame: point too far from any lane centerline");
    }
    return best;
  }

  // Inverse of station_frame for round trips.
  void frame_to_xy(int segment, double station, double lateral, double* x,
                   double* y) const {
    if (segment == kSegRamp) {
      const double c = std::cos(ramp_angle_), s = std::sin(ramp_angle_);
      *x = ramp_start_x_ + station * c - lateral * s;
      *y = ramp_start_y_ + station * s + lateral * c;
    } else if (segment == kSegAccel) {
      *x = station;
      *y = lateral;
    } else {
      *x = station;
      *y = lane_center_y(segment - kSegLane0) + lateral;
    }
  }

  // Drivable corridor at a station frame. On the ramp: the ramp lane edges.
  // Where the acceleration lane exists: outer mainline edge down to the
  // outer acceleration-lane edge. Elsewhere: the mainline edges.
  Corridor corridor_at(const StationFrame& f) const {
    Corridor c;
    const double hw = 0.5 * p_.lane_width_m;
    if (f.segment == kSegRamp) {
      const double co = std::cos(ramp_angle_), s = std::sin(ramp_angle_);
      // Left edge offset +hw, right edge offset -hw from the ramp centerline.
      auto edge = [&](double off, double nsign) {
        EdgeSegment e;
        e.x0 = ramp_start_x_ - off * s;
        e.y0 = ramp_start_y_ + off * co;
        e.x1 = e.x0 + ramp_length_ * co;
        e.y1 = e.y0 + ramp_length_ * s;
        e.nx = nsign * -s;
        e.ny = nsign * co;
        return e;
      };
      c.left = edge(hw, -1.0);  // inward normal points right (down)
      c.right = edge(-hw, 1.0);
      c.width = p_.lane_width_m;
      return c;
    }
    const bool merge_zone =
        f.station >= p_.merge_station_m && f.station <= accel_lane_end();
    const double top = mainline_left_edge_y();
    const double bottom = merge_zone ? accel_right_edge_y() : mainline_right_edge_y();
    const double x0 = merge_zone ? p_.merge_station_m : 0.0;
    const double x1 = merge_zone ? accel_lane_end() : p_.mainline_length_m;
    c.left = EdgeSegment{0.0, top, p_.mainline_length_m, top, 0.0, -1.0};
    c.right = EdgeSegment{x0, bottom, x1, bottom, 0.0, 1.0};
    c.width = top - bottom;
    return c;
  }

 private:
  RoadParams p_;
  double ramp_angle_ = 0.0;
  double ramp_length_ = 0.0;
  double ramp_start_x_ = 0.0;
  double ramp_start_y_ = 0.0;
};

// Six circles of radius length/6 with centers evenly spaced on the vehicle's
// longitudinal axis from -(L/2 - r) to +(L/2 - r); the end circles are
// tangent to the bumpers.
inline std::array<Circle, 6> decompose_circles(const VehiclePose& pose) {
  std::array<Circle, 6> out;
  const double r = pose.length / 6.0;
  const double half_span = 0.5 * pose.length - r;
  const double step = 2.0 * half_span / 5.0;
  const double c = std::cos(pose.phi), s = std::sin(pose.phi);
  for (int i = 0; i < 6; ++i) {
    const double d = -half_span + step * i;
    out[i] = Circle{pose.x + d * c, pose.y + d * s, r};
  }
  return out;
}

// h_ij = r_i + r_j - dist(center_i, center_j) for every (ego circle i,
// other-vehicle circle j). Vehicle-major in input order, then ego circle,
// then the other vehicle's circle.
inline std::vector<double> vehicle_constraints(const VehiclePose& ego,
                                               const std::vector<VehiclePose>& others) {
  const auto ego_c = decompose_circles(ego);
  std::vector<double> h;
  h.reserve(36 * others.size());
  for (const auto& veh : others) {
    const auto veh_c = decompose_circles(veh);
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) {
        const double d = std::hypot(ego_c[i].cx - veh_c[j].cx, ego_c[i].cy - veh_c[j].cy);
        h.push_back(ego_c[i].r + veh_c[j].r - d);
      }
    }
  }
  return h;
}

// h_ik = r_i - signed clearance(center_i, corridor edge k) for the corridor
// at the ego's station. k = 0 is the left edge, k = 1 the right edge.
inline std::array<double, 12> road_constraints(const VehiclePose& ego,
                                               const RoadGeometry& road) {
  const StationFrame f = road.station_frame(ego.x, ego.y);
  const Corridor cor = road.corridor_at(f);
  const auto circles = decompose_circles(ego);
  std::array<double, 12> h{};
  for (int i = 0; i < 6; ++i) {
    h[i * 2 + 0] = circles[i].r - signed_clearance(cor.left, circles[i].cx, circles[i].cy);
    h[i * 2 + 1] = circles[i].r - signed_clearance(cor.right, circles[i].cx, circles[i].cy);
  }
  return h;
}

inline ConstraintSet make_constraint_set(const VehiclePose& ego,
                                         const std::vector<VehiclePose>& others,
                                         const RoadGeometry& road) {
  ConstraintSet cs;
  cs.vehicle_h = vehicle_constraints(ego, others);
  cs.road_h = road_constraints(ego, road);
  cs.n_vehicles = static_cast<int>(others.size());
  return cs;
}

// Conservative circle test; tangency (h == 0) does not count as collision.
inline bool in_collision(const VehiclePose& ego, const std::vector<VehiclePose>& others,
                         const RoadGeometry& road) {
  return make_constraint_set(ego, others, road).any_violation();
}

// True when any circle pair of the two vehicles overlaps; used for
// vehicle-vehicle checks among rule-driven traffic.
inline bool circles_overlap(const VehiclePose& a, const VehiclePose& b) {
  const auto ca = decompose_circles(a);
  const auto cb = decompose_circles(b);
  for (const auto& i : ca)
    for (const auto& j : cb)
      if (std::hypot(i.cx - j.cx, i.cy - j.cy) < i.r + j.r) return true;
  return false;
}

}  // namespace mshield
