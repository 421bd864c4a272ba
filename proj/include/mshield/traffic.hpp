#pragma once

// Surrounding-vehicle traffic: IDM car following plus a MOBIL-style lane
// change rule, four behaviour types (two cooperative, two adversarial), and
// deterministic per-lane emission. Stands in for an external microscopic
// traffic simulator.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mshield/common.hpp"
#include "mshield/geometry.hpp"

namespace mshield {

struct VehicleTypeParams {
  std::string name;
  double desired_speed_mean = 25.0;  // m/s
  double desired_speed_std = 2.0;
  double headway_s = 1.5;  // IDM T
  double politeness = 0.0; // MOBIL p
  double length = 4.8;
  double width = 1.8;
};

struct TrafficConfig {
  double emission_sparse_vps = 0.08;  // vehicles per second per lane
  double emission_dense_vps = 0.25;
  double warmup_s = 30.0;
  double idm_a_max = 1.5;
  double idm_b = 2.0;
  double idm_s0 = 2.0;
  double idm_exponent = 4.0;
  double max_brake = 8.0;
  double mobil_threshold = 0.2;   // m/s^2
  double mobil_b_safe = 2.0;      // induced deceleration limit
  double lane_change_duration_s = 4.0;
  double lane_change_cooldown_s = 5.0;
  std::array<VehicleTypeParams, 4> types = {
      VehicleTypeParams{"adversarial_fast", 32.0, 2.0, 1.0, 0.0, 4.5, 1.8},
      VehicleTypeParams{"adversarial", 28.0, 2.0, 1.2, 0.0, 4.2, 1.7},
      VehicleTypeParams{"cooperative", 24.0, 2.0, 1.6, 0.3, 4.8, 1.8},
      VehicleTypeParams{"cooperative_slow", 20.0, 2.0, 2.0, 0.5, 5.2, 1.9}};
};

enum class Density { kSparse, kDense };

inline Density density_from_string(const std::string& s) {
  if (s == "sparse") return Density::kSparse;
  if (s == "dense") return Density::kDense;
  throw ConfigError("unknown density '" + s + "' (expected sparse or dense)");
}

// Lane ids: 0..lanes-1 are mainline lanes (0 rightmost), kAccelLane is the
// acceleration lane.
inline constexpr int kAccelLane = -1;
inline constexpr int kNoLane = -9;

struct TrafficVehicle {
  int id = 0;
  int type = 0;
  double x = 0.0;
  double y = 0.0;
  double v = 0.0;
  double v_lat = 0.0;
  double desired_speed = 25.0;
  int lane = 0;
  int target_lane = 0;
  double cooldown_s = 0.0;
  double length = 4.8;
  double width = 1.8;

  bool changing() const { return lane != target_lane; }

  VehiclePose pose() const {
    VehiclePose p;
    p.x = x;
    p.y = y;
    p.phi = (v > 0.05 || std::fabs(v_lat) > 1e-9) ? std::atan2(v_lat, std::max(v, 0.05)) : 0.0;
    p.v = std::hypot(v, v_lat);
    p.length = length;
    p.width = width;
    return p;
  }
};

inline double lane_center_y(const RoadGeometry& road, int lane) {
  return lane == kAccelLane ? road.accel_center_y() : road.lane_center_y(lane);
}

// Lane band containing a y position; the acceleration lane only exists over
// its x extent.
inline int lane_at(const RoadGeometry& road, double x, double y) {
  if (y < road.mainline_right_edge_y()) {
    if (x >= road.merge_station() && x <= road.accel_lane_end()) return kAccelLane;
    return kNoLane;
  }
  int lane = static_cast<int>(std::floor(y / road.lane_width() - 0.5));
  return lane < 0 ? 0 : (lane >= road.lane_count() ? road.lane_count() - 1 : lane);
}

struct IdmParams {
  double a_max, b, s0, exponent, max_brake;
};

// IDM acceleration toward desired speed v0, optionally against a leader gap.
inline double idm_accel(const IdmParams& p, double v, double v0, double headway,
                        std::optional<std::pair<double, double>> leader_gap_speed) {
  const double ratio = v0 > 0.0 ? v / v0 : 1.0;
  double a = p.a_max * (1.0 - std::pow(ratio, p.exponent));
  if (leader_gap_speed) {
    const double gap = leader_gap_speed->first;
    const double v_lead = leader_gap_speed->second;
    if (gap <= 0.05) return -p.max_brake;
    const double dv = v - v_lead;
    const double s_star =
        p.s0 + std::max(0.0, v * headway + v * dv / (2.0 * std::sqrt(p.a_max * p.b)));
    a -= p.a_max * (s_star / gap) * (s_star / gap);
  }
  return clamp(a, -p.max_brake, p.a_max);
}

// A leader candidate for car-following: bumper gap and speed.
struct LeaderInfo {
  double gap = 1e300;
  double speed = 0.0;
  bool found = false;
};

namespace detail {

inline bool claims_lane(const TrafficVehicle& veh, int lane) {
  return veh.lane == lane || veh.target_lane == lane;
}

}  // namespace detail

}  // namespace mshield
