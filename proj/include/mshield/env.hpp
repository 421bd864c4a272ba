#pragma once

// The merge MDP: ego dynamics, traffic evolution, scenario generation,
// observation construction, reward computation and episode termination,
// stepped at 10 Hz.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "mshield/common.hpp"
#include "mshield/geometry.hpp"
#include "mshield/traffic.hpp"

namespace mshield {

inline constexpr double kDt = 0.1;          // 10 Hz
inline constexpr double kAxMax = 3.0;       // m/s^2
inline constexpr double kDeltaMax = 0.7;    // rad
inline constexpr int kNumSlots = 8;
inline constexpr int kObsDim = 56;
inline constexpr double kSuccessHeadingRad = 8.0 * kPi / 180.0;
inline constexpr double kSuccessCenterlineM = 0.5;
inline constexpr int kEvalTimeoutSteps = 300;     // 30 s at 10 Hz
inline constexpr int kTrainTimeoutSteps = 1000;

struct Action {
  double a_x = 0.0;
  double delta = 0.0;

  bool in_bounds(double tol = 1e-9) const {
    return std::fabs(a_x) <= kAxMax + tol && std::fabs(delta) <= kDeltaMax + tol;
  }
};

inline Action clamp_action(const Action& a) {
  return Action{clamp(a.a_x, -kAxMax, kAxMax), clamp(a.delta, -kDeltaMax, kDeltaMax)};
}

struct EgoState {
  double v_e = 0.0;
  double w_e = 1.8;
  double l_e = 4.8;
  double phi_e = 0.0;     // heading error vs current centerline
  double d_c = 0.0;       // signed offset from centerline, left positive
  double d_l = 0.0;       // clearance to left corridor edge
  double d_r = 0.0;       // clearance to right corridor edge
  double d_m = 0.0;       // lateral distance to the mainline, >= 0
  double yaw_rate = 0.0;  // change of phi_e per step / dt
};

struct SurroundingSlot {
  bool present = false;
  double v_j = 0.0;
  double phi_j = 0.0;
  double w_j = 0.0;
  double l_j = 0.0;
  double d_xj = 0.0;  // lateral offset to ego
  double d_yj = 0.0;  // longitudinal offset to ego
};

struct Observation {
  std::array<double, kObsDim> values{};
};

struct RewardWeights {
  double k_s = -3.0;
  double k_t1 = -1.0;
  double k_t2 = -20.0;
  double k_t3 = -20.0;
  double k_e = 0.5;
  double v_exp = 15.0;
  double k_c1 = -15.0;
  double k_c2 = -15.0;
  double k_c3 = -15.0;
  double r_success = 1000.0;
  double r_failure = -200.0;
  double d_safe = 1.6;      // sum of two circle radii for 4.8 m vehicles
  double d_v_cap = 5.0;     // cap on the slot distance entering r_safe
};

struct RewardComponents {
  double safe = 0.0;
  double efficiency = 0.0;
  double comfort = 0.0;
  double task = 0.0;
  double terminal = 0.0;

  double total() const { return safe + efficiency + comfort + task + terminal; }
};

enum class Event { kRunning, kSuccess, kCollision, kTimeout };

inline const char* event_name(Event e) {
  switch (e) {
    case Event::kRunning: return "running";
    case Event::kSuccess: return "success";
    case Event::kCollision: return "collision";
    case Event::kTimeout: return "timeout";
  }
  return "?";
}

struct StepOutcome {
  Observation observation;
  double reward_total = 0.0;
  RewardComponents components;
  Event event = Event::kRunning;
};

// Fixed affine normalization constants; chosen at scenario design time so
// checkpoints stay portable across runs.
struct ObservationNorm {
  double sentinel_dy = 100.0;
  // ego features: v_e, w_e, l_e, phi_e, d_c, d_l, d_r, d_m
  std::array<double, 8> ego_offset{15.0, 1.8, 4.8, 0.0, 0.0, 0.0, 0.0, 0.0};
  std::array<double, 8> ego_scale{10.0, 1.0, 2.0, 0.7, 2.0, 4.0, 4.0, 4.0};
  // slot features: v_j, phi_j, w_j, l_j, d_xj, d_yj
  std::array<double, 6> slot_offset{15.0, 0.0, 1.8, 4.8, 0.0, 0.0};
  std::array<double, 6> slot_scale{10.0, 0.7, 1.0, 2.0, 5.0, 25.0};
};

enum class TimeoutMode { kTraining, kEvaluation };

struct EnvParams {
  RoadParams road;
  TrafficConfig traffic;
  RewardWeights reward;
  ObservationNorm norm;
  double ego_length = 4.8;
  double ego_width = 1.8;
  bool safety_reward = true;
};

// Kinematic bicycle step, semi-implicit: the velocity updates first so that
// one-step predicted positions respond to a_x (the safety shield brakes
// through exactly this coupling).
inline VehiclePose ego_step(const VehiclePose& pose, const Action& action, double dt) {
  if (!action.in_bounds()) {
    throw InvalidActionError("ego_step: action outside the action box");
  }
  const double beta = std::atan(0.5 * std::tan(action.delta));
  VehiclePose next = pose;
  next.v = std::max(0.0, pose.v + action.a_x * dt);
  next.x = pose.x + next.v * std::cos(pose.phi + beta) * dt;
  next.y = pose.y + next.v * std::sin(pose.phi + beta) * dt;
  next.phi = wrap_angle(pose.phi + next.v / (0.5 * pose.length) * std::sin(beta) * dt);
  return next;
}

class World {
 public:
  World(const EnvParams& params, std::uint64_t seed, Density density,
        TimeoutMode mode = TimeoutMode::kEvaluation)
      : params_(params),
        road_(params.road),
        density_(density),
        mode_(mode),
        rng_(Rng(seed).derive(0x57524c44)) {
    spawn_acc_.assign(road_.lane_count(), 0.0);
    ego_.length = params.ego_length;
    ego_.width = params.ego_width;
  }

  // --- scenario generation -------------------------------------------------

  // Warm the traffic up (ego inactive), then place the ego on the ramp.
  void initialize_episode() {
    ego_active_ = false;
    const int warm_steps = static_cast<int>(std::lround(params_.traffic.warmup_s / kDt));
    for (int i = 0; i < warm_steps; ++i) traffic_step_only();
    t_ = 0.0;
    steps_ = 0;
    const double station = rng_.uniform(0.0, 30.0);
    const double speed = rng_.uniform(8.0, 15.0);
    double x, y;
    road_.ramp_point(station, &x, &y);
    ego_.x = x;
    ego_.y = y;
    ego_.phi = road_.ramp_angle();
    ego_.v = speed;
    ego_active_ = true;
    prev_phi_e_valid_ = false;
    off_network_ = false;
    odometer_ = 0.0;
    refresh_state();
  }

  // --- per-step dynamics ---------------------------------------------------

  StepOutcome step(const Action& action) {
    if (!action.in_bounds()) {
      throw InvalidActionError("World::step: action outside the action box");
    }
    const EgoState before_state = ego_state_;
    const double before_d_v = slot_min_distance();

    const VehiclePose ego_before = ego_;
    ego_ = ego_step(ego_, action, kDt);
    odometer_ += ego_.v * kDt;
    advance_traffic(ego_before);
    t_ += kDt;
    steps_ += 1;
    refresh_state();

    StepOutcome out;
    out.event = check_termination();
    out.components = compute_reward_components(before_state, before_d_v, action, out.event);
    out.reward_total = out.components.total();
    out.observation = observation();
    return out;
  }

  // Traffic-only step (spawning, car following, lane changes); used for
  // warmup and for rule-traffic tests with the ego removed.
  void traffic_step_only() {
    const bool was_active = ego_active_;
    ego_active_ = false;
    advance_traffic(ego_);
    t_ += kDt;
    ego_active_ = was_active;
  }

  Event check_termination() const {
    if (off_network_) return Event::kCollision;
    if (in_collision(ego_, vehicle_poses(), road_)) return Event::kCollision;
    if (success_condition()) return Event::kSuccess;
    const int limit = mode_ == TimeoutMode::kTraining ? kTrainTimeoutSteps : kEvalTimeoutSteps;
    if (steps_ >= limit) return Event::kTimeout;
    if (ego_.x + 0.5 * ego_.length >= road_.mainline_length()) return Event::kTimeout;
    return Event::kRunning;
  }

  // --- observation ---------------------------------------------------------

  Observation observation() const {
    Observation obs;
    const auto& n = params_.norm;
    const double ego_raw[8] = {ego_state_.v_e, ego_state_.w_e, ego_state_.l_e,
                               ego_state_.phi_e, ego_state_.d_c, ego_state_.d_l,
                               ego_state_.d_r, ego_state_.d_m};
    int k = 0;
    for (int i = 0; i < 8; ++i) {
      obs.values[k++] = clamp((ego_raw[i] - n.ego_offset[i]) / n.ego_scale[i], -5.0, 5.0);
    }
    for (const auto& s : slots_) {
      const double raw[6] = {s.v_j, s.phi_j, s.w_j, s.l_j, s.d_xj, s.d_yj};
      for (int i = 0; i < 6; ++i) {
        obs.values[k++] = clamp((raw[i] - n.slot_offset[i]) / n.slot_scale[i], -5.0, 5.0);
      }
    }
    return obs;
  }

  // --- reward --------------------------------------------------------------

  RewardComponents compute_reward_components(const EgoState& s, double d_v,
                                             const Action& a, Event event) const {
    const auto& w = params_.reward;
    RewardComponents c;
    if (event == Event::kSuccess) {
      c.terminal = w.r_success;
      return c;
    }
    if (event == Event::kCollision || event == Event::kTimeout) {
      c.terminal = w.r_failure;
      return c;
    }
    const double dv = std::min(d_v, w.d_v_cap);
    c.safe = params_.safety_reward ? w.k_s * (w.d_safe - dv) : 0.0;
    c.task = w.k_t1 * s.d_m * s.d_m + w.k_t2 * s.phi_e * s.phi_e + w.k_t3 * s.d_c * s.d_c;
    c.efficiency = w.k_e * (s.v_e - w.v_exp);
    c.comfort = w.k_c1 * s.yaw_rate * s.yaw_rate + w.k_c2 * a.delta * a.delta +
                w.k_c3 * a.a_x * a.a_x;
    return c;
  }

  // Minimum center distance over the 8 slots (sentinels included).
  double slot_min_distance() const {
    double d = 1e300;
    for (const auto& s : slots_) d = std::min(d, std::hypot(s.d_xj, s.d_yj));
    return d;
  }

  // --- accessors -----------------------------------------------------------

  const RoadGeometry& road() const { return road_; }
  const EnvParams& params() const { return params_; }
  const VehiclePose& ego() const { return ego_; }
  const std::vector<TrafficVehicle>& vehicles() const { return vehicles_; }
  const EgoState& ego_state() const { return ego_state_; }
  const std::array<SurroundingSlot, kNumSlots>& slots() const { return slots_; }
  double time() const { return t_; }
  long steps() const { return steps_; }
  double odometer() const { return odometer_; }
  TimeoutMode timeout_mode() const { return mode_; }
  void set_timeout_mode(TimeoutMode m) { mode_ = m; }
  bool frozen_traffic() const { return frozen_traffic_; }
  void set_frozen_traffic(bool f) { frozen_traffic_ = f; }
  void set_safety_reward(bool on) { params_.safety_reward = on; }
  bool off_network() const { return off_network_; }

  std::vector<VehiclePose> vehicle_poses() const {
    std::vector<VehiclePose> out;
    out.reserve(vehicles_.size());
    for (const auto& v : vehicles_) out.push_back(v.pose());
    return out;
  }

  ConstraintSet constraints() const {
    return make_constraint_set(ego_, vehicle_poses(), road_);
  }

  // Test/fixture hooks.
  void set_ego(const VehiclePose& p) {
    ego_ = p;
    ego_active_ = true;
    prev_phi_e_valid_ = false;
    off_network_ = false;
    refresh_state();
  }
  void add_vehicle(const TrafficVehicle& v) {
    vehicles_.push_back(v);
    refresh_state();
  }
  void clear_vehicles() {
    vehicles_.clear();
    refresh_state();
  }

 private:
  // --- traffic internals ---------------------------------------------------

  void advance_traffic(const VehiclePose& ego_snapshot) {
    if (frozen_traffic_) {
      for (auto& veh : vehicles_) {
        veh.x += veh.v * kDt;
        veh.y += veh.v_lat * kDt;
      }
      return;
    }
    const IdmParams idm{params_.traffic.idm_a_max, params_.traffic.idm_b,
                        params_.traffic.idm_s0, params_.traffic.idm_exponent,
                        params_.traffic.max_brake};
    const std::vector<TrafficVehicle> snapshot = vehicles_;

    // Car-following accelerations from the pre-step snapshot.
    std::vector<double> accel(vehicles_.size(), 0.0);
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      const auto& veh = vehicles_[i];
      const auto& type = params_.traffic.types[veh.type];
      LeaderInfo lead = find_leader(snapshot, ego_snapshot, i, veh.lane);
      if (veh.changing()) {
        const LeaderInfo lt = find_leader(snapshot, ego_snapshot, i, veh.target_lane);
        if (lt.found && lt.gap < lead.gap) lead = lt;
      }
      if (veh.lane == kAccelLane || veh.target_lane == kAccelLane) {
        const double end_gap = road_.accel_lane_end() - 3.0 - veh.x - 0.5 * veh.length;
        if (!lead.found || end_gap < lead.gap) {
          lead.found = true;
          lead.gap = end_gap;
          lead.speed = 0.0;
        }
      }
      const double v0 = std::min(veh.desired_speed, road_.speed_limit());
      accel[i] = idm_accel(idm, veh.v, v0, type.headway_s,
                           lead.found ? std::optional<std::pair<double, double>>(
                                            {lead.gap, lead.speed})
                                      : std::nullopt);
    }

    // Lane-change decisions in id order; earlier decisions are visible to
    // later ones through target_lane claims.
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      maybe_lane_change(i, accel[i], ego_snapshot);
    }

    // Integrate.
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      auto& veh = vehicles_[i];
      const double v_new = clamp(veh.v + accel[i] * kDt, 0.0, road_.speed_limit());
      veh.x += 0.5 * (veh.v + v_new) * kDt;
      veh.v = v_new;
      if (veh.changing()) {
        const double target_y = lane_center_y(road_, veh.target_lane);
        const double rate = road_.lane_width() / params_.traffic.lane_change_duration_s;
        const double dy = target_y - veh.y;
        const double step = clamp(dy, -rate * kDt, rate * kDt);
        veh.y += step;
        veh.v_lat = step / kDt;
        if (std::fabs(target_y - veh.y) < 1e-6) {
          veh.y = target_y;
          veh.lane = veh.target_lane;
          veh.v_lat = 0.0;
          veh.cooldown_s = params_.traffic.lane_change_cooldown_s;
        }
      } else {
        veh.v_lat = 0.0;
        veh.cooldown_s = std::max(0.0, veh.cooldown_s - kDt);
      }
    }

    vehicles_.erase(std::remove_if(vehicles_.begin(), vehicles_.end(),
                                   [&](const TrafficVehicle& v) {
                                     return v.x - 0.5 * v.length > road_.mainline_length();
                                   }),
                    vehicles_.end());

    spawn_vehicles();
  }

  LeaderInfo find_leader(const std::vector<TrafficVehicle>& snapshot,
                         const VehiclePose& ego_snapshot, std::size_t self,
                         int lane) const {
    LeaderInfo best;
    const auto& me = snapshot[self];
    for (std::size_t j = 0; j < snapshot.size(); ++j) {
      if (j == self) continue;
      const auto& other = snapshot[j];
      const bool lane_claim = detail::claims_lane(other, lane);
      const bool body_overlap =
          std::fabs(other.y - lane_center_y(road_, lane)) <
          0.5 * (other.width + road_.lane_width());
      if (!lane_claim && !body_overlap) continue;
      if (other.x <= me.x) continue;
      const double gap = other.x - me.x - 0.5 * (other.length + me.length);
      if (gap < best.gap) {
        best = LeaderInfo{gap, other.v, true};
      }
    }
    if (ego_active_) {
      const int ego_lane = lane_at(road_, ego_snapshot.x, ego_snapshot.y);
      const bool overlap = std::fabs(ego_snapshot.y - lane_center_y(road_, lane)) <
                           0.5 * (ego_snapshot.width + road_.lane_width());
      if ((ego_lane == lane || overlap) && ego_snapshot.x > me.x) {
        const double gap =
            ego_snapshot.x - me.x - 0.5 * (ego_snapshot.length + me.length);
        if (gap < best.gap) {
          best = LeaderInfo{gap, ego_snapshot.v * std::cos(ego_snapshot.phi), true};
        }
      }
    }
    return best;
  }

  LeaderInfo find_follower(const std::vector<TrafficVehicle>& snapshot,
                           std::size_t self, int lane) const {
    LeaderInfo best;
    const auto& me = snapshot[self];
    for (std::size_t j = 0; j < snapshot.size(); ++j) {
      if (j == self) continue;
      const auto& other = snapshot[j];
      if (!detail::claims_lane(other, lane)) continue;
      if (other.x > me.x) continue;
      const double gap = me.x - other.x - 0.5 * (other.length + me.length);
      if (gap < best.gap) best = LeaderInfo{gap, other.v, true};
    }
    return best;
  }

  bool lane_exists_for(int lane, const TrafficVehicle& veh) const {
    if (lane >= 0 && lane < road_.lane_count()) return true;
    if (lane == kAccelLane) {
      // Entering the acceleration lane needs room to merge back out.
      return veh.x > road_.merge_station() + 10.0 &&
             veh.x < road_.accel_lane_end() - 80.0;
    }
    return false;
  }

  void maybe_lane_change(std::size_t i, double current_accel,
                         const VehiclePose& ego_snapshot) {
    auto& veh = vehicles_[i];
    if (veh.changing() || veh.cooldown_s > 0.0) return;
    const auto& cfg = params_.traffic;
    const auto& type = cfg.types[veh.type];
    const IdmParams idm{cfg.idm_a_max, cfg.idm_b, cfg.idm_s0, cfg.idm_exponent,
                        cfg.max_brake};
    const double v0 = std::min(veh.desired_speed, road_.speed_limit());

    const int options[2] = {veh.lane + 1, veh.lane == 0 ? kAccelLane : veh.lane - 1};
    double best_incentive = cfg.mobil_threshold;
    int best_lane = veh.lane;
    for (int target : options) {
      if (target == veh.lane || !lane_exists_for(target, veh)) continue;

      // Own acceleration in the target lane.
      LeaderInfo new_lead = find_leader(vehicles_, ego_snapshot, i, target);
      const double a_self_new =
          idm_accel(idm, veh.v, v0, type.headway_s,
                    new_lead.found ? std::optional<std::pair<double, double>>(
                                         {new_lead.gap, new_lead.speed})
                                   : std::nullopt);
      if (a_self_new < -cfg.mobil_b_safe) continue;

      // New follower must not be forced to brake hard.
      LeaderInfo follower = find_follower(vehicles_, i, target);
      double follower_penalty = 0.0;
      if (follower.found) {
        if (follower.gap < idm.s0) continue;
        const auto& ftype = cfg.types[0];
        const double a_follower_new =
            idm_accel(idm, follower.speed, road_.speed_limit(), ftype.headway_s,
                      std::optional<std::pair<double, double>>({follower.gap, veh.v}));
        if (a_follower_new < -cfg.mobil_b_safe) continue;
        follower_penalty = a_follower_new;
      }
      // Ego as prospective follower in the target lane.
      if (ego_active_) {
        const int ego_lane = lane_at(road_, ego_snapshot.x, ego_snapshot.y);
        if (ego_lane == target && ego_snapshot.x < veh.x) {
          const double gap =
              veh.x - ego_snapshot.x - 0.5 * (veh.length + ego_snapshot.length);
          if (gap < idm.s0 + ego_snapshot.v * 1.0) continue;
        }
      }

      double incentive = a_self_new - current_accel + type.politeness * follower_penalty;
      if (veh.lane == kAccelLane && target == 0) {
        const double dist_end = road_.accel_lane_end() - veh.x;
        incentive += std::max(0.0, 1.5 * (1.0 - dist_end / 120.0));
      }
      if (incentive > best_incentive) {
        best_incentive = incentive;
        best_lane = target;
      }
    }
    if (best_lane != veh.lane) veh.target_lane = best_lane;
  }

  void spawn_vehicles() {
    const double rate = density_ == Density::kSparse ? params_.traffic.emission_sparse_vps
                                                     : params_.traffic.emission_dense_vps;
    for (int lane = 0; lane < road_.lane_count(); ++lane) {
      spawn_acc_[lane] = std::min(spawn_acc_[lane] + rate * kDt, 2.0);
      if (spawn_acc_[lane] < 1.0) continue;
      // Entry must be clear of the nearest downstream vehicle.
      double nearest = 1e300;
      double nearest_speed = 0.0;
      for (const auto& v : vehicles_) {
        if (detail::claims_lane(v, lane) && v.x < nearest) {
          nearest = v.x;
          nearest_speed = v.v;
        }
      }
      const int type = static_cast<int>(rng_.uniform_index(4));
      const auto& tp = params_.traffic.types[type];
      const double desired =
          clamp(rng_.normal(tp.desired_speed_mean, tp.desired_speed_std), 10.0,
                road_.speed_limit());
      double start = rng_.uniform(0.8 * desired, desired);
      if (nearest < 1e299) {
        const double gap = nearest - 0.5 * tp.length;
        if (gap < params_.traffic.idm_s0 + 8.0) continue;  // retry next step
        start = std::min(start, std::max(nearest_speed, 5.0));
      }
      TrafficVehicle veh;
      veh.id = next_vehicle_id_++;
      veh.type = type;
      veh.x = 0.0;
      veh.y = road_.lane_center_y(lane);
      veh.v = start;
      veh.desired_speed = desired;
      veh.lane = lane;
      veh.target_lane = lane;
      veh.length = tp.length;
      veh.width = tp.width;
      vehicles_.push_back(veh);
      spawn_acc_[lane] -= 1.0;
    }
  }

  // --- ego state / slots ---------------------------------------------------

  void refresh_state() {
    if (!ego_active_) return;
    StationFrame f;
    try {
      f = road_.station_frame(ego_.x, ego_.y);
    } catch (const OffNetworkError&) {
      // Keep the last valid frame; the episode terminates as a collision.
      off_network_ = true;
      return;
    }
    const Corridor cor = road_.corridor_at(f);
    EgoState s;
    s.v_e = ego_.v;
    s.w_e = ego_.width;
    s.l_e = ego_.length;
    s.phi_e = wrap_angle(ego_.phi - f.heading);
    s.d_c = f.lateral;
    s.d_l = signed_clearance(cor.left, ego_.x, ego_.y);
    s.d_r = signed_clearance(cor.right, ego_.x, ego_.y);
    s.d_m = std::max(0.0, road_.mainline_right_edge_y() - ego_.y);
    s.yaw_rate = prev_phi_e_valid_ ? wrap_angle(s.phi_e - prev_phi_e_) / kDt : 0.0;
    prev_phi_e_ = s.phi_e;
    prev_phi_e_valid_ = true;
    ego_state_ = s;
    ego_segment_ = f.segment;
    build_slots();
  }

  void build_slots() {
    // Slot lanes: ego lane, left adjacent, right adjacent, target mainline
    // lane (lane 0); each contributes a lead and a follow slot.
    int ego_lane_key;
    int left_key = kNoLane, right_key = kNoLane;
    if (ego_segment_ == RoadGeometry::kSegRamp) {
      ego_lane_key = kAccelLane;  // the ramp continues into the acceleration lane
    } else if (ego_segment_ == RoadGeometry::kSegAccel) {
      ego_lane_key = kAccelLane;
      left_key = 0;
    } else {
      ego_lane_key = ego_segment_ - RoadGeometry::kSegLane0;
      if (ego_lane_key + 1 < road_.lane_count()) left_key = ego_lane_key + 1;
      if (ego_lane_key > 0) {
        right_key = ego_lane_key - 1;
      } else if (ego_.x >= road_.merge_station() && ego_.x <= road_.accel_lane_end()) {
        right_key = kAccelLane;
      }
    }
    const int lane_keys[4] = {ego_lane_key, left_key, right_key, 0};

    for (int k = 0; k < 4; ++k) {
      SurroundingSlot lead, follow;
      lead.present = follow.present = false;
      if (lane_keys[k] != kNoLane) {
        double best_lead = 1e300, best_follow = -1e300;
        for (const auto& veh : vehicles_) {
          const int vlane = lane_at(road_, veh.x, veh.y);
          if (vlane != lane_keys[k] && veh.target_lane != lane_keys[k]) continue;
          const double dy = veh.x - ego_.x;
          if (dy >= 0.0 && dy < best_lead) {
            best_lead = dy;
            lead = slot_from(veh);
          } else if (dy < 0.0 && dy > best_follow) {
            best_follow = dy;
            follow = slot_from(veh);
          }
        }
      }
      slots_[k * 2 + 0] = lead.present ? lead : sentinel_slot(true);
      slots_[k * 2 + 1] = follow.present ? follow : sentinel_slot(false);
    }
  }

  SurroundingSlot slot_from(const TrafficVehicle& veh) const {
    SurroundingSlot s;
    s.present = true;
    const VehiclePose p = veh.pose();
    s.v_j = p.v;
    s.phi_j = p.phi;
    s.w_j = veh.width;
    s.l_j = veh.length;
    s.d_xj = veh.y - ego_.y;
    s.d_yj = veh.x - ego_.x;
    return s;
  }

  SurroundingSlot sentinel_slot(bool lead) const {
    SurroundingSlot s;
    s.present = false;
    s.v_j = ego_.v;
    s.phi_j = 0.0;
    s.w_j = 0.0;
    s.l_j = 0.0;
    s.d_xj = 0.0;
    s.d_yj = lead ? params_.norm.sentinel_dy : -params_.norm.sentinel_dy;
    return s;
  }

  bool success_condition() const {
    if (std::fabs(ego_state_.phi_e) > kSuccessHeadingRad) return false;
    if (std::fabs(ego_state_.d_c) > kSuccessCenterlineM) return false;
    if (ego_segment_ < RoadGeometry::kSegLane0) return false;
    const double lo = road_.mainline_right_edge_y();
    const double hi = road_.mainline_left_edge_y();
    for (const auto& c : decompose_circles(ego_)) {
      if (c.cy - c.r < lo || c.cy + c.r > hi) return false;
      if (c.cx < 0.0 || c.cx > road_.mainline_length()) return false;
    }
    return true;
  }

  EnvParams params_;
  RoadGeometry road_;
  Density density_;
  TimeoutMode mode_;
  Rng rng_;
  std::vector<TrafficVehicle> vehicles_;
  std::vector<double> spawn_acc_;
  VehiclePose ego_;
  EgoState ego_state_;
  std::array<SurroundingSlot, kNumSlots> slots_{};
  int ego_segment_ = RoadGeometry::kSegRamp;
  double prev_phi_e_ = 0.0;
  bool prev_phi_e_valid_ = false;
  bool ego_active_ = false;
  bool frozen_traffic_ = false;
  bool off_network_ = false;
  double t_ = 0.0;
  long steps_ = 0;
  double odometer_ = 0.0;
  int next_vehicle_id_ = 1;
};

// Builds a seeded world with warmed-up traffic and the ego placed on the ramp.
inline World spawn_scenario(const EnvParams& params, std::uint64_t seed, Density density,
                            TimeoutMode mode = TimeoutMode::kEvaluation) {
  World w(params, seed, density, mode);
  w.initialize_episode();
  return w;
}

}  // namespace mshield
