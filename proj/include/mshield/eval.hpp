#pragma once

// Batch evaluation: seeded trial batches with or without the shield, trial
// statistics in the success/collision/timeout layout, lambda sweeps, and
// single-episode trace extraction for the state/action and trajectory plots.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mshield/dsac.hpp"
#include "mshield/env.hpp"
#include "mshield/shield.hpp"
#include "mshield/svg.hpp"

namespace mshield {

inline Vector obs_to_vector(const Observation& o) {
  Vector v(kObsDim);
  for (int i = 0; i < kObsDim; ++i) v(i) = o.values[i];
  return v;
}

// RlEnv adapter over the merge world, used by the trainer.
class MergeRlEnv final : public RlEnv {
 public:
  MergeRlEnv(const EnvParams& params, Density density, TimeoutMode mode)
      : params_(params), density_(density), mode_(mode) {}

  int obs_dim() const override { return kObsDim; }
  int act_dim() const override { return 2; }
  Vector act_halfwidth() const override {
    Vector h(2);
    h << kAxMax, kDeltaMax;
    return h;
  }

  Vector reset(std::uint64_t episode_seed) override {
    world_.emplace(spawn_scenario(params_, episode_seed, density_, mode_));
    return obs_to_vector(world_->observation());
  }

  Step step(const Vector& env_action) override {
    const Action a = clamp_action(Action{env_action(0), env_action(1)});
    const StepOutcome out = world_->step(a);
    Step s;
    s.obs = obs_to_vector(out.observation);
    s.reward = out.reward_total;
    s.done = out.event != Event::kRunning;
    s.success = out.event == Event::kSuccess;
    return s;
  }

  const World& world() const { return *world_; }

 private:
  EnvParams params_;
  Density density_;
  TimeoutMode mode_;
  std::optional<World> world_;
};

inline EnvFactory merge_env_factory(const EnvParams& params, Density density,
                                    TimeoutMode mode) {
  return [params, density, mode]() {
    return std::make_unique<MergeRlEnv>(params, density, mode);
  };
}

// --- policies ---------------------------------------------------------------

using PolicyFn = std::function<Action(const World&, const Observation&)>;

inline PolicyFn mean_policy(std::shared_ptr<const GaussianPolicy> policy) {
  return [policy](const World&, const Observation& obs) {
    const SampledAction a = sample_action(*policy, obs_to_vector(obs), ActionMode::kMean);
    return clamp_action(Action{a.env_action(0), a.env_action(1)});
  };
}

// Scripted unsafe baseline: full throttle, no steering.
inline PolicyFn full_throttle_policy() {
  return [](const World&, const Observation&) { return Action{kAxMax, 0.0}; };
}

// --- per-trial records and statistics ----------------------------------------

struct TrialRecord {
  long trial = 0;
  std::uint64_t seed = 0;
  Event outcome = Event::kRunning;
  double duration_s = 0.0;
  double distance_m = 0.0;
  double max_h = -1e300;  // worst constraint value seen over the episode
  long steps = 0;
  long shield_pass = 0;
  long shield_projected = 0;
  long shield_fallback = 0;
};

struct TrialStats {
  long trials = 0;
  double success_rate = 0.0;
  double collision_rate = 0.0;
  double timeout_rate = 0.0;
  double total_distance_km = 0.0;
  double collisions_per_million_km = 0.0;
  long shield_pass = 0;
  long shield_projected = 0;
  long shield_fallback = 0;
  double mean_duration_s = 0.0;

  static TrialStats from_records(const std::vector<TrialRecord>& records) {
    TrialStats s;
    s.trials = static_cast<long>(records.size());
    if (records.empty()) return s;
    long succ = 0, coll = 0, tout = 0;
    double dist = 0.0, dur = 0.0;
    for (const auto& r : records) {
      succ += r.outcome == Event::kSuccess;
      coll += r.outcome == Event::kCollision;
      tout += r.outcome == Event::kTimeout;
      dist += r.distance_m;
      dur += r.duration_s;
      s.shield_pass += r.shield_pass;
      s.shield_projected += r.shield_projected;
      s.shield_fallback += r.shield_fallback;
    }
    s.success_rate = static_cast<double>(succ) / s.trials;
    s.collision_rate = static_cast<double>(coll) / s.trials;
    s.timeout_rate = static_cast<double>(tout) / s.trials;
    s.total_distance_km = dist / 1000.0;
    s.collisions_per_million_km =
        s.total_distance_km > 0.0 ? coll / s.total_distance_km * 1e6 : 0.0;
    s.mean_duration_s = dur / s.trials;
    return s;
  }
};

// --- episode rollout -----------------------------------------------------------

struct StepTrace {
  long step = 0;
  double t = 0.0;
  double x = 0.0, y = 0.0, v = 0.0, phi = 0.0;
  double a_x = 0.0, delta = 0.0;
  double reward = 0.0;
  RewardComponents components;
  Event event = Event::kRunning;
  ShieldStatus shield_status = ShieldStatus::kPassThrough;
  bool shield_active = false;
  double shield_distance = 0.0;
  double max_h = 0.0;
  double max_tightened_violation = 0.0;
  int active_constraints = 0;
};

struct TraceBundle {
  std::vector<StepTrace> rows;
  Event final_event = Event::kRunning;
  double duration_s = 0.0;
  std::vector<VehiclePose> final_vehicles;
};

// Rolls one episode to termination. The shield, when configured, corrects
// every policy action before it reaches the environment.
inline TrialRecord run_episode(World& world, const PolicyFn& policy,
                               const std::optional<ShieldConfig>& shield,
                               TraceBundle* trace = nullptr) {
  TrialRecord rec;
  rec.max_h = world.constraints().max_h();
  for (;;) {
    const Observation obs = world.observation();
    Action a = clamp_action(policy(world, obs));
    ShieldStatus status = ShieldStatus::kPassThrough;
    double sdist = 0.0, sviol = 0.0;
    int active = 0;
    if (shield) {
      ShieldResult res;
      try {
        res = shield_project(world, a, *shield);
      } catch (const OffNetworkError&) {
        res.action = a;  // prediction left the network; act unshielded
        res.status = ShieldStatus::kPassThrough;
      }
      status = res.status;
      sdist = res.distance;
      sviol = res.max_tightened_violation;
      active = static_cast<int>(res.active_ids.size());
      a = res.action;
      rec.shield_pass += status == ShieldStatus::kPassThrough;
      rec.shield_projected += status == ShieldStatus::kProjected;
      rec.shield_fallback += status == ShieldStatus::kFallbackRelaxed;
    }
    const StepOutcome out = world.step(a);
    rec.steps += 1;
    double h_now = rec.max_h;
    if (!world.off_network()) {
      h_now = world.constraints().max_h();
      rec.max_h = std::max(rec.max_h, h_now);
    }
    if (trace) {
      StepTrace row;
      row.step = rec.steps;
      row.t = world.time();
      row.x = world.ego().x;
      row.y = world.ego().y;
      row.v = world.ego().v;
      row.phi = world.ego().phi;
      row.a_x = a.a_x;
      row.delta = a.delta;
      row.reward = out.reward_total;
      row.components = out.components;
      row.event = out.event;
      row.shield_status = status;
      row.shield_active = shield.has_value();
      row.shield_distance = sdist;
      row.max_h = h_now;
      row.max_tightened_violation = sviol;
      row.active_constraints = active;
      trace->rows.push_back(row);
    }
    if (out.event != Event::kRunning) {
      rec.outcome = out.event;
      break;
    }
  }
  rec.duration_s = world.time();
  rec.distance_m = world.odometer();
  if (trace) {
    trace->final_event = rec.outcome;
    trace->duration_s = rec.duration_s;
    trace->final_vehicles = world.vehicle_poses();
  }
  return rec;
}

// Seeded trial batch; trials are independent worlds (seed + index) and may be
// spread across worker threads, with records merged in trial order.
inline TrialStats run_trials(const EnvParams& params, Density density,
                             const PolicyFn& policy,
                             const std::optional<ShieldConfig>& shield, long n,
                             std::uint64_t seed, int threads,
                             std::vector<TrialRecord>* out_records = nullptr) {
  if (n < 1) throw ConfigError("run_trials: need at least one trial");
  std::vector<TrialRecord> records(n);
  auto work = [&](long lo, long hi) {
    for (long i = lo; i < hi; ++i) {
      World world = spawn_scenario(params, seed + static_cast<std::uint64_t>(i), density,
                                   TimeoutMode::kEvaluation);
      records[i] = run_episode(world, policy, shield);
      records[i].trial = i;
      records[i].seed = seed + static_cast<std::uint64_t>(i);
    }
  };
  const int workers = std::max<int>(1, static_cast<int>(std::min<long>(threads, n)));
  if (workers == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const long chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const long lo = w * chunk;
      const long hi = std::min<long>(n, lo + chunk);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
    for (auto& t : pool) t.join();
  }
  if (out_records) *out_records = records;
  return TrialStats::from_records(records);
}

// --- formatting -----------------------------------------------------------------

inline std::string trials_csv_header() {
  return "trial,seed,outcome,duration_s,distance_m,max_h_m,steps,shield_pass,"
         "shield_projected,shield_fallback\n";
}

inline std::string trial_record_csv(const TrialRecord& r) {
  std::ostringstream os;
  os << r.trial << ',' << r.seed << ',' << event_name(r.outcome) << ','
     << fmt_g17(r.duration_s) << ',' << fmt_g17(r.distance_m) << ',' << fmt_g17(r.max_h)
     << ',' << r.steps << ',' << r.shield_pass << ',' << r.shield_projected << ','
     << r.shield_fallback << '\n';
  return os.str();
}

inline std::string stats_csv_header() {
  return "label,trials,success_rate,collision_rate,timeout_rate,total_distance_km,"
         "collisions_per_million_km,mean_duration_s,shield_pass,shield_projected,"
         "shield_fallback\n";
}

inline std::string stats_csv_row(const std::string& label, const TrialStats& s) {
  std::ostringstream os;
  os << label << ',' << s.trials << ',' << fmt_g17(s.success_rate) << ','
     << fmt_g17(s.collision_rate) << ',' << fmt_g17(s.timeout_rate) << ','
     << fmt_g17(s.total_distance_km) << ',' << fmt_g17(s.collisions_per_million_km) << ','
     << fmt_g17(s.mean_duration_s) << ',' << s.shield_pass << ',' << s.shield_projected
     << ',' << s.shield_fallback << '\n';
  return os.str();
}

// Aligned text table in the success / collision / timeout layout.
inline std::string stats_table(const std::vector<std::pair<std::string, TrialStats>>& rows) {
  std::ostringstream os;
  os << "method                          trials  success  collision  timeout  coll/Mkm\n";
  for (const auto& [label, s] : rows) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-30s %7ld  %6.2f%%    %6.2f%%  %6.2f%%  %9.1f\n",
                  label.c_str(), s.trials, 100.0 * s.success_rate,
                  100.0 * s.collision_rate, 100.0 * s.timeout_rate,
                  s.collisions_per_million_km);
    os << buf;
  }
  return os.str();
}

// --- demo traces & plots ----------------------------------------------------------

inline TraceBundle record_demo(const EnvParams& params, Density density,
                               std::uint64_t seed, const PolicyFn& policy,
                               const std::optional<ShieldConfig>& shield) {
  World world = spawn_scenario(params, seed, density, TimeoutMode::kEvaluation);
  TraceBundle bundle;
  run_episode(world, policy, shield, &bundle);
  return bundle;
}

inline void write_trace_csv(const std::string& path, const TraceBundle& b) {
  std::ofstream os(path);
  os << "step,t_s,x_m,y_m,v_mps,phi_rad,a_x,delta,reward,r_safe,r_efficiency,r_comfort,"
        "r_task,r_terminal,event,shield_status,shield_distance,max_h_m,"
        "max_tightened_violation_m,active_constraints\n";
  for (const auto& r : b.rows) {
    os << r.step << ',' << fmt_g17(r.t) << ',' << fmt_g17(r.x) << ',' << fmt_g17(r.y)
       << ',' << fmt_g17(r.v) << ',' << fmt_g17(r.phi) << ',' << fmt_g17(r.a_x) << ','
       << fmt_g17(r.delta) << ',' << fmt_g17(r.reward) << ','
       << fmt_g17(r.components.safe) << ',' << fmt_g17(r.components.efficiency) << ','
       << fmt_g17(r.components.comfort) << ',' << fmt_g17(r.components.task) << ','
       << fmt_g17(r.components.terminal) << ',' << event_name(r.event) << ','
       << shield_status_name(r.shield_status) << ',' << fmt_g17(r.shield_distance) << ','
       << fmt_g17(r.max_h) << ',' << fmt_g17(r.max_tightened_violation) << ','
       << r.active_constraints << '\n';
  }
}

// Per-step shield log: t, status, correction distance, worst h, worst
// tightened violation, active constraint count.
inline void write_shield_log_csv(const std::string& path, const TraceBundle& b) {
  std::ofstream os(path);
  os << "t_s,status,action_distance,max_h_m,max_tightened_violation_m,"
        "active_constraints\n";
  for (const auto& r : b.rows) {
    if (!r.shield_active) continue;
    os << fmt_g17(r.t) << ',' << shield_status_name(r.shield_status) << ','
       << fmt_g17(r.shield_distance) << ',' << fmt_g17(r.max_h) << ','
       << fmt_g17(r.max_tightened_violation) << ',' << r.active_constraints << '\n';
  }
}

inline void write_demo_plots(const std::string& dir, const RoadGeometry& road,
                             const TraceBundle& b) {
  std::vector<double> t, v, phi, ax, delta, x, y;
  for (const auto& r : b.rows) {
    t.push_back(r.t);
    v.push_back(r.v);
    phi.push_back(r.phi);
    ax.push_back(r.a_x);
    delta.push_back(r.delta);
    x.push_back(r.x);
    y.push_back(r.y);
  }
  namespace fs = std::filesystem;
  write_line_plot((fs::path(dir) / "velocity.svg").string(), "Velocity", "t [s]",
                  "v [m/s]", {{"v", "#1f6fb2", t, v}});
  write_line_plot((fs::path(dir) / "heading.svg").string(), "Heading angle", "t [s]",
                  "phi [rad]", {{"phi", "#1f6fb2", t, phi}});
  write_line_plot((fs::path(dir) / "acceleration.svg").string(), "Acceleration", "t [s]",
                  "a_x [m/s^2]", {{"a_x", "#1f6fb2", t, ax}});
  write_line_plot((fs::path(dir) / "wheel_angle.svg").string(), "Front wheel angle",
                  "t [s]", "delta [rad]", {{"delta", "#1f6fb2", t, delta}});
  write_trajectory_plot((fs::path(dir) / "trajectory.svg").string(), road, x, y,
                        b.final_vehicles);
}

// Qualitative merge phase structure: the mean acceleration flips sign between
// the first and second thirds of the pre-merge segment (slow down among
// traffic, then speed up to merge).
inline bool phase_structure_check(const TraceBundle& b, const RoadGeometry& road) {
  std::vector<double> pre_merge_ax;
  for (const auto& r : b.rows) {
    if (r.y >= road.mainline_right_edge_y()) break;
    pre_merge_ax.push_back(r.a_x);
  }
  const std::size_t third = pre_merge_ax.size() / 3;
  if (third < 5) return false;
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < third; ++i) m1 += pre_merge_ax[i];
  for (std::size_t i = third; i < 2 * third; ++i) m2 += pre_merge_ax[i];
  m1 /= third;
  m2 /= third;
  return m1 < 0.0 && m2 > 0.0;
}

}  // namespace mshield
