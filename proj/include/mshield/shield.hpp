#pragma once

// Online action correction: one-step motion prediction, barrier-tightened
// state constraints g(a) = h(f(s,a)) - (1-lambda) h(s), and least-distance
// projection of the proposed action onto {a : g(a) <= 0} by sequential
// linearization with exact nonlinear verification. A dense-grid minimax
// fallback handles infeasible instances.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mshield/common.hpp"
#include "mshield/env.hpp"
#include "mshield/geometry.hpp"

namespace mshield {

struct ShieldConfig {
  double lambda = 0.5;
  double dt = kDt;
  int solver_iteration_cap = 5;
  double activation_margin = 0.5;  // meters; constraints this close to active are linearized
  std::string fallback_mode = "minimax_grid";

  void validate() const {
    if (!(lambda > 0.0 && lambda <= 1.0)) {
      throw ConfigError("shield.lambda must be in (0, 1]");
    }
    if (solver_iteration_cap < 1) {
      throw ConfigError("shield.solver_iteration_cap must be >= 1");
    }
    if (fallback_mode != "minimax_grid") {
      throw ConfigError("shield.fallback_mode: only 'minimax_grid' is implemented");
    }
  }
};

enum class ShieldStatus { kPassThrough, kProjected, kFallbackRelaxed };

inline const char* shield_status_name(ShieldStatus s) {
  switch (s) {
    case ShieldStatus::kPassThrough: return "pass";
    case ShieldStatus::kProjected: return "projected";
    case ShieldStatus::kFallbackRelaxed: return "fallback";
  }
  return "?";
}

struct ShieldResult {
  Action action;
  ShieldStatus status = ShieldStatus::kPassThrough;
  double max_tightened_violation = 0.0;  // max g at the returned action
  std::vector<int> active_ids;           // constraints within the activation margin
  double distance = 0.0;                 // ||a - a*||
};

struct Prediction {
  VehiclePose ego;
  std::vector<VehiclePose> others;
};

// One-step prediction: ego through the simulator's bicycle model, every
// surrounding vehicle advanced at constant velocity and heading (the same
// arithmetic as the simulator's frozen-traffic mode, so replay scenarios
// predict exactly).
inline Prediction predict(const World& world, const Action& action, double dt = kDt) {
  Prediction p;
  p.ego = ego_step(world.ego(), action, dt);
  p.others.reserve(world.vehicles().size());
  for (const auto& veh : world.vehicles()) {
    TrafficVehicle moved = veh;
    moved.x += moved.v * dt;
    moved.y += moved.v_lat * dt;
    p.others.push_back(moved.pose());
  }
  return p;
}

inline std::vector<double> flatten_constraints(const ConstraintSet& cs) {
  std::vector<double> h;
  h.reserve(cs.size());
  h.insert(h.end(), cs.vehicle_h.begin(), cs.vehicle_h.end());
  h.insert(h.end(), cs.road_h.begin(), cs.road_h.end());
  return h;
}

// g(a) = h(f(s, a)) - (1 - lambda) h(s), componentwise.
inline std::vector<double> tightened_constraints(const World& world, const Action& action,
                                                 double lambda, double dt = kDt) {
  const std::vector<double> h0 = flatten_constraints(world.constraints());
  const Prediction p = predict(world, action, dt);
  const std::vector<double> h1 =
      flatten_constraints(make_constraint_set(p.ego, p.others, world.road()));
  std::vector<double> g(h1.size());
  for (std::size_t i = 0; i < h1.size(); ++i) g[i] = h1[i] - (1.0 - lambda) * h0[i];
  return g;
}

// True iff max_i h_i(s_{t+k}) <= (1-lambda)^k max_i h_i(s_t) + 1e-6 for every
// step of the window.
inline bool decay_check(const std::vector<double>& max_h_trajectory, double lambda) {
  if (max_h_trajectory.empty()) return true;
  const double h0 = max_h_trajectory.front();
  double factor = 1.0;
  for (std::size_t k = 1; k < max_h_trajectory.size(); ++k) {
    factor *= (1.0 - lambda);
    if (max_h_trajectory[k] > factor * h0 + 1e-6) return false;
  }
  return true;
}

namespace detail {

struct LinearRow {
  double nx, ny;  // gradient
  double c;       // value at the linearization point
};

inline double row_value(const LinearRow& r, double dax, double ddelta) {
  return r.c + r.nx * dax + r.ny * ddelta;
}

}  // namespace detail

// Least-distance projection of a_star onto the tightened-safe action set.
inline ShieldResult shield_project(const World& world, const Action& a_star,
                                   const ShieldConfig& cfg) {
  cfg.validate();
  if (!a_star.in_bounds()) {
    throw InvalidActionError("shield_project: proposal outside the action box");
  }
  const std::vector<double> h0 = flatten_constraints(world.constraints());
  auto eval_g = [&](const Action& a) {
    const Prediction p = predict(world, a, cfg.dt);
    std::vector<double> g =
        flatten_constraints(make_constraint_set(p.ego, p.others, world.road()));
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= (1.0 - cfg.lambda) * h0[i];
    return g;
  };
  auto max_of = [](const std::vector<double>& v) {
    double m = -1e300;
    for (double x : v) m = std::max(m, x);
    return v.empty() ? 0.0 : m;
  };
  auto active_of = [&](const std::vector<double>& g) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g[i] >= -cfg.activation_margin) ids.push_back(static_cast<int>(i));
    }
    return ids;
  };

  const std::vector<double> g_star = eval_g(a_star);
  if (max_of(g_star) <= 0.0) {
    ShieldResult r;
    r.action = a_star;
    r.status = ShieldStatus::kPassThrough;
    r.max_tightened_violation = max_of(g_star);
    r.active_ids = active_of(g_star);
    r.distance = 0.0;
    return r;
  }

  const double fd_step = 1e-4;
  const double solve_tol = 1e-6;
  Action best_action = a_star;
  double best_violation = max_of(g_star);
  bool have_verified = false;
  Action verified_action{};
  double verified_obj = 1e300;

  // Sequential linearization from one start point; updates the best verified
  // projection and the least-violating iterate seen so far.
  auto run_slqp = [&](Action a_lin) {
    double prev_violation = 1e300;
    int no_improve_rounds = 0;
    for (int round = 0; round < cfg.solver_iteration_cap; ++round) {
      const std::vector<double> g_lin = eval_g(a_lin);
      // Central differences in the action for near-active constraints.
      const std::vector<double> g_ax_p =
          eval_g(Action{clamp(a_lin.a_x + fd_step, -kAxMax, kAxMax), a_lin.delta});
      const std::vector<double> g_ax_m =
          eval_g(Action{clamp(a_lin.a_x - fd_step, -kAxMax, kAxMax), a_lin.delta});
      const std::vector<double> g_de_p =
          eval_g(Action{a_lin.a_x, clamp(a_lin.delta + fd_step, -kDeltaMax, kDeltaMax)});
      const std::vector<double> g_de_m =
          eval_g(Action{a_lin.a_x, clamp(a_lin.delta - fd_step, -kDeltaMax, kDeltaMax)});

      std::vector<detail::LinearRow> rows;
      for (std::size_t i = 0; i < g_lin.size(); ++i) {
        if (g_lin[i] < -cfg.activation_margin) continue;
        detail::LinearRow r;
        r.nx = (g_ax_p[i] - g_ax_m[i]) / (2.0 * fd_step);
        r.ny = (g_de_p[i] - g_de_m[i]) / (2.0 * fd_step);
        r.c = g_lin[i];
        rows.push_back(r);
      }
      // Box faces in delta coordinates (relative to a_lin).
      const double bx_hi = kAxMax - a_lin.a_x, bx_lo = -kAxMax - a_lin.a_x;
      const double bd_hi = kDeltaMax - a_lin.delta, bd_lo = -kDeltaMax - a_lin.delta;
      std::vector<detail::LinearRow> all = rows;
      all.push_back({1.0, 0.0, -bx_hi});
      all.push_back({-1.0, 0.0, bx_lo});
      all.push_back({0.0, 1.0, -bd_hi});
      all.push_back({0.0, -1.0, bd_lo});

      const double tx = a_star.a_x - a_lin.a_x, ty = a_star.delta - a_lin.delta;
      const double feas_tol = 1e-9;
      bool found = false;
      double best_obj = 1e300;
      double cand_x = 0.0, cand_y = 0.0;
      auto try_candidate = [&](double dx, double dy) {
        for (const auto& r : all) {
          if (detail::row_value(r, dx, dy) > feas_tol) return;
        }
        const double obj = (dx - tx) * (dx - tx) + (dy - ty) * (dy - ty);
        if (obj < best_obj) {
          best_obj = obj;
          cand_x = dx;
          cand_y = dy;
          found = true;
        }
      };
      // Unconstrained optimum, single active constraints, and pairs.
      try_candidate(tx, ty);
      for (std::size_t i = 0; i < all.size(); ++i) {
        const auto& r = all[i];
        const double n2 = r.nx * r.nx + r.ny * r.ny;
        if (n2 < 1e-18) continue;
        const double lam = (detail::row_value(r, tx, ty)) / n2;
        try_candidate(tx - lam * r.nx, ty - lam * r.ny);
        for (std::size_t j = i + 1; j < all.size(); ++j) {
          const auto& q = all[j];
          const double det = r.nx * q.ny - r.ny * q.nx;
          if (std::fabs(det) < 1e-12) continue;
          const double dx = (-r.c * q.ny + q.c * r.ny) / det;
          const double dy = (-r.nx * q.c + q.nx * r.c) / det;
          try_candidate(dx, dy);
        }
      }
      if (!found) break;  // linearized problem infeasible; fall back to the grid

      const Action cand{clamp(a_lin.a_x + cand_x, -kAxMax, kAxMax),
                        clamp(a_lin.delta + cand_y, -kDeltaMax, kDeltaMax)};
      const double viol = max_of(eval_g(cand));
      if (viol < best_violation) {
        best_violation = viol;
        best_action = cand;
      }
      if (viol <= solve_tol) {
        // Feasible; keep refining the linearization at the candidate, keeping
        // the best verified projection seen.
        const double obj = (cand.a_x - a_star.a_x) * (cand.a_x - a_star.a_x) +
                           (cand.delta - a_star.delta) * (cand.delta - a_star.delta);
        have_verified = true;
        if (obj < verified_obj) {
          verified_obj = obj;
          verified_action = cand;
        }
        const bool converged = std::fabs(cand.a_x - a_lin.a_x) < 1e-9 &&
                               std::fabs(cand.delta - a_lin.delta) < 1e-9;
        if (converged) break;
        a_lin = cand;
        continue;
      }
      if (viol >= prev_violation - 1e-12) {
        if (++no_improve_rounds >= 2) break;  // solver diverged
      } else {
        no_improve_rounds = 0;
      }
      prev_violation = viol;
      a_lin = cand;
    }
  };

  // The linearized problem is blind to symmetric lateral escapes, so probe a
  // few swerve/brake starts besides the proposal itself.
  const Action starts[5] = {
      a_star,
      Action{a_star.a_x, clamp(a_star.delta + 0.3, -kDeltaMax, kDeltaMax)},
      Action{a_star.a_x, clamp(a_star.delta - 0.3, -kDeltaMax, kDeltaMax)},
      Action{clamp(a_star.a_x - 2.0, -kAxMax, kAxMax), a_star.delta},
      Action{-kAxMax, a_star.delta}};
  for (const Action& s : starts) run_slqp(s);

  if (have_verified) {
    ShieldResult r;
    r.action = verified_action;
    r.status = ShieldStatus::kProjected;
    const auto g = eval_g(verified_action);
    r.max_tightened_violation = max_of(g);
    r.active_ids = active_of(g);
    r.distance = std::hypot(verified_action.a_x - a_star.a_x,
                            verified_action.delta - a_star.delta);
    return r;
  }

  // Grid stage: scan the action box, tracking both the nearest feasible
  // point (projection fallback) and the minimax point (relaxed fallback).
  const int nx = 61, ny = 29;
  const double sx = 2.0 * kAxMax / (nx - 1), sy = 2.0 * kDeltaMax / (ny - 1);
  Action feas_best{}, minimax_best{};
  double feas_obj = 1e300, minimax_val = 1e300;
  auto scan = [&](const Action& a) {
    const double v = max_of(eval_g(a));
    if (v < minimax_val) {
      minimax_val = v;
      minimax_best = a;
    }
    if (v <= solve_tol) {
      const double obj = (a.a_x - a_star.a_x) * (a.a_x - a_star.a_x) +
                         (a.delta - a_star.delta) * (a.delta - a_star.delta);
      if (obj < feas_obj) {
        feas_obj = obj;
        feas_best = a;
      }
    }
  };
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      scan(Action{-kAxMax + i * sx, -kDeltaMax + j * sy});
    }
  }
  const int nr = 21;
  const Action center = feas_obj < 1e300 ? feas_best : minimax_best;
  for (int i = 0; i < nr; ++i) {
    for (int j = 0; j < nr; ++j) {
      scan(Action{clamp(center.a_x - sx + 2.0 * sx * i / (nr - 1), -kAxMax, kAxMax),
                  clamp(center.delta - sy + 2.0 * sy * j / (nr - 1), -kDeltaMax,
                        kDeltaMax)});
    }
  }

  ShieldResult r;
  if (feas_obj < 1e300) {
    r.action = feas_best;
    r.status = ShieldStatus::kProjected;
  } else if (minimax_val < best_violation) {
    r.action = minimax_best;
    r.status = ShieldStatus::kFallbackRelaxed;
  } else {
    r.action = best_action;  // best SLQP iterate
    r.status = ShieldStatus::kFallbackRelaxed;
  }
  const auto g = eval_g(r.action);
  r.max_tightened_violation = max_of(g);
  r.active_ids = active_of(g);
  r.distance = std::hypot(r.action.a_x - a_star.a_x, r.action.delta - a_star.delta);
  return r;
}

}  // namespace mshield
