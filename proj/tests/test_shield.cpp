#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <optional>
#include <vector>

#include "mshield/shield.hpp"

using namespace mshield;

namespace {

EnvParams default_params() { return EnvParams{}; }

World empty_world(const EnvParams& p) {
  World w(p, 1, Density::kSparse);
  VehiclePose ego;
  ego.x = 150.0;
  ego.y = 0.0;  // acceleration lane
  ego.v = 10.0;
  w.set_ego(ego);
  w.set_frozen_traffic(true);
  return w;
}

TrafficVehicle frozen_vehicle(int id, double x, double y, double v) {
  TrafficVehicle veh;
  veh.id = id;
  veh.x = x;
  veh.y = y;
  veh.v = v;
  veh.lane = 1;
  veh.target_lane = 1;
  return veh;
}

// Dense-grid constrained projection oracle (61 x 29 over the action box).
struct GridOracle {
  bool feasible = false;
  double best_obj = 1e300;
  Action best{};
  double minimax = 1e300;
  Action minimax_action{};
};

GridOracle grid_oracle(const World& w, const Action& a_star, double lambda) {
  GridOracle o;
  for (int i = 0; i < 61; ++i) {
    for (int j = 0; j < 29; ++j) {
      const Action a{-3.0 + i * 0.1, -0.7 + j * 0.05};
      const auto g = tightened_constraints(w, a, lambda);
      double m = -1e300;
      for (double v : g) m = std::max(m, v);
      if (m < o.minimax) {
        o.minimax = m;
        o.minimax_action = a;
      }
      if (m <= 0.0) {
        const double obj = (a.a_x - a_star.a_x) * (a.a_x - a_star.a_x) +
                           (a.delta - a_star.delta) * (a.delta - a_star.delta);
        if (obj < o.best_obj) {
          o.best_obj = obj;
          o.best = a;
          o.feasible = true;
        }
      }
    }
  }
  return o;
}

double objective(const Action& a, const Action& a_star) {
  return (a.a_x - a_star.a_x) * (a.a_x - a_star.a_x) +
         (a.delta - a_star.delta) * (a.delta - a_star.delta);
}

// Random shield instance on a safe world with a violated proposal.
struct Instance {
  World world;
  Action proposal;
};

std::optional<Instance> random_instance(const EnvParams& p, Rng& rng, double lambda) {
  World w(p, 1, Density::kSparse);
  RoadGeometry road(p.road);
  VehiclePose ego;
  const int lane_pick = static_cast<int>(rng.uniform_index(4));
  const double base_y = lane_pick == 0 ? 0.0 : road.lane_center_y(lane_pick - 1);
  ego.x = rng.uniform(120.0, 260.0);
  ego.y = base_y + rng.uniform(-0.8, 0.8);
  ego.phi = rng.uniform(-0.15, 0.15);
  ego.v = rng.uniform(3.0, 18.0);
  w.set_ego(ego);
  w.set_frozen_traffic(true);
  const int n = 1 + static_cast<int>(rng.uniform_index(4));
  for (int k = 0; k < n; ++k) {
    TrafficVehicle veh;
    veh.id = k + 1;
    veh.x = ego.x + (rng.uniform(0.0, 1.0) < 0.7 ? rng.uniform(3.5, 14.0)
                                                 : rng.uniform(-14.0, -3.5));
    const int vl = static_cast<int>(rng.uniform_index(4));
    veh.y = (vl == 0 ? 0.0 : road.lane_center_y(vl - 1)) + rng.uniform(-0.5, 0.5);
    veh.v = rng.uniform(2.0, 18.0);
    veh.lane = vl == 0 ? kAccelLane : vl - 1;
    veh.target_lane = veh.lane;
    w.add_vehicle(veh);
  }
  if (w.constraints().max_h() >= -1e-3) return std::nullopt;  // start unsafe
  const Action a_star{rng.uniform(-3.0, 3.0), rng.uniform(-0.7, 0.7)};
  const auto g = tightened_constraints(w, a_star, lambda);
  double m = -1e300;
  for (double v : g) m = std::max(m, v);
  if (m <= 0.0) return std::nullopt;  // proposal already safe
  return Instance{std::move(w), a_star};
}

}  // namespace

TEST_CASE("predict leaves a zero-speed world unchanged") {
  auto p = default_params();
  World w = empty_world(p);
  VehiclePose ego = w.ego();
  ego.v = 0.0;
  w.set_ego(ego);
  TrafficVehicle veh = frozen_vehicle(1, 100.0, 3.75, 0.0);
  w.add_vehicle(veh);
  const auto pred = predict(w, Action{0.0, 0.5});
  CHECK(pred.ego.x == ego.x);
  CHECK(pred.ego.y == ego.y);
  CHECK(pred.others[0].x == 100.0);
  CHECK(pred.others[0].y == 3.75);
}

TEST_CASE("predict advances surrounding vehicles at constant velocity") {
  auto p = default_params();
  World w = empty_world(p);
  w.add_vehicle(frozen_vehicle(1, 100.0, 3.75, 20.0));
  const auto pred = predict(w, Action{0.0, 0.0});
  CHECK(pred.others[0].x == Catch::Approx(102.0).margin(1e-12));
  CHECK(pred.others[0].y == Catch::Approx(3.75).margin(1e-12));
}

TEST_CASE("predict equals simulator truth on frozen worlds") {
  auto p = default_params();
  World w = empty_world(p);
  w.add_vehicle(frozen_vehicle(1, 160.0, 3.75, 15.0));
  w.add_vehicle(frozen_vehicle(2, 140.0, 7.5, 12.0));
  Rng rng(4);
  for (int step = 0; step < 50; ++step) {
    const Action a{rng.uniform(-1.0, 1.0), rng.uniform(-0.05, 0.05)};
    const auto pred = predict(w, a);
    w.step(a);
    REQUIRE(w.ego().x == pred.ego.x);
    REQUIRE(w.ego().y == pred.ego.y);
    REQUIRE(w.ego().phi == pred.ego.phi);
    REQUIRE(w.ego().v == pred.ego.v);
    const auto poses = w.vehicle_poses();
    for (std::size_t i = 0; i < poses.size(); ++i) {
      REQUIRE(poses[i].x == pred.others[i].x);
      REQUIRE(poses[i].y == pred.others[i].y);
    }
  }
}

TEST_CASE("tightened constraints algebra") {
  auto p = default_params();
  World w = empty_world(p);
  w.add_vehicle(frozen_vehicle(1, 170.0, 0.0, 10.0));

  const Action a{1.0, 0.1};
  const auto h0 = flatten_constraints(w.constraints());
  const auto pred = predict(w, a);
  const auto h1 = flatten_constraints(
      make_constraint_set(pred.ego, pred.others, w.road()));

  // lambda = 1: g equals the predicted constraint values.
  const auto g1 = tightened_constraints(w, a, 1.0);
  for (std::size_t i = 0; i < g1.size(); ++i) {
    REQUIRE(g1[i] == Catch::Approx(h1[i]).margin(1e-12));
  }
  // General identity g = h1 - (1-lambda) h0.
  const auto g05 = tightened_constraints(w, a, 0.5);
  for (std::size_t i = 0; i < g05.size(); ++i) {
    REQUIRE(g05[i] == Catch::Approx(h1[i] - 0.5 * h0[i]).margin(1e-12));
  }
}

TEST_CASE("static safe world satisfies the tightened constraints at zero action") {
  auto p = default_params();
  World w = empty_world(p);
  VehiclePose ego = w.ego();
  ego.v = 0.0;
  w.set_ego(ego);
  w.add_vehicle(frozen_vehicle(1, 170.0, 3.75, 0.0));
  const auto h0 = flatten_constraints(w.constraints());
  for (double lambda : {0.1, 0.5, 1.0}) {
    const auto g = tightened_constraints(w, Action{0.0, 0.0}, lambda);
    for (std::size_t i = 0; i < g.size(); ++i) {
      REQUIRE(g[i] == Catch::Approx(lambda * h0[i]).margin(1e-9));
      REQUIRE(g[i] <= 1e-12);
    }
  }
}

TEST_CASE("shield passes safe proposals through bit-identically") {
  auto p = default_params();
  World w = empty_world(p);
  ShieldConfig cfg;
  cfg.lambda = 0.5;
  const Action a{1.2345678901234, -0.3456789012345};
  const auto r = shield_project(w, a, cfg);
  CHECK(r.status == ShieldStatus::kPassThrough);
  CHECK(r.action.a_x == a.a_x);
  CHECK(r.action.delta == a.delta);
  CHECK(r.distance == 0.0);
  CHECK(r.max_tightened_violation <= 0.0);
}

TEST_CASE("shield rejects lambda outside (0,1] and out-of-box proposals") {
  auto p = default_params();
  World w = empty_world(p);
  ShieldConfig cfg;
  cfg.lambda = 0.0;
  CHECK_THROWS_AS(shield_project(w, Action{0, 0}, cfg), ConfigError);
  cfg.lambda = 0.5;
  CHECK_THROWS_AS(shield_project(w, Action{4.0, 0.0}, cfg), InvalidActionError);
}

TEST_CASE("shield brakes toward a slow leader ahead") {
  auto p = default_params();
  World w = empty_world(p);  // ego at accel lane, v = 10
  // Leader centered 5.6 m ahead of the front bumper pair: clearance 2.0 m.
  w.add_vehicle(frozen_vehicle(1, w.ego().x + 6.8, 0.0, 0.0));
  TrafficVehicle& leader = const_cast<TrafficVehicle&>(w.vehicles()[0]);
  leader.lane = kAccelLane;
  leader.target_lane = kAccelLane;
  const auto cs = w.constraints();
  double hv = -1e300;
  for (double v : cs.vehicle_h) hv = std::max(hv, v);
  REQUIRE(hv == Catch::Approx(-2.0).margin(1e-9));  // 2 m of circle clearance

  ShieldConfig cfg;
  cfg.lambda = 0.5;
  const Action full{3.0, 0.0};
  const auto r = shield_project(w, full, cfg);
  REQUIRE(r.status == ShieldStatus::kProjected);
  CHECK(r.action.a_x < full.a_x);
  CHECK(r.max_tightened_violation <= 1e-6);

  const auto oracle = grid_oracle(w, full, cfg.lambda);
  REQUIRE(oracle.feasible);
  CHECK(objective(r.action, full) <= oracle.best_obj + 1e-3);
}

TEST_CASE("boxed-in ego falls back to the minimax action") {
  auto p = default_params();
  World w = empty_world(p);
  VehiclePose ego = w.ego();
  ego.x = 150.0;
  ego.y = w.road().lane_center_y(1);
  ego.v = 8.0;
  w.set_ego(ego);
  // Surrounded: barely-clear vehicles ahead, behind, left, right.
  auto put = [&](int id, double dx, double dy, double v) {
    TrafficVehicle veh = frozen_vehicle(id, ego.x + dx, ego.y + dy, v);
    w.add_vehicle(veh);
  };
  put(1, 5.0, 0.0, 0.0);    // stopped just ahead
  put(2, -5.0, 0.0, 16.0);  // fast closer behind
  put(3, 0.0, 2.1, 8.0);
  put(4, 0.0, -2.1, 8.0);
  ShieldConfig cfg;
  cfg.lambda = 1.0;
  const Action full{3.0, 0.0};
  const auto r = shield_project(w, full, cfg);
  const auto oracle = grid_oracle(w, full, cfg.lambda);
  if (!oracle.feasible) {
    REQUIRE(r.status == ShieldStatus::kFallbackRelaxed);
    CHECK(r.max_tightened_violation <= oracle.minimax + 1e-9);
  } else {
    REQUIRE(r.status != ShieldStatus::kPassThrough);
  }
}

TEST_CASE("shield output respects the action box on random instances") {
  auto p = default_params();
  Rng rng(555);
  ShieldConfig cfg;
  cfg.lambda = 0.5;
  int solved = 0;
  for (int trial = 0; trial < 600; ++trial) {
    auto inst = random_instance(p, rng, cfg.lambda);
    if (!inst) continue;
    const auto r = shield_project(inst->world, inst->proposal, cfg);
    REQUIRE(std::fabs(r.action.a_x) <= 3.0 + 1e-12);
    REQUIRE(std::fabs(r.action.delta) <= 0.7 + 1e-12);
    if (r.status == ShieldStatus::kProjected) {
      REQUIRE(r.max_tightened_violation <= 1e-6);
      ++solved;
    }
  }
  REQUIRE(solved > 20);
}

TEST_CASE("shield objective is near the grid oracle optimum") {
  auto p = default_params();
  Rng rng(616);
  ShieldConfig cfg;
  cfg.lambda = 0.5;
  int compared = 0;
  for (int trial = 0; trial < 4000 && compared < 120; ++trial) {
    auto inst = random_instance(p, rng, cfg.lambda);
    if (!inst) continue;
    const auto oracle = grid_oracle(inst->world, inst->proposal, cfg.lambda);
    if (!oracle.feasible) continue;
    const auto r = shield_project(inst->world, inst->proposal, cfg);
    REQUIRE(r.status == ShieldStatus::kProjected);
    REQUIRE(objective(r.action, inst->proposal) <= oracle.best_obj + 1e-2);
    ++compared;
  }
  REQUIRE(compared >= 100);
}

TEST_CASE("smaller lambda is more conservative") {
  auto p = default_params();
  Rng rng(717);
  int compared = 0;
  for (int trial = 0; trial < 600 && compared < 150; ++trial) {
    auto inst = random_instance(p, rng, 0.3);
    if (!inst) continue;
    ShieldConfig lo, hi;
    lo.lambda = 0.3;
    hi.lambda = 0.8;
    const auto r_lo = shield_project(inst->world, inst->proposal, lo);
    const auto r_hi = shield_project(inst->world, inst->proposal, hi);
    if (r_lo.status == ShieldStatus::kFallbackRelaxed ||
        r_hi.status == ShieldStatus::kFallbackRelaxed) {
      continue;
    }
    REQUIRE(r_lo.distance >= r_hi.distance - 1e-2);
    ++compared;
  }
  REQUIRE(compared >= 60);
}

TEST_CASE("decay bound sequence examples") {
  // h0 = -1, lambda = 0.3: bounds -0.7, -0.49, -0.343.
  CHECK(decay_check({-1.0, -0.75, -0.55, -0.40}, 0.3));
  CHECK(decay_check({-1.0, -0.7, -0.49, -0.343}, 0.3));     // exactly on the bound
  CHECK_FALSE(decay_check({-1.0, -0.69, -0.55, -0.40}, 0.3));  // above the first bound
  CHECK_FALSE(decay_check({-1.0, -0.75, -0.55, -0.34}, 0.3));  // above the last bound
  // lambda = 1: requires h <= 0 (+tolerance) at every later step.
  CHECK(decay_check({-1.0, -0.5, -0.01}, 1.0));
  CHECK_FALSE(decay_check({-1.0, 0.5}, 1.0));
  CHECK(decay_check({}, 0.5));
}

TEST_CASE("shielded corridor rollout satisfies the decay bound") {
  for (double lambda : {0.1, 0.5, 0.9}) {
    auto p = default_params();
    World w(p, 1, Density::kSparse);
    VehiclePose ego;
    ego.x = 60.0;
    ego.y = w.road().lane_center_y(1);
    ego.v = 10.0;
    w.set_ego(ego);
    w.set_frozen_traffic(true);
    // Slightly slower leader with 0.5 m of circle clearance.
    TrafficVehicle leader = frozen_vehicle(1, ego.x + 5.3, ego.y, 9.8);
    w.add_vehicle(leader);

    ShieldConfig cfg;
    cfg.lambda = lambda;
    std::vector<double> max_h;
    max_h.push_back(w.constraints().max_h());
    REQUIRE(max_h[0] == Catch::Approx(-0.5).margin(1e-9));
    const Action proposal{0.05, 0.0};
    int projected_steps = 0;
    for (int step = 0; step < 100; ++step) {
      const auto r = shield_project(w, proposal, cfg);
      REQUIRE(r.status != ShieldStatus::kFallbackRelaxed);
      if (r.status == ShieldStatus::kProjected) ++projected_steps;
      w.step(r.action);
      max_h.push_back(w.constraints().max_h());
    }
    REQUIRE(decay_check(max_h, lambda));
    REQUIRE(max_h.back() < 1e-6);
    REQUIRE(projected_steps > 0);  // the shield actually engaged
  }
}
