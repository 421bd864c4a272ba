#pragma once

// Flat JSON configuration with sections road / traffic / reward /
// observation / ego / train / shield. Loading is strict: every key must be
// present and unknown keys are rejected, so a resolved config dump is always
// complete and re-usable verbatim.

#include <array>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mshield/dsac.hpp"
#include "mshield/env.hpp"
#include "mshield/shield.hpp"

namespace mshield {

using Json = nlohmann::json;

struct AppConfig {
  RoadParams road;
  TrafficConfig traffic;
  RewardWeights reward;
  ObservationNorm norm;
  double ego_length = 4.8;
  double ego_width = 1.8;
  bool safety_reward = true;
  TrainConfig train;
  ShieldConfig shield;

  EnvParams env_params() const {
    EnvParams p;
    p.road = road;
    p.traffic = traffic;
    p.reward = reward;
    p.norm = norm;
    p.ego_length = ego_length;
    p.ego_width = ego_width;
    p.safety_reward = safety_reward;
    return p;
  }
};

inline AppConfig default_config() {
  AppConfig c;
  // Desk-scale training defaults; the full-scale hyperparameters live in
  // configs/fullscale.json.
  c.train.hidden = {64, 64};
  c.train.total_iterations = 150000;
  c.train.eval_interval = 2500;
  c.train.target_entropy = -2.0;
  return c;
}

namespace cfgdetail {

inline const Json& require(const Json& j, const std::string& key,
                           const std::string& path) {
  if (!j.contains(key)) {
    throw ConfigError("missing config key: " + path + key);
  }
  return j.at(key);
}

inline void reject_unknown(const Json& j, const std::set<std::string>& allowed,
                           const std::string& path) {
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw ConfigError("unknown config key: " + path + item.key());
    }
  }
}

template <typename T>
T get(const Json& j, const std::string& key, const std::string& path) {
  try {
    return require(j, key, path).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError("bad value for config key " + path + key + ": " + e.what());
  }
}

template <std::size_t N>
std::array<double, N> get_array(const Json& j, const std::string& key,
                                const std::string& path) {
  const auto v = get<std::vector<double>>(j, key, path);
  if (v.size() != N) {
    throw ConfigError("config key " + path + key + " must have " +
                      std::to_string(N) + " entries");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = v[i];
  return out;
}

}  // namespace cfgdetail

inline AppConfig config_from_json(const Json& j) {
  using namespace cfgdetail;
  AppConfig c;
  reject_unknown(j, {"road", "traffic", "reward", "observation", "ego", "train", "shield"},
                 "");

  {
    const Json& r = require(j, "road", "");
    const std::string p = "road.";
    reject_unknown(r,
                   {"mainline_length_m", "lane_width_m", "lanes", "merge_station_m",
                    "ramp_angle_deg", "accel_lane_length_m", "speed_limit_mps"},
                   p);
    c.road.mainline_length_m = get<double>(r, "mainline_length_m", p);
    c.road.lane_width_m = get<double>(r, "lane_width_m", p);
    c.road.lanes = get<int>(r, "lanes", p);
    c.road.merge_station_m = get<double>(r, "merge_station_m", p);
    c.road.ramp_angle_deg = get<double>(r, "ramp_angle_deg", p);
    c.road.accel_lane_length_m = get<double>(r, "accel_lane_length_m", p);
    c.road.speed_limit_mps = get<double>(r, "speed_limit_mps", p);
  }
  {
    const Json& t = require(j, "traffic", "");
    const std::string p = "traffic.";
    reject_unknown(t,
                   {"emission_sparse_vps", "emission_dense_vps", "warmup_s", "idm_a_max",
                    "idm_b", "idm_s0", "idm_exponent", "max_brake", "mobil_threshold",
                    "mobil_b_safe", "lane_change_duration_s", "lane_change_cooldown_s",
                    "types"},
                   p);
    c.traffic.emission_sparse_vps = get<double>(t, "emission_sparse_vps", p);
    c.traffic.emission_dense_vps = get<double>(t, "emission_dense_vps", p);
    c.traffic.warmup_s = get<double>(t, "warmup_s", p);
    c.traffic.idm_a_max = get<double>(t, "idm_a_max", p);
    c.traffic.idm_b = get<double>(t, "idm_b", p);
    c.traffic.idm_s0 = get<double>(t, "idm_s0", p);
    c.traffic.idm_exponent = get<double>(t, "idm_exponent", p);
    c.traffic.max_brake = get<double>(t, "max_brake", p);
    c.traffic.mobil_threshold = get<double>(t, "mobil_threshold", p);
    c.traffic.mobil_b_safe = get<double>(t, "mobil_b_safe", p);
    c.traffic.lane_change_duration_s = get<double>(t, "lane_change_duration_s", p);
    c.traffic.lane_change_cooldown_s = get<double>(t, "lane_change_cooldown_s", p);
    const Json& types = require(t, "types", p);
    if (!types.is_array() || types.size() != 4) {
      throw ConfigError("traffic.types must be an array of 4 entries");
    }
    for (int k = 0; k < 4; ++k) {
      const std::string tp = "traffic.types[" + std::to_string(k) + "].";
      const Json& e = types[k];
      reject_unknown(e,
                     {"name", "desired_speed_mean", "desired_speed_std", "headway_s",
                      "politeness", "length", "width"},
                     tp);
      auto& v = c.traffic.types[k];
      v.name = get<std::string>(e, "name", tp);
      v.desired_speed_mean = get<double>(e, "desired_speed_mean", tp);
      v.desired_speed_std = get<double>(e, "desired_speed_std", tp);
      v.headway_s = get<double>(e, "headway_s", tp);
      v.politeness = get<double>(e, "politeness", tp);
      v.length = get<double>(e, "length", tp);
      v.width = get<double>(e, "width", tp);
    }
  }
  {
    const Json& r = require(j, "reward", "");
    const std::string p = "reward.";
    reject_unknown(r,
                   {"k_s", "k_t1", "k_t2", "k_t3", "k_e", "v_exp", "k_c1", "k_c2", "k_c3",
                    "r_success", "r_failure", "d_safe", "d_v_cap_m", "safety_reward"},
                   p);
    c.reward.k_s = get<double>(r, "k_s", p);
    c.reward.k_t1 = get<double>(r, "k_t1", p);
    c.reward.k_t2 = get<double>(r, "k_t2", p);
    c.reward.k_t3 = get<double>(r, "k_t3", p);
    c.reward.k_e = get<double>(r, "k_e", p);
    c.reward.v_exp = get<double>(r, "v_exp", p);
    c.reward.k_c1 = get<double>(r, "k_c1", p);
    c.reward.k_c2 = get<double>(r, "k_c2", p);
    c.reward.k_c3 = get<double>(r, "k_c3", p);
    c.reward.r_success = get<double>(r, "r_success", p);
    c.reward.r_failure = get<double>(r, "r_failure", p);
    c.reward.d_safe = get<double>(r, "d_safe", p);
    c.reward.d_v_cap = get<double>(r, "d_v_cap_m", p);
    c.safety_reward = get<bool>(r, "safety_reward", p);
  }
  {
    const Json& o = require(j, "observation", "");
    const std::string p = "observation.";
    reject_unknown(o, {"sentinel_dy_m", "ego_offset", "ego_scale", "slot_offset",
                       "slot_scale"},
                   p);
    c.norm.sentinel_dy = get<double>(o, "sentinel_dy_m", p);
    c.norm.ego_offset = get_array<8>(o, "ego_offset", p);
    c.norm.ego_scale = get_array<8>(o, "ego_scale", p);
    c.norm.slot_offset = get_array<6>(o, "slot_offset", p);
    c.norm.slot_scale = get_array<6>(o, "slot_scale", p);
  }
  {
    const Json& e = require(j, "ego", "");
    const std::string p = "ego.";
    reject_unknown(e, {"length_m", "width_m"}, p);
    c.ego_length = get<double>(e, "length_m", p);
    c.ego_width = get<double>(e, "width_m", p);
  }
  {
    const Json& t = require(j, "train", "");
    const std::string p = "train.";
    reject_unknown(t,
                   {"gamma", "tau", "update_delay", "reward_scale", "batch_size",
                    "buffer_capacity", "warmup_steps", "total_iterations", "seed",
                    "hidden", "actor_lr_base", "actor_lr_floor", "critic_lr_base",
                    "critic_lr_floor", "alpha_lr_base", "alpha_lr_floor",
                    "target_entropy", "sigma_min", "init_alpha", "eval_interval",
                    "eval_episodes", "eval_best_k", "actors", "learners", "buffers"},
                   p);
    c.train.gamma = get<double>(t, "gamma", p);
    c.train.tau = get<double>(t, "tau", p);
    c.train.update_delay = get<int>(t, "update_delay", p);
    c.train.reward_scale = get<double>(t, "reward_scale", p);
    c.train.batch_size = get<int>(t, "batch_size", p);
    c.train.buffer_capacity = get<long>(t, "buffer_capacity", p);
    c.train.warmup_steps = get<long>(t, "warmup_steps", p);
    c.train.total_iterations = get<long>(t, "total_iterations", p);
    c.train.seed = get<std::uint64_t>(t, "seed", p);
    c.train.hidden = get<std::vector<int>>(t, "hidden", p);
    c.train.actor_lr_base = get<double>(t, "actor_lr_base", p);
    c.train.actor_lr_floor = get<double>(t, "actor_lr_floor", p);
    c.train.critic_lr_base = get<double>(t, "critic_lr_base", p);
    c.train.critic_lr_floor = get<double>(t, "critic_lr_floor", p);
    c.train.alpha_lr_base = get<double>(t, "alpha_lr_base", p);
    c.train.alpha_lr_floor = get<double>(t, "alpha_lr_floor", p);
    c.train.target_entropy = get<double>(t, "target_entropy", p);
    c.train.sigma_min = get<double>(t, "sigma_min", p);
    c.train.init_alpha = get<double>(t, "init_alpha", p);
    c.train.eval_interval = get<long>(t, "eval_interval", p);
    c.train.eval_episodes = get<int>(t, "eval_episodes", p);
    c.train.eval_best_k = get<int>(t, "eval_best_k", p);
    c.train.actors = get<int>(t, "actors", p);
    c.train.learners = get<int>(t, "learners", p);
    c.train.buffers = get<int>(t, "buffers", p);
    c.train.validate();
  }
  {
    const Json& s = require(j, "shield", "");
    const std::string p = "shield.";
    reject_unknown(s, {"lambda", "dt", "solver_iteration_cap", "activation_margin_m",
                       "fallback_mode"},
                   p);
    c.shield.lambda = get<double>(s, "lambda", p);
    c.shield.dt = get<double>(s, "dt", p);
    c.shield.solver_iteration_cap = get<int>(s, "solver_iteration_cap", p);
    c.shield.activation_margin = get<double>(s, "activation_margin_m", p);
    c.shield.fallback_mode = get<std::string>(s, "fallback_mode", p);
    c.shield.validate();
  }
  RoadGeometry validate_road(c.road);  // throws on inconsistent geometry
  (void)validate_road;
  return c;
}

inline Json config_to_json(const AppConfig& c) {
  Json j;
  j["road"] = {{"mainline_length_m", c.road.mainline_length_m},
               {"lane_width_m", c.road.lane_width_m},
               {"lanes", c.road.lanes},
               {"merge_station_m", c.road.merge_station_m},
               {"ramp_angle_deg", c.road.ramp_angle_deg},
               {"accel_lane_length_m", c.road.accel_lane_length_m},
               {"speed_limit_mps", c.road.speed_limit_mps}};
  Json types = Json::array();
  for (const auto& t : c.traffic.types) {
    types.push_back({{"name", t.name},
                     {"desired_speed_mean", t.desired_speed_mean},
                     {"desired_speed_std", t.desired_speed_std},
                     {"headway_s", t.headway_s},
                     {"politeness", t.politeness},
                     {"length", t.length},
                     {"width", t.width}});
  }
  j["traffic"] = {{"emission_sparse_vps", c.traffic.emission_sparse_vps},
                  {"emission_dense_vps", c.traffic.emission_dense_vps},
                  {"warmup_s", c.traffic.warmup_s},
                  {"idm_a_max", c.traffic.idm_a_max},
                  {"idm_b", c.traffic.idm_b},
                  {"idm_s0", c.traffic.idm_s0},
                  {"idm_exponent", c.traffic.idm_exponent},
                  {"max_brake", c.traffic.max_brake},
                  {"mobil_threshold", c.traffic.mobil_threshold},
                  {"mobil_b_safe", c.traffic.mobil_b_safe},
                  {"lane_change_duration_s", c.traffic.lane_change_duration_s},
                  {"lane_change_cooldown_s", c.traffic.lane_change_cooldown_s},
                  {"types", types}};
  j["reward"] = {{"k_s", c.reward.k_s},
                 {"k_t1", c.reward.k_t1},
                 {"k_t2", c.reward.k_t2},
                 {"k_t3", c.reward.k_t3},
                 {"k_e", c.reward.k_e},
                 {"v_exp", c.reward.v_exp},
                 {"k_c1", c.reward.k_c1},
                 {"k_c2", c.reward.k_c2},
                 {"k_c3", c.reward.k_c3},
                 {"r_success", c.reward.r_success},
                 {"r_failure", c.reward.r_failure},
                 {"d_safe", c.reward.d_safe},
                 {"d_v_cap_m", c.reward.d_v_cap},
                 {"safety_reward", c.safety_reward}};
  j["observation"] = {
      {"sentinel_dy_m", c.norm.sentinel_dy},
      {"ego_offset", std::vector<double>(c.norm.ego_offset.begin(), c.norm.ego_offset.end())},
      {"ego_scale", std::vector<double>(c.norm.ego_scale.begin(), c.norm.ego_scale.end())},
      {"slot_offset",
       std::vector<double>(c.norm.slot_offset.begin(), c.norm.slot_offset.end())},
      {"slot_scale",
       std::vector<double>(c.norm.slot_scale.begin(), c.norm.slot_scale.end())}};
  j["ego"] = {{"length_m", c.ego_length}, {"width_m", c.ego_width}};
  j["train"] = {{"gamma", c.train.gamma},
                {"tau", c.train.tau},
                {"update_delay", c.train.update_delay},
                {"reward_scale", c.train.reward_scale},
                {"batch_size", c.train.batch_size},
                {"buffer_capacity", c.train.buffer_capacity},
                {"warmup_steps", c.train.warmup_steps},
                {"total_iterations", c.train.total_iterations},
                {"seed", c.train.seed},
                {"hidden", c.train.hidden},
                {"actor_lr_base", c.train.actor_lr_base},
                {"actor_lr_floor", c.train.actor_lr_floor},
                {"critic_lr_base", c.train.critic_lr_base},
                {"critic_lr_floor", c.train.critic_lr_floor},
                {"alpha_lr_base", c.train.alpha_lr_base},
                {"alpha_lr_floor", c.train.alpha_lr_floor},
                {"target_entropy", c.train.target_entropy},
                {"sigma_min", c.train.sigma_min},
                {"init_alpha", c.train.init_alpha},
                {"eval_interval", c.train.eval_interval},
                {"eval_episodes", c.train.eval_episodes},
                {"eval_best_k", c.train.eval_best_k},
                {"actors", c.train.actors},
                {"learners", c.train.learners},
                {"buffers", c.train.buffers}};
  j["shield"] = {{"lambda", c.shield.lambda},
                 {"dt", c.shield.dt},
                 {"solver_iteration_cap", c.shield.solver_iteration_cap},
                 {"activation_margin_m", c.shield.activation_margin},
                 {"fallback_mode", c.shield.fallback_mode}};
  return j;
}

inline AppConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  Json j;
  try {
    is >> j;
  } catch (const Json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const AppConfig& c, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write config file: " + path);
  os << config_to_json(c).dump(2) << "\n";
}

}  // namespace mshield
