#include "lanesim/world.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "lanesim/percept.hpp"

namespace lanesim {

namespace {

/// Bumper-to-bumper gap from follower front to leader rear.
double gap_between(const Vehicle& leader, const Vehicle& follower, const RoadConfig& cfg) {
  return leader.p_lon - follower.p_lon - cfg.vehicle_length;
}

std::vector<Vehicle*> sorted_by_position(WorldState& state, bool alive_only = true) {
  std::vector<Vehicle*> out;
  out.reserve(state.vehicles.size());
  for (auto& v : state.vehicles)
    if (!alive_only || v.alive) out.push_back(&v);
  std::sort(out.begin(), out.end(), [](const Vehicle* a, const Vehicle* b) {
    if (a->p_lon != b->p_lon) return a->p_lon < b->p_lon;
    return a->id < b->id;
  });
  return out;
}

bool entry_zone_occupied(const WorldState& state, int lane, const RoadConfig& cfg) {
  for (const auto& v : state.vehicles)
    if (v.alive && v.lane == lane && v.p_lon - cfg.vehicle_length < cfg.entry_zone) return true;
  return false;
}

/// Would `veh` overlap anything currently in `lane`?
bool overlaps_in_lane(const WorldState& state, const Vehicle& veh, int lane,
                      const RoadConfig& cfg) {
  for (const auto& other : state.vehicles) {
    if (!other.alive || other.id == veh.id || other.lane != lane) continue;
    if (std::abs(other.p_lon - veh.p_lon) <= cfg.vehicle_length) return true;
  }
  return false;
}

void place_vehicle(WorldState& state, int lane, const RoadConfig& cfg, TickEvents* events) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const bool is_cav = u01(state.rng) < cfg.penetration;
  std::uniform_int_distribution<int> goal_draw(0, 2);
  const GoalKind gk = static_cast<GoalKind>(goal_draw(state.rng));
  std::uniform_real_distribution<double> speed_draw(cfg.spawn_speed_min_frac * cfg.v_max,
                                                    cfg.v_max);
  double v0 = speed_draw(state.rng);

  // Avoid spawning into the back of slow traffic just past the entry zone.
  for (const auto& other : state.vehicles) {
    if (other.alive && other.lane == lane && other.p_lon <= 3.0 * cfg.entry_zone)
      v0 = std::min(v0, other.v);
  }

  Vehicle veh;
  veh.id = state.next_id++;
  veh.kind = is_cav ? VehicleKind::cav : VehicleKind::hdv;
  veh.tau = is_cav ? 2 : 1;
  veh.p_lon = 0.0;
  veh.lane = lane;
  veh.v = v0;
  veh.goal = make_goal(gk, lane, cfg.n_lanes);
  veh.entered_tick = state.tick;
  state.vehicles.push_back(veh);

  ++state.spawned_total;
  if (is_cav) ++state.spawned_cavs;
  if (events) events->spawned_ids.push_back(veh.id);
}

}  // namespace

double idm_acceleration(const Vehicle& follower, const Vehicle* leader, const RoadConfig& cfg) {
  const HdvParams& p = cfg.hdv;
  const double v = follower.v;
  double accel = p.idm_a * (1.0 - std::pow(v / cfg.v_max, p.idm_delta));
  if (leader != nullptr) {
    const double s = std::max(gap_between(*leader, follower, cfg), 0.01);
    const double dv = v - leader->v;
    const double s_star =
        p.idm_s0 + v * p.idm_T + v * dv / (2.0 * std::sqrt(p.idm_a * p.idm_b));
    const double interaction = std::max(s_star, 0.0) / s;
    accel -= p.idm_a * interaction * interaction;
  }
  return std::clamp(accel, -p.max_brake, p.idm_a);
}

double idm_equilibrium_gap(double v, const RoadConfig& cfg) {
  const HdvParams& p = cfg.hdv;
  const double free_term = 1.0 - std::pow(v / cfg.v_max, p.idm_delta);
  return (p.idm_s0 + v * p.idm_T) / std::sqrt(free_term);
}

const Vehicle* leader_in_lane(const WorldState& state, const Vehicle& veh, int lane) {
  const Vehicle* best = nullptr;
  for (const auto& other : state.vehicles) {
    if (!other.alive || other.id == veh.id || other.lane != lane) continue;
    if (other.p_lon <= veh.p_lon) continue;
    if (best == nullptr || other.p_lon < best->p_lon) best = &other;
  }
  return best;
}

const Vehicle* follower_in_lane(const WorldState& state, const Vehicle& veh, int lane) {
  const Vehicle* best = nullptr;
  for (const auto& other : state.vehicles) {
    if (!other.alive || other.id == veh.id || other.lane != lane) continue;
    if (other.p_lon > veh.p_lon) continue;
    if (best == nullptr || other.p_lon > best->p_lon) best = &other;
  }
  return best;
}

void spawn_arrivals(WorldState& state, const RoadConfig& cfg, TickEvents* events) {
  if (state.pending_arrivals.size() < static_cast<size_t>(cfg.n_lanes) + 1)
    state.pending_arrivals.assign(static_cast<size_t>(cfg.n_lanes) + 1, 0);
  const double p = cfg.spawn_probability();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int lane = 1; lane <= cfg.n_lanes; ++lane) {
    bool placed = false;
    if (state.pending_arrivals[static_cast<size_t>(lane)] > 0 &&
        !entry_zone_occupied(state, lane, cfg)) {
      --state.pending_arrivals[static_cast<size_t>(lane)];
      place_vehicle(state, lane, cfg, events);
      placed = true;
    }
    if (p > 0.0 && u01(state.rng) < p) {
      ++state.arrival_events;
      if (!placed && !entry_zone_occupied(state, lane, cfg))
        place_vehicle(state, lane, cfg, events);
      else
        ++state.pending_arrivals[static_cast<size_t>(lane)];
    }
  }
}

void record_lane_change(WorldState& state, Vehicle& veh, int from_lane, const RoadConfig& cfg,
                        TickEvents& events) {
  events.lane_changes.push_back({veh.id, from_lane, veh.lane, veh.is_cav()});
  veh.last_lc_tick = state.tick;
  const int window = static_cast<int>(std::lround(3.0 / cfg.dt));
  veh.recent_lc_ticks.push_back(state.tick);
  std::erase_if(veh.recent_lc_ticks,
                [&](int t) { return t <= state.tick - window; });
  if (veh.recent_lc_ticks.size() >= 2) ++events.frequent_lc;
}

void apply_cav_lateral(WorldState& state, const std::map<int, JointAction>& actions,
                       const RoadConfig& cfg, TickEvents& events) {
  for (const auto& [id, act] : actions) {
    (void)act;
    const Vehicle* v = state.find(id);
    if (v == nullptr || !v->alive || !v->is_cav())
      throw std::invalid_argument("apply_cav_lateral: id " + std::to_string(id) +
                                  " is not an alive CAV");
  }
  for (Vehicle* veh : sorted_by_position(state)) {
    if (!veh->is_cav()) continue;
    const auto it = actions.find(veh->id);
    if (it == actions.end()) continue;
    const int target = lane_transition(veh->lane, it->second.lat, cfg.n_lanes);
    if (target == veh->lane) continue;
    if (overlaps_in_lane(state, *veh, target, cfg)) continue;  // loser holds
    const int from = veh->lane;
    veh->lane = target;
    record_lane_change(state, *veh, from, cfg, events);
  }
}

namespace {

/// MOBIL incentive for moving `veh` into `target` lane; returns the gain in
/// m/s^2 (change of own accel plus politeness-weighted change for the two
/// affected followers), or -inf when the move is unsafe or overlapping.
double mobil_incentive(const WorldState& state, const Vehicle& veh, int target,
                       const RoadConfig& cfg) {
  const HdvParams& p = cfg.hdv;
  if (overlaps_in_lane(state, veh, target, cfg))
    return -std::numeric_limits<double>::infinity();

  const Vehicle* old_leader = leader_in_lane(state, veh, veh.lane);
  const Vehicle* new_leader = leader_in_lane(state, veh, target);
  const Vehicle* new_follower = follower_in_lane(state, veh, target);
  const Vehicle* old_follower = follower_in_lane(state, veh, veh.lane);

  // Safety: the new follower must not be forced to brake harder than b_safe.
  if (new_follower != nullptr) {
    const double a_after = idm_acceleration(*new_follower, &veh, cfg);
    if (a_after < -p.b_safe) return -std::numeric_limits<double>::infinity();
  }

  const double a_self = idm_acceleration(veh, old_leader, cfg);
  const double a_self_new = idm_acceleration(veh, new_leader, cfg);
  double others = 0.0;
  if (new_follower != nullptr) {
    const double before = idm_acceleration(*new_follower, new_leader, cfg);
    const double after = idm_acceleration(*new_follower, &veh, cfg);
    others += after - before;
  }
  if (old_follower != nullptr) {
    const double before = idm_acceleration(*old_follower, &veh, cfg);
    const double after = idm_acceleration(*old_follower, old_leader, cfg);
    others += after - before;
  }
  return a_self_new - a_self + p.politeness * others;
}

}  // namespace

void step_hdv_lateral(WorldState& state, const RoadConfig& cfg, TickEvents& events) {
  const int cooldown = static_cast<int>(std::lround(cfg.hdv.lc_cooldown / cfg.dt));
  for (Vehicle* veh : sorted_by_position(state)) {
    if (veh->is_cav()) continue;
    if (veh->last_lc_tick != std::numeric_limits<int>::min() &&
        state.tick - veh->last_lc_tick < cooldown)
      continue;
    double best_gain = cfg.hdv.lc_threshold;
    int best_lane = veh->lane;
    for (const int target : {veh->lane - 1, veh->lane + 1}) {
      if (target < 1 || target > cfg.n_lanes) continue;
      const double gain = mobil_incentive(state, *veh, target, cfg);
      if (gain > best_gain) {
        best_gain = gain;
        best_lane = target;
      }
    }
    if (best_lane != veh->lane) {
      const int from = veh->lane;
      veh->lane = best_lane;
      record_lane_change(state, *veh, from, cfg, events);
    }
  }
}

void apply_longitudinal(WorldState& state, const std::map<int, JointAction>& actions,
                        const RoadConfig& cfg) {
  // Accelerations against the frozen configuration, then a joint update.
  std::vector<std::pair<Vehicle*, double>> next_speed;
  next_speed.reserve(state.vehicles.size());
  for (auto& veh : state.vehicles) {
    if (!veh.alive) continue;
    double v_next;
    if (veh.is_cav()) {
      const auto it = actions.find(veh.id);
      const LonAction lon = (it == actions.end()) ? LonAction::keep : it->second.lon;
      v_next = apply_kinematics(veh.v, lon, cfg);
    } else {
      const Vehicle* leader = leader_in_lane(state, veh, veh.lane);
      v_next = integrate_speed(veh.v, idm_acceleration(veh, leader, cfg), cfg);
    }
    next_speed.emplace_back(&veh, v_next);
  }
  for (auto& [veh, v_next] : next_speed) {
    veh->v = v_next;
    veh->p_lon += v_next * cfg.dt;
  }
}

void step_hdv(WorldState& state, const RoadConfig& cfg) {
  TickEvents ignored;
  step_hdv_lateral(state, cfg, ignored);
  std::vector<std::pair<Vehicle*, double>> next_speed;
  for (auto& veh : state.vehicles) {
    if (!veh.alive || veh.is_cav()) continue;
    const Vehicle* leader = leader_in_lane(state, veh, veh.lane);
    next_speed.emplace_back(&veh, integrate_speed(veh.v, idm_acceleration(veh, leader, cfg), cfg));
  }
  for (auto& [veh, v_next] : next_speed) {
    veh->v = v_next;
    veh->p_lon += v_next * cfg.dt;
  }
}

void apply_cav_actions(WorldState& state, const std::map<int, JointAction>& actions,
                       const RoadConfig& cfg) {
  TickEvents ignored;
  apply_cav_lateral(state, actions, cfg, ignored);
  for (Vehicle* veh : sorted_by_position(state)) {
    if (!veh->is_cav()) continue;
    const auto it = actions.find(veh->id);
    if (it == actions.end()) continue;
    veh->v = apply_kinematics(veh->v, it->second.lon, cfg);
    veh->p_lon += veh->v * cfg.dt;
  }
}

std::vector<CollisionEvent> detect_collisions(WorldState& state, const RoadConfig& cfg,
                                              TickEvents* events) {
  const double veh_len = cfg.vehicle_length;
  std::vector<CollisionEvent> found;
  std::vector<Vehicle*> ordered = sorted_by_position(state);
  std::set<int> involved;
  // Group by lane, check adjacent pairs only.
  for (size_t i = 0; i < ordered.size(); ++i) {
    Vehicle* follow = ordered[i];
    Vehicle* lead = nullptr;
    for (size_t j = i + 1; j < ordered.size(); ++j) {
      if (ordered[j]->lane == follow->lane) {
        lead = ordered[j];
        break;
      }
    }
    if (lead == nullptr) continue;
    if (lead->p_lon - follow->p_lon - veh_len <= 0.0) {
      found.push_back({lead->id, follow->id, state.tick, follow->lane});
      involved.insert(lead->id);
      involved.insert(follow->id);
    }
  }
  for (int id : involved) {
    if (Vehicle* v = state.find(id)) v->alive = false;
  }
  state.collision_count += static_cast<long>(found.size());
  if (events) {
    events->collisions.insert(events->collisions.end(), found.begin(), found.end());
    events->collided_ids.assign(involved.begin(), involved.end());
  }
  return found;
}

void process_exits(WorldState& state, const RoadConfig& cfg, TickEvents& events) {
  for (auto it = state.vehicles.begin(); it != state.vehicles.end();) {
    if (it->alive && it->p_lon > cfg.road_length) {
      const bool ok = lane_satisfies_goal(it->goal, it->lane, cfg.n_lanes);
      events.exits.push_back({it->id, it->lane, ok, it->kind});
      if (it->is_cav()) {
        ++state.exited_cavs;
        if (ok) ++state.succeeded_cavs;
      }
      it = state.vehicles.erase(it);
    } else {
      ++it;
    }
  }
}

void prune_dead(WorldState& state) {
  std::erase_if(state.vehicles, [](const Vehicle& v) { return !v.alive; });
}

}  // namespace lanesim
