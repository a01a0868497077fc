#include "lanesim/types.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lanesim {

bool lane_satisfies_goal(const Goal& goal, int lane, int n_lanes) {
  switch (goal.kind) {
    case GoalKind::turn_left:
      return lane == 1;
    case GoalKind::turn_right:
      return lane == n_lanes;
    case GoalKind::straight: {
      // Either middle lane counts; for odd lane counts there is one middle.
      const int lo = (n_lanes + 1) / 2;
      const int hi = n_lanes / 2 + 1;
      return lane == lo || lane == hi;
    }
  }
  return false;
}

int goal_target_lane(GoalKind kind, int reference_lane, int n_lanes) {
  switch (kind) {
    case GoalKind::turn_left:
      return 1;
    case GoalKind::turn_right:
      return n_lanes;
    case GoalKind::straight: {
      const int lo = (n_lanes + 1) / 2;
      const int hi = n_lanes / 2 + 1;
      return (std::abs(reference_lane - lo) <= std::abs(reference_lane - hi)) ? lo : hi;
    }
  }
  return 1;
}

Goal make_goal(GoalKind kind, int spawn_lane, int n_lanes) {
  return Goal{kind, goal_target_lane(kind, spawn_lane, n_lanes)};
}

int RoadConfig::n_ticks() const {
  return static_cast<int>(std::llround(episode_duration / dt));
}

void RoadConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("RoadConfig: " + msg); };
  if (road_length <= 0) fail("road_length must be > 0");
  if (n_lanes < 2) fail("n_lanes must be >= 2");
  if (v_max <= 0) fail("v_max must be > 0");
  if (dt <= 0) fail("dt must be > 0");
  if (arrival_rate < 0) fail("arrival_rate must be >= 0");
  if (penetration < 0.0 || penetration > 1.0) fail("penetration must be in [0,1]");
  if (spawn_probability() >= 1.0) fail("per-tick arrival probability must be < 1");
  const double ticks = episode_duration / dt;
  if (std::abs(ticks - std::llround(ticks)) > 1e-9)
    fail("episode_duration must be an integer multiple of dt");
  if (vehicle_length <= 0) fail("vehicle_length must be > 0");
  if (max_neighbors < 0) fail("max_neighbors must be >= 0");
  if (d_max <= 0) fail("d_max must be > 0");
  if (spawn_speed_min_frac < 0 || spawn_speed_min_frac > 1)
    fail("spawn_speed_min_frac must be in [0,1]");
}

const Vehicle* WorldState::find(int id) const {
  for (const auto& v : vehicles)
    if (v.id == id) return &v;
  return nullptr;
}

Vehicle* WorldState::find(int id) {
  for (auto& v : vehicles)
    if (v.id == id) return &v;
  return nullptr;
}

int WorldState::alive_count() const {
  int n = 0;
  for (const auto& v : vehicles)
    if (v.alive) ++n;
  return n;
}

WorldState make_world(const RoadConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  WorldState st;
  st.rng.seed(seed);
  st.pending_arrivals.assign(static_cast<size_t>(cfg.n_lanes) + 1, 0);
  return st;
}

}  // namespace lanesim
