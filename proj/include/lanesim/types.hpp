#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace lanesim {

enum class VehicleKind : std::uint8_t { hdv = 0, cav = 1 };
enum class GoalKind : std::uint8_t { straight = 0, turn_left = 1, turn_right = 2 };

enum class LonAction : std::uint8_t { acc = 0, keep = 1, dec = 2 };
enum class LatAction : std::uint8_t { left = 0, hold = 1, right = 2 };

/// Discrete per-agent action: longitudinal x lateral, 9 combinations.
struct JointAction {
  LonAction lon = LonAction::keep;
  LatAction lat = LatAction::hold;
  bool operator==(const JointAction&) const = default;
};

constexpr int kNumActions = 9;

/// Flat index in [0, 9): lon major, lat minor.
inline int action_index(JointAction a) {
  return static_cast<int>(a.lon) * 3 + static_cast<int>(a.lat);
}
inline JointAction action_from_index(int idx) {
  return {static_cast<LonAction>(idx / 3), static_cast<LatAction>(idx % 3)};
}

/// Driving objective. `target_lane` is the representative lane used by the
/// shaping field; straight goals accept either middle lane for success.
struct Goal {
  GoalKind kind = GoalKind::straight;
  int target_lane = 2;

  std::array<double, 3> one_hot() const {
    std::array<double, 3> g{0.0, 0.0, 0.0};
    g[static_cast<int>(kind)] = 1.0;
    return g;
  }
};

/// Lanes are indexed 1..n_lanes, lane 1 leftmost.
bool lane_satisfies_goal(const Goal& goal, int lane, int n_lanes);

/// Representative target lane for a goal; for straight goals this is the
/// middle lane nearest to `reference_lane` (ties toward the lower index).
int goal_target_lane(GoalKind kind, int reference_lane, int n_lanes);

Goal make_goal(GoalKind kind, int spawn_lane, int n_lanes);

/// Car-following (IDM) and lane-change (MOBIL-style) parameters for HDVs.
struct HdvParams {
  double idm_a = 2.0;          // maximum acceleration, m/s^2
  double idm_b = 2.0;          // comfortable deceleration, m/s^2
  double idm_s0 = 2.0;         // jam distance, m
  double idm_T = 1.2;          // desired time headway, s
  double idm_delta = 4.0;      // free-flow exponent
  double max_brake = 6.0;      // hard deceleration clamp, m/s^2
  double politeness = 0.3;
  double lc_threshold = 0.2;   // incentive threshold, m/s^2
  double b_safe = 3.0;         // max deceleration imposed on new follower
  double lc_cooldown = 1.0;    // s between lane changes of one HDV
};

struct RoadConfig {
  double road_length = 250.0;      // m
  int n_lanes = 4;
  double v_max = 25.0;             // m/s
  double arrival_rate = 250.0;     // vehicles / hour / lane
  double episode_duration = 18.0;  // s
  double dt = 0.1;                 // decision interval, s
  double penetration = 0.5;        // CAV fraction of arrivals

  double lane_width = 3.5;         // m
  double vehicle_length = 5.0;     // m
  double entry_zone = 10.0;        // m kept clear for spawning
  double spawn_speed_min_frac = 0.5;

  // Perception and action execution.
  double perception_radius = 50.0; // R, m
  int max_neighbors = 6;           // N_max
  double d_max = 100.0;            // m, distance placeholder for absent neighbors
  double a_acc = 2.0;              // m/s^2
  double a_dec = 3.0;              // m/s^2, magnitude of deceleration
  bool cav_shared_perception = true;

  HdvParams hdv;

  int n_ticks() const;
  double spawn_probability() const { return arrival_rate * dt / 3600.0; }
  void validate() const;  // throws std::invalid_argument on violations
};

struct CollisionEvent {
  int lead_id = -1;
  int follow_id = -1;
  int tick = 0;
  int lane = 0;
};

struct Vehicle {
  int id = 0;
  VehicleKind kind = VehicleKind::hdv;
  double p_lon = 0.0;  // front-bumper longitudinal position, m
  int lane = 1;
  double v = 0.0;      // m/s
  int tau = 1;         // type code: 1 = HDV, 2 = CAV
  Goal goal;
  bool alive = true;

  int entered_tick = 0;
  int last_lc_tick = std::numeric_limits<int>::min();
  std::vector<int> recent_lc_ticks;  // rolling window, pruned to 3 s
  bool ever_satisfied = false;       // intention satisfied at least once

  bool is_cav() const { return kind == VehicleKind::cav; }
};

struct LaneChange {
  int id = 0;
  int from = 0;
  int to = 0;
  bool is_cav = false;
};

struct ExitEvent {
  int id = 0;
  int lane = 0;
  bool reached_goal = false;
  VehicleKind kind = VehicleKind::hdv;
};

/// Everything that happened during one tick, for rewards and the trace.
struct TickEvents {
  std::vector<CollisionEvent> collisions;
  std::vector<int> collided_ids;  // unique vehicles involved this tick
  std::vector<LaneChange> lane_changes;
  std::vector<ExitEvent> exits;
  std::vector<int> spawned_ids;
  int newly_satisfied = 0;  // CAVs that entered a goal-satisfying lane
  int frequent_lc = 0;      // vehicles whose change this tick is their >=2nd in 3 s
};

struct WorldState {
  int tick = 0;
  std::vector<Vehicle> vehicles;
  std::mt19937_64 rng;
  int next_id = 1;
  std::vector<int> pending_arrivals;  // per lane, arrivals deferred by a busy entry

  // Episode counters.
  long arrival_events = 0;  // Bernoulli-thinned Poisson fires (incl. deferred)
  long spawned_total = 0;
  long spawned_cavs = 0;
  long exited_cavs = 0;
  long succeeded_cavs = 0;
  long collision_count = 0;

  const Vehicle* find(int id) const;
  Vehicle* find(int id);
  int alive_count() const;
};

WorldState make_world(const RoadConfig& cfg, std::uint64_t seed);

}  // namespace lanesim
