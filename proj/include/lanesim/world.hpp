#pragma once

#include <map>
#include <vector>

#include "lanesim/types.hpp"

namespace lanesim {

/// IDM acceleration for `follower` given its same-lane leader (nullptr for a
/// free road). Clamped to [-max_brake, idm_a].
double idm_acceleration(const Vehicle& follower, const Vehicle* leader, const RoadConfig& cfg);

/// Equilibrium bumper gap at which two identical IDM vehicles at speed v hold
/// zero acceleration: s* = (s0 + v T) / sqrt(1 - (v/v_max)^delta).
double idm_equilibrium_gap(double v, const RoadConfig& cfg);

/// Nearest alive leader ahead of `veh` in `lane` (nullptr if none).
const Vehicle* leader_in_lane(const WorldState& state, const Vehicle& veh, int lane);
/// Nearest alive follower behind `veh` in `lane` (nullptr if none).
const Vehicle* follower_in_lane(const WorldState& state, const Vehicle& veh, int lane);

/// Bernoulli-thinned Poisson arrivals, one draw per lane per tick with
/// p = arrival_rate * dt / 3600. An occupied entry zone defers the arrival to
/// a later tick (per-lane pending queue); attribute draws happen at
/// placement. Spawned ids are appended to `events` when given.
void spawn_arrivals(WorldState& state, const RoadConfig& cfg, TickEvents* events = nullptr);

/// Lateral phase for commanded CAVs, processed in ascending p_lon. A change
/// that would overlap a vehicle already in the target lane is rejected and
/// the vehicle holds. Throws if any key is not an alive CAV (whole step
/// rejected before any mutation).
void apply_cav_lateral(WorldState& state, const std::map<int, JointAction>& actions,
                       const RoadConfig& cfg, TickEvents& events);

/// MOBIL-style incentive/safety lane changes for HDVs, ascending p_lon.
void step_hdv_lateral(WorldState& state, const RoadConfig& cfg, TickEvents& events);

/// Longitudinal phase for every alive vehicle: IDM accelerations are computed
/// against the frozen post-lateral configuration, CAV accelerations come from
/// the action map (missing id -> keep), then all speeds and positions update
/// together.
void apply_longitudinal(WorldState& state, const std::map<int, JointAction>& actions,
                        const RoadConfig& cfg);

/// Composite op: every alive HDV gets a car-following acceleration and an
/// optional incentive lane change; CAVs are untouched.
void step_hdv(WorldState& state, const RoadConfig& cfg);

/// Composite op: lateral rule first, then longitudinal kinematics, for the
/// commanded CAVs only.
void apply_cav_actions(WorldState& state, const std::map<int, JointAction>& actions,
                       const RoadConfig& cfg);

/// Same-lane adjacent pairs with bumper gap <= 0. Colliding vehicles are
/// marked not-alive after the events are recorded (removal happens on the
/// next tick so the overlap is still observable).
std::vector<CollisionEvent> detect_collisions(WorldState& state, const RoadConfig& cfg,
                                              TickEvents* events = nullptr);

/// Vehicles past the road end are scored (goal lane at exit) and removed.
void process_exits(WorldState& state, const RoadConfig& cfg, TickEvents& events);

/// Drop vehicles marked dead by an earlier tick.
void prune_dead(WorldState& state);

/// Lane-change bookkeeping shared by both lateral phases: records the event,
/// updates the vehicle's rolling 3 s window, and flags frequent changers.
void record_lane_change(WorldState& state, Vehicle& veh, int from_lane, const RoadConfig& cfg,
                        TickEvents& events);

}  // namespace lanesim
