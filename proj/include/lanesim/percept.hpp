#pragma once

#include <vector>

#include "lanesim/types.hpp"

namespace lanesim {

/// Own-state part of an observation. Distances to the nearest vehicle in the
/// left, same (front), and right lanes are clamped to (0, d_max]; absent
/// neighbors and absent lanes read exactly d_max.
struct SelfState {
  double p_lon = 0.0;
  double p_lat = 0.0;
  double v = 0.0;
  int tau = 0;
  std::array<double, 3> g{0.0, 0.0, 0.0};
  double d_left = 0.0;
  double d_front = 0.0;
  double d_right = 0.0;
};

/// One row of the relative-state matrix (neighbor j minus self i).
struct NeighborRow {
  double d_p_lon = 0.0;
  double d_p_lat = 0.0;
  double d_v = 0.0;
  double d_tau = 0.0;
  double d_g = 0.0;  // ||g_j - g_i||_2, 0 or sqrt(2) for one-hot goals
};

/// Fixed-width per-agent observation: self vector plus N_max neighbor rows,
/// zero-padded beyond n_real.
struct Observation {
  SelfState self;
  std::vector<NeighborRow> neighbors;  // always max_neighbors rows
  int n_real = 0;
};

/// Lateral coordinate of a lane center, measured from the left road edge.
inline double lane_center(int lane, double lane_width) {
  return (static_cast<double>(lane) - 0.5) * lane_width;
}

/// Pure function of (state, agent, cfg). Neighbors are the alive vehicles
/// within the perception radius (plus all CAVs when shared perception is on
/// and the agent is a CAV), sorted by ascending Euclidean distance with ties
/// broken by vehicle id, then truncated to max_neighbors.
/// Throws std::invalid_argument for unknown or dead agents.
Observation encode_observation(const WorldState& state, int agent_id, const RoadConfig& cfg);

/// Flat numeric layout:
///   [p_lon, p_lat, v, tau, g0, g1, g2, d_left, d_front, d_right]
///   then per neighbor row [d_p_lon, d_p_lat, d_v, d_tau, d_g].
/// Width is 10 + 5 * max_neighbors regardless of traffic density.
std::vector<double> flatten(const Observation& obs);

/// clip(v + a*dt, 0, v_max) shared by CAV actions and the HDV model.
double integrate_speed(double v, double accel, const RoadConfig& cfg);

/// Longitudinal action execution: acc -> +a_acc, keep -> 0, dec -> -a_dec.
double apply_kinematics(double v, LonAction lon, const RoadConfig& cfg);

/// Lateral action execution with boundary clamping; a nonexistent target
/// lane defaults to hold.
int lane_transition(int lane, LatAction lat, int n_lanes);

}  // namespace lanesim
