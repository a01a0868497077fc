#include "lanesim/percept.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lanesim {

namespace {

double euclidean(const Vehicle& a, const Vehicle& b, double lane_width) {
  const double dx = b.p_lon - a.p_lon;
  const double dy = lane_center(b.lane, lane_width) - lane_center(a.lane, lane_width);
  return std::hypot(dx, dy);
}

double goal_distance(const Goal& a, const Goal& b) {
  const auto ga = a.one_hot();
  const auto gb = b.one_hot();
  double s = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double d = gb[k] - ga[k];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

Observation encode_observation(const WorldState& state, int agent_id, const RoadConfig& cfg) {
  const Vehicle* self = state.find(agent_id);
  if (self == nullptr || !self->alive)
    throw std::invalid_argument("encode_observation: agent " + std::to_string(agent_id) +
                                " is not alive");

  Observation obs;
  obs.self.p_lon = self->p_lon;
  obs.self.p_lat = lane_center(self->lane, cfg.lane_width);
  obs.self.v = self->v;
  obs.self.tau = self->tau;
  obs.self.g = self->goal.one_hot();

  // Nearest-vehicle distances per adjacent lane; d_max when absent.
  double d_left = cfg.d_max, d_front = cfg.d_max, d_right = cfg.d_max;
  for (const auto& other : state.vehicles) {
    if (!other.alive || other.id == agent_id) continue;
    if (other.lane == self->lane && other.p_lon > self->p_lon)
      d_front = std::min(d_front, other.p_lon - self->p_lon);
    if (other.lane == self->lane - 1)
      d_left = std::min(d_left, euclidean(*self, other, cfg.lane_width));
    if (other.lane == self->lane + 1)
      d_right = std::min(d_right, euclidean(*self, other, cfg.lane_width));
  }
  obs.self.d_left = d_left;
  obs.self.d_front = d_front;
  obs.self.d_right = d_right;

  struct Candidate {
    double dist;
    const Vehicle* veh;
  };
  std::vector<Candidate> cands;
  const bool shared = cfg.cav_shared_perception && self->is_cav();
  for (const auto& other : state.vehicles) {
    if (!other.alive || other.id == agent_id) continue;
    const double d = euclidean(*self, other, cfg.lane_width);
    if (d <= cfg.perception_radius || (shared && other.is_cav()))
      cands.push_back({d, &other});
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.veh->id < b.veh->id;
  });

  obs.neighbors.assign(static_cast<size_t>(cfg.max_neighbors), NeighborRow{});
  obs.n_real = std::min<int>(cfg.max_neighbors, static_cast<int>(cands.size()));
  for (int k = 0; k < obs.n_real; ++k) {
    const Vehicle& nb = *cands[static_cast<size_t>(k)].veh;
    NeighborRow& row = obs.neighbors[static_cast<size_t>(k)];
    row.d_p_lon = nb.p_lon - self->p_lon;
    row.d_p_lat = lane_center(nb.lane, cfg.lane_width) - lane_center(self->lane, cfg.lane_width);
    row.d_v = nb.v - self->v;
    row.d_tau = static_cast<double>(nb.tau - self->tau);
    row.d_g = goal_distance(self->goal, nb.goal);
  }
  return obs;
}

std::vector<double> flatten(const Observation& obs) {
  std::vector<double> out;
  out.reserve(10 + 5 * obs.neighbors.size());
  out.push_back(obs.self.p_lon);
  out.push_back(obs.self.p_lat);
  out.push_back(obs.self.v);
  out.push_back(static_cast<double>(obs.self.tau));
  for (double gk : obs.self.g) out.push_back(gk);
  out.push_back(obs.self.d_left);
  out.push_back(obs.self.d_front);
  out.push_back(obs.self.d_right);
  for (const auto& row : obs.neighbors) {
    out.push_back(row.d_p_lon);
    out.push_back(row.d_p_lat);
    out.push_back(row.d_v);
    out.push_back(row.d_tau);
    out.push_back(row.d_g);
  }
  return out;
}

double integrate_speed(double v, double accel, const RoadConfig& cfg) {
  return std::clamp(v + accel * cfg.dt, 0.0, cfg.v_max);
}

double apply_kinematics(double v, LonAction lon, const RoadConfig& cfg) {
  double a = 0.0;
  switch (lon) {
    case LonAction::acc: a = cfg.a_acc; break;
    case LonAction::keep: a = 0.0; break;
    case LonAction::dec: a = -cfg.a_dec; break;
  }
  return integrate_speed(v, a, cfg);
}

int lane_transition(int lane, LatAction lat, int n_lanes) {
  switch (lat) {
    case LatAction::left: return std::max(lane - 1, 1);
    case LatAction::hold: return lane;
    case LatAction::right: return std::min(lane + 1, n_lanes);
  }
  return lane;
}

}  // namespace lanesim
