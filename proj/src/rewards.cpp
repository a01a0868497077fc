#include "lanesim/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace lanesim {

void GeneralRewardWeights::validate() const {
  if (w1 < 0 || w2 < 0) throw std::invalid_argument("general reward: w1, w2 must be >= 0");
  if (w3 > 0 || w4 > 0) throw std::invalid_argument("general reward: w3, w4 must be <= 0");
  if (v_max <= 0) throw std::invalid_argument("general reward: v_max must be > 0");
}

void PotentialFieldParams::validate() const {
  if (sigma <= 0) throw std::invalid_argument("field: sigma must be > 0");
  if (zeta <= 0) throw std::invalid_argument("field: zeta must be > 0");
  if (l <= 0) throw std::invalid_argument("field: l must be > 0");
}

void DiffRewardWeights::validate() const {
  if (omega1 < 0 || omega2 < 0 || omega3 < 0)
    throw std::invalid_argument("diff reward: omega1..3 must be >= 0");
  if (omega4 > 0) throw std::invalid_argument("diff reward: omega4 must be <= 0");
  if (high_speed_frac < 0 || high_speed_frac > 1)
    throw std::invalid_argument("diff reward: high_speed_frac must be in [0,1]");
}

double potential(double x, double y, const PotentialFieldParams& p) {
  const double u = p.l - x;
  const double lon = std::exp(-(u * u) / (2.0 * p.sigma * p.sigma));
  return lon / (p.zeta * std::abs(p.y_tar - y) + 1.0);
}

FieldGradient potential_gradient(double x, double y, const PotentialFieldParams& p) {
  const double f = potential(x, y, p);
  FieldGradient g;
  g.dx = f * (p.l - x) / (p.sigma * p.sigma);
  if (y == p.y_tar) {
    g.dy = 0.0;
    g.dy_defined = false;
  } else {
    const double sgn = (y > p.y_tar) ? 1.0 : -1.0;
    g.dy = -f * p.zeta * sgn / (p.zeta * std::abs(p.y_tar - y) + 1.0);
  }
  return g;
}

double position_reward_continuous(double vx, double vy, double x, double y,
                                  const PotentialFieldParams& p) {
  if (y == p.y_tar)
    return position_reward_discrete(vx, static_cast<int>(std::lround(vy)), x, y, p,
                                    PositionRewardForm::analytic);
  const FieldGradient g = potential_gradient(x, y, p);
  return vx * g.dx + vy * g.dy;
}

double position_reward_discrete(double vx, int vy, double x, double y,
                                const PotentialFieldParams& p, PositionRewardForm form) {
  const double f = potential(x, y, p);
  const double lon_factor =
      (form == PositionRewardForm::unnormalized) ? (p.l - x) : (p.l - x) / (p.sigma * p.sigma);

  // Lateral coefficient: +1 toward the target lane, -1 away; on the target
  // lane the convention sign(y - y_tar) := -vy penalizes any lane change.
  double s;
  if (y == p.y_tar)
    s = -static_cast<double>(vy);
  else
    s = (p.y_tar > y) ? 1.0 : -1.0;
  const double lat = p.zeta * static_cast<double>(vy) * s / (p.zeta * std::abs(p.y_tar - y) + 1.0);

  return (vx * lon_factor + lat) * f;
}

double flow_reward(const WorldState& state, double v_max) {
  if (state.vehicles.empty()) return 0.0;
  double s = 0.0;
  for (const auto& v : state.vehicles) s += v.v / v_max;
  return s / static_cast<double>(state.vehicles.size());
}

int safety_term(const TickEvents& events) {
  return static_cast<int>(events.collided_ids.size());
}

int action_reward(JointAction action, double v, double v_max, double high_speed_frac) {
  if (action.lon == LonAction::acc) return 1;
  if (action.lon == LonAction::keep && v >= high_speed_frac * v_max) return 1;
  return 0;
}

double general_reward(const WorldState& state, const TickEvents& events,
                      const GeneralRewardWeights& w) {
  const auto n = static_cast<double>(state.vehicles.size());
  if (n == 0) return 0.0;
  double speed_sum = 0.0;
  for (const auto& v : state.vehicles) speed_sum += v.v / w.v_max;
  const double n_sat = static_cast<double>(events.newly_satisfied);
  const double n_col = static_cast<double>(events.collisions.size());
  const double n_lc = static_cast<double>(events.frequent_lc);
  return (w.w1 * speed_sum + w.w2 * n_sat + w.w3 * n_col + w.w4 * n_lc) / n;
}

RewardBreakdown env_reward(const WorldState& state,
                           const std::map<int, JointAction>& actions,
                           const TickEvents& events, const DiffRewardWeights& w,
                           const std::map<int, PotentialFieldParams>& fields,
                           const RoadConfig& cfg, PositionRewardForm form) {
  RewardBreakdown b;
  b.r_flow = flow_reward(state, cfg.v_max);
  b.r_safe = static_cast<double>(safety_term(events));

  // Pre-move lane per vehicle, reconstructed from this tick's changes.
  std::map<int, int> lane_before;
  for (const auto& lc : events.lane_changes) lane_before[lc.id] = lc.from;

  for (const auto& veh : state.vehicles) {
    if (!veh.is_cav()) continue;
    const auto it = actions.find(veh.id);
    if (it == actions.end()) continue;  // spawned this tick, no decision yet
    const JointAction act = it->second;

    const int r_a = action_reward(act, veh.v, cfg.v_max, w.high_speed_frac);

    const auto fit = fields.find(veh.id);
    if (fit == fields.end())
      throw std::invalid_argument("env_reward: missing field params for CAV " +
                                  std::to_string(veh.id));
    const auto lb = lane_before.find(veh.id);
    const int y_pre = (lb == lane_before.end()) ? veh.lane : lb->second;
    const int vy = veh.lane - y_pre;
    const double x_pre = veh.p_lon - veh.v * cfg.dt;  // exact: p_lon += v * dt
    const double r_p = position_reward_discrete(veh.v, vy, x_pre,
                                                static_cast<double>(y_pre), fit->second, form);

    b.per_agent[veh.id] = {static_cast<double>(r_a), r_p};
  }

  if (!b.per_agent.empty()) {
    for (const auto& [id, ra_rp] : b.per_agent) {
      b.r_a_mean += ra_rp[0];
      b.r_p_mean += ra_rp[1];
    }
    b.r_a_mean /= static_cast<double>(b.per_agent.size());
    b.r_p_mean /= static_cast<double>(b.per_agent.size());
  }

  b.total = w.omega1 * b.r_a_mean + w.omega2 * b.r_p_mean + w.omega3 * b.r_flow +
            w.omega4 * b.r_safe;
  return b;
}

std::pair<double, CenteringState> center_reward(double r, CenteringState c) {
  const double centered = r - c.mean_estimate;
  if (c.mode == CenteringState::Mode::running) c.mean_estimate += c.beta * centered;
  return {centered, c};
}

PotentialFieldParams field_for(const Vehicle& veh, const RoadConfig& cfg, double sigma,
                               double zeta) {
  PotentialFieldParams p;
  p.sigma = sigma;
  p.zeta = zeta;
  p.l = cfg.road_length;
  p.y_tar = static_cast<double>(goal_target_lane(veh.goal.kind, veh.lane, cfg.n_lanes));
  return p;
}

}  // namespace lanesim
