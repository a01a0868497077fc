#pragma once

#include <map>
#include <utility>

#include "lanesim/types.hpp"

namespace lanesim {

/// Weights of the conventional team reward
///   R = (1/N) (w1 * sum_i v_i/v_max + w2 * N_sat + w3 * N_col + w4 * N_LC).
struct GeneralRewardWeights {
  double w1 = 1.0;    // normalized-speed weight, >= 0
  double w2 = 1.0;    // intention-satisfaction weight, >= 0
  double w3 = -5.0;   // collision penalty, <= 0
  double w4 = -0.1;   // frequent-lane-change penalty, <= 0
  double v_max = 25.0;
  void validate() const;
};

/// Goal-centered potential field
///   f(x, y) = exp(-(l-x)^2 / (2 sigma^2)) / (zeta * |y_tar - y| + 1),
/// peaked at the target coordinate (l, y_tar), range (0, 1].
struct PotentialFieldParams {
  double sigma = 50.0;  // longitudinal decay, m
  double zeta = 1.0;    // lateral decay, per lane
  double l = 250.0;     // target longitudinal coordinate (the road exit)
  double y_tar = 2.0;   // target lane
  void validate() const;
};

/// Weights of the differentiated team reward
///   r_env = (1/|N_cav|) sum_i (omega1 r_a^i + omega2 r_p^i)
///           + omega3 r_flow + omega4 r_safe.
struct DiffRewardWeights {
  double omega1 = 0.2;   // action reward, >= 0
  double omega2 = 1.0;   // position reward, >= 0
  double omega3 = 0.5;   // flow reward, >= 0
  double omega4 = -5.0;  // safety term, <= 0
  double lambda = 1.0;   // differential weight used by the shaping analysis
  double high_speed_frac = 0.9;
  void validate() const;
};

/// Which discrete position-reward form to evaluate. `unnormalized` keeps the
/// unnormalized longitudinal factor (l - x); `analytic` uses the true
/// gradient, i.e. (l - x) / sigma^2. Lateral behavior is identical: a lane
/// change toward y_tar earns a positive term, away a negative one, and any
/// lane change while already on y_tar is penalized.
enum class PositionRewardForm { unnormalized, analytic };

enum class RewardVariant { gr, cr, dr };

/// Running or fixed estimate of the average reward used for centering.
struct CenteringState {
  enum class Mode { oracle, running };
  double mean_estimate = 0.0;
  double beta = 0.01;
  Mode mode = Mode::running;
};

struct RewardBreakdown {
  double r_a_mean = 0.0;
  double r_p_mean = 0.0;
  double r_flow = 0.0;
  double r_safe = 0.0;
  double total = 0.0;
  std::map<int, std::array<double, 2>> per_agent;  // id -> (r_a, r_p)
};

double potential(double x, double y, const PotentialFieldParams& p);

/// Analytic partials of the field. The lateral component has a kink at
/// y = y_tar; there dy is reported undefined and callers must apply the
/// discrete form's convention instead.
struct FieldGradient {
  double dx = 0.0;
  double dy = 0.0;
  bool dy_defined = true;
};
FieldGradient potential_gradient(double x, double y, const PotentialFieldParams& p);

/// r_p = v . grad f for real-valued velocities. At y = y_tar delegates to
/// the discrete form (vy rounded to a lane step).
double position_reward_continuous(double vx, double vy, double x, double y,
                                  const PotentialFieldParams& p);

/// Discrete position reward for vy in {-1, 0, 1}, evaluated at the pre-move
/// position (x, y):
///   r_p = [vx * lon_factor + zeta * vy * s / (zeta |y_tar - y| + 1)] * f(x, y)
/// with lon_factor = (l - x) for the unnormalized form and (l - x)/sigma^2 for analytic, and
/// s = sign(y_tar - y) off the target lane, s = -vy on it (so leaving the
/// target lane is always penalized).
double position_reward_discrete(double vx, int vy, double x, double y,
                                const PotentialFieldParams& p,
                                PositionRewardForm form = PositionRewardForm::unnormalized);

/// Mean normalized speed over all vehicles present (HDV and CAV); 0 on an
/// empty road.
double flow_reward(const WorldState& state, double v_max);

/// Count of distinct vehicles involved in a collision this tick.
int safety_term(const TickEvents& events);

/// 1 if accelerating, or keeping speed at v >= high_speed_frac * v_max.
int action_reward(JointAction action, double v, double v_max, double high_speed_frac);

/// Eq-10-style conventional team reward over all vehicles present.
double general_reward(const WorldState& state, const TickEvents& events,
                      const GeneralRewardWeights& w);

/// Differentiated team reward; `fields` supplies the per-CAV potential-field
/// parameters. Per-agent r_a/r_p values are recorded in the breakdown.
RewardBreakdown env_reward(const WorldState& state,
                           const std::map<int, JointAction>& actions,
                           const TickEvents& events, const DiffRewardWeights& w,
                           const std::map<int, PotentialFieldParams>& fields,
                           const RoadConfig& cfg,
                           PositionRewardForm form = PositionRewardForm::unnormalized);

/// Returns the centered reward and the updated centering state. Oracle mode
/// subtracts a fixed constant; running mode subtracts the current estimate
/// and then moves it by beta toward the observation.
std::pair<double, CenteringState> center_reward(double r, CenteringState c);

/// Field parameters for one vehicle: the longitudinal target is the road
/// exit; straight goals aim at the middle lane nearest the current lane.
PotentialFieldParams field_for(const Vehicle& veh, const RoadConfig& cfg, double sigma,
                               double zeta);

}  // namespace lanesim
