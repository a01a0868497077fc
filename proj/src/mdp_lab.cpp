#include "lanesim/mdp_lab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <random>
#include <stdexcept>

namespace lanesim::lab {

Eigen::MatrixXd FiniteMdp::policy_transition() const {
  Eigen::MatrixXd P_pi = Eigen::MatrixXd::Zero(n_states, n_states);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a)
      for (int s2 = 0; s2 < n_states; ++s2) P_pi(s, s2) += pi(s, a) * p(s, a, s2);
  return P_pi;
}

Eigen::VectorXd FiniteMdp::policy_reward() const {
  Eigen::VectorXd R_pi = Eigen::VectorXd::Zero(n_states);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) R_pi(s) += pi(s, a) * r(s, a);
  return R_pi;
}

FiniteMdp FiniteMdp::shifted(double c) const {
  FiniteMdp out = *this;
  for (double& x : out.R) x += c;
  return out;
}

void FiniteMdp::validate() const {
  for (int s = 0; s < n_states; ++s) {
    double pol = 0.0;
    for (int a = 0; a < n_actions; ++a) {
      pol += pi(s, a);
      double row = 0.0;
      for (int s2 = 0; s2 < n_states; ++s2) row += p(s, a, s2);
      if (std::abs(row - 1.0) > 1e-12)
        throw std::invalid_argument("FiniteMdp: P(.|s,a) must sum to 1");
    }
    if (std::abs(pol - 1.0) > 1e-12)
      throw std::invalid_argument("FiniteMdp: policy(.|s) must sum to 1");
  }
}

FiniteMdp random_ergodic_mdp(int n_states, int n_actions, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);  // Dirichlet(1) via normalized exponentials
  std::uniform_real_distribution<double> reward(-1.0, 1.0);

  FiniteMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.P.assign(static_cast<size_t>(n_states) * n_actions * n_states, 0.0);
  mdp.R.assign(static_cast<size_t>(n_states) * n_actions, 0.0);
  mdp.policy.assign(static_cast<size_t>(n_states) * n_actions, 0.0);

  const double smoothing = 1e-3;
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      double total = 0.0;
      for (int s2 = 0; s2 < n_states; ++s2) {
        mdp.p(s, a, s2) = expo(rng);
        total += mdp.p(s, a, s2);
      }
      for (int s2 = 0; s2 < n_states; ++s2) {
        mdp.p(s, a, s2) = (1.0 - smoothing) * mdp.p(s, a, s2) / total + smoothing / n_states;
      }
      mdp.r(s, a) = reward(rng);
    }
    double total = 0.0;
    std::vector<double> w(static_cast<size_t>(n_actions));
    for (int a = 0; a < n_actions; ++a) {
      w[static_cast<size_t>(a)] = expo(rng);
      total += w[static_cast<size_t>(a)];
    }
    for (int a = 0; a < n_actions; ++a) mdp.pi(s, a) = w[static_cast<size_t>(a)] / total;
  }
  return mdp;
}

FiniteMdp alternating_chain() {
  FiniteMdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = 1;
  mdp.P = {0.0, 1.0, 1.0, 0.0};
  mdp.R = {0.0, 2.0};
  mdp.policy = {1.0, 1.0};
  return mdp;
}

namespace {

std::vector<int> reachable_from(const Eigen::MatrixXd& P, int start, bool reverse) {
  const int n = static_cast<int>(P.rows());
  std::vector<int> seen(static_cast<size_t>(n), 0);
  std::queue<int> q;
  q.push(start);
  seen[static_cast<size_t>(start)] = 1;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v = 0; v < n; ++v) {
      const double w = reverse ? P(v, u) : P(u, v);
      if (w > 1e-14 && !seen[static_cast<size_t>(v)]) {
        seen[static_cast<size_t>(v)] = 1;
        q.push(v);
      }
    }
  }
  std::vector<int> out;
  for (int v = 0; v < n; ++v)
    if (!seen[static_cast<size_t>(v)]) out.push_back(v);
  return out;
}

}  // namespace

ChainStructure analyze_chain(const Eigen::MatrixXd& P_pi) {
  ChainStructure cs;
  const int n = static_cast<int>(P_pi.rows());
  auto unreachable_fwd = reachable_from(P_pi, 0, false);
  auto unreachable_bwd = reachable_from(P_pi, 0, true);
  cs.unreachable = unreachable_fwd;
  for (int v : unreachable_bwd)
    if (std::find(cs.unreachable.begin(), cs.unreachable.end(), v) == cs.unreachable.end())
      cs.unreachable.push_back(v);
  std::sort(cs.unreachable.begin(), cs.unreachable.end());
  cs.irreducible = cs.unreachable.empty();
  if (!cs.irreducible) return cs;

  // Period: gcd over edges (u, v) of level(u) + 1 - level(v) from a BFS tree.
  std::vector<int> level(static_cast<size_t>(n), -1);
  std::queue<int> q;
  q.push(0);
  level[0] = 0;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v = 0; v < n; ++v) {
      if (P_pi(u, v) > 1e-14 && level[static_cast<size_t>(v)] < 0) {
        level[static_cast<size_t>(v)] = level[static_cast<size_t>(u)] + 1;
        q.push(v);
      }
    }
  }
  int g = 0;
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v)
      if (P_pi(u, v) > 1e-14)
        g = std::gcd(g, std::abs(level[static_cast<size_t>(u)] + 1 - level[static_cast<size_t>(v)]));
  cs.period = (g == 0) ? 1 : g;
  cs.aperiodic = cs.period == 1;
  return cs;
}

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& P_pi) {
  const auto cs = analyze_chain(P_pi);
  if (!cs.irreducible) {
    std::string msg = "stationary_distribution: reducible chain, disconnected states:";
    for (int v : cs.unreachable) msg += " " + std::to_string(v);
    throw std::invalid_argument(msg);
  }
  const int n = static_cast<int>(P_pi.rows());
  // (P^T - I) mu = 0 with the last balance row replaced by sum-to-one.
  Eigen::MatrixXd A = P_pi.transpose() - Eigen::MatrixXd::Identity(n, n);
  A.row(n - 1).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  b(n - 1) = 1.0;
  Eigen::VectorXd mu = A.partialPivLu().solve(b);
  const double residual = (mu.transpose() * P_pi - mu.transpose()).cwiseAbs().maxCoeff();
  if (residual > 1e-12)
    throw std::runtime_error("stationary_distribution: residual " + std::to_string(residual));
  return mu;
}

double average_reward(const FiniteMdp& mdp) {
  const Eigen::VectorXd mu = stationary_distribution(mdp.policy_transition());
  return mu.dot(mdp.policy_reward());
}

namespace {

/// Direct solve with a residual check; every linear system in this module is
/// tiny, so a loose residual means the inputs are bad, not the solver.
Eigen::VectorXd checked_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                              const char* what) {
  const Eigen::VectorXd x = A.partialPivLu().solve(b);
  const double residual = (A * x - b).cwiseAbs().maxCoeff();
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  if (residual > 1e-10 * scale)
    throw std::runtime_error(std::string(what) + ": solve residual " + std::to_string(residual));
  return x;
}

}  // namespace

Eigen::VectorXd discounted_values(const FiniteMdp& mdp, double gamma) {
  if (gamma < 0.0 || gamma >= 1.0)
    throw std::invalid_argument("discounted_values: gamma must be in [0,1)");
  const int n = mdp.n_states;
  const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - gamma * mdp.policy_transition();
  return checked_solve(A, mdp.policy_reward(), "discounted_values");
}

Eigen::VectorXd differential_values(const FiniteMdp& mdp) {
  const int n = mdp.n_states;
  const Eigen::MatrixXd P_pi = mdp.policy_transition();
  const Eigen::VectorXd mu = stationary_distribution(P_pi);
  const Eigen::VectorXd R_pi = mdp.policy_reward();
  const double r_pi = mu.dot(R_pi);
  const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - P_pi +
                            Eigen::VectorXd::Ones(n) * mu.transpose();
  return checked_solve(A, R_pi - r_pi * Eigen::VectorXd::Ones(n), "differential_values");
}

Eigen::VectorXd centered_discounted_values(const FiniteMdp& mdp, double gamma) {
  if (gamma < 0.0 || gamma >= 1.0)
    throw std::invalid_argument("centered_discounted_values: gamma must be in [0,1)");
  const int n = mdp.n_states;
  const double r_pi = average_reward(mdp);
  const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - gamma * mdp.policy_transition();
  const Eigen::VectorXd centered = mdp.policy_reward() - r_pi * Eigen::VectorXd::Ones(n);
  return checked_solve(A, centered, "centered_discounted_values");
}

ValueBundle solve_values(const FiniteMdp& mdp, double gamma) {
  ValueBundle vb;
  vb.gamma = gamma;
  vb.r_pi = average_reward(mdp);
  vb.h_gamma = discounted_values(mdp, gamma);
  vb.h_tilde = differential_values(mdp);
  vb.h_tilde_gamma = centered_discounted_values(mdp, gamma);
  vb.e_gamma = vb.h_tilde_gamma - vb.h_tilde;
  return vb;
}

std::vector<LaurentRow> laurent_report(const FiniteMdp& mdp, const std::vector<double>& gammas) {
  std::vector<LaurentRow> rows;
  rows.reserve(gammas.size());
  const Eigen::VectorXd h_tilde = differential_values(mdp);
  for (double g : gammas) {
    const Eigen::VectorXd h_tg = centered_discounted_values(mdp, g);
    rows.push_back({g, (h_tg - h_tilde).cwiseAbs().maxCoeff()});
  }
  return rows;
}

Eigen::MatrixXd q_values(const FiniteMdp& mdp, double gamma) {
  const Eigen::VectorXd h = discounted_values(mdp, gamma);
  Eigen::MatrixXd q(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      double acc = mdp.r(s, a);
      for (int s2 = 0; s2 < mdp.n_states; ++s2) acc += gamma * mdp.p(s, a, s2) * h(s2);
      q(s, a) = acc;
    }
  return q;
}

std::vector<int> greedy_actions(const Eigen::MatrixXd& q) {
  std::vector<int> out(static_cast<size_t>(q.rows()));
  for (int s = 0; s < q.rows(); ++s) {
    int best = 0;
    for (int a = 1; a < q.cols(); ++a)
      if (q(s, a) > q(s, best)) best = a;
    out[static_cast<size_t>(s)] = best;
  }
  return out;
}

ShiftReport shift_invariance_check(const FiniteMdp& mdp, double c, double gamma) {
  ShiftReport rep;
  rep.c = c;
  rep.gamma = gamma;
  const FiniteMdp shifted = mdp.shifted(c);

  const Eigen::VectorXd h = discounted_values(mdp, gamma);
  const Eigen::VectorXd h_s = discounted_values(shifted, gamma);
  rep.max_h_shift_error =
      (h_s - h - (c / (1.0 - gamma)) * Eigen::VectorXd::Ones(mdp.n_states)).cwiseAbs().maxCoeff();

  const Eigen::VectorXd ht = centered_discounted_values(mdp, gamma);
  const Eigen::VectorXd ht_s = centered_discounted_values(shifted, gamma);
  rep.max_centered_deviation = (ht_s - ht).cwiseAbs().maxCoeff();

  rep.r_pi_shift_error = std::abs(average_reward(shifted) - average_reward(mdp) - c);

  rep.argmax_unchanged =
      greedy_actions(q_values(mdp, gamma)) == greedy_actions(q_values(shifted, gamma));
  return rep;
}

namespace {

struct DriftChainState {
  double x = 0.0;
  int lane = 1;
};

/// One transition of the drift chain; returns (vx, vy) realized over dt.
struct StepOutcome {
  double vx = 0.0;
  int vy = 0;
  double drift_x = 0.0;  // expected x motion per unit time, before noise
  double drift_y = 0.0;  // expected lane motion per step
};

StepOutcome advance(DriftChainState& s, const DriftChainConfig& c,
                    const PotentialFieldParams& field, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  const double x_center = c.orthogonal_drift ? field.l - 3.0 * field.sigma : field.l;
  const double drift_x = c.pull * (x_center - s.x);
  const double x_next = s.x + drift_x * c.dt + c.noise * std::sqrt(c.dt) * gauss(rng);

  const int y_tar = static_cast<int>(std::lround(field.y_tar));
  int lane_next = s.lane;
  double drift_y = 0.0;
  if (c.orthogonal_drift) {
    // Lane pinned off-target: no lateral motion at all.
  } else if (s.lane == y_tar) {
    const int dir_options[2] = {y_tar > 1 ? -1 : 1, y_tar < c.n_lanes ? 1 : -1};
    if (u01(rng) < c.p_leave) lane_next = s.lane + dir_options[u01(rng) < 0.5 ? 0 : 1];
    // Expected lateral drift on-target is ~0 by symmetry.
  } else {
    const int toward = (y_tar > s.lane) ? 1 : -1;
    drift_y = c.p_return * toward;
    if (u01(rng) < c.p_return) lane_next = s.lane + toward;
  }

  StepOutcome out;
  out.vx = (x_next - s.x) / c.dt;
  out.vy = lane_next - s.lane;
  out.drift_x = drift_x;
  out.drift_y = drift_y;
  s.x = x_next;
  s.lane = lane_next;
  return out;
}

double base_reward(const DriftChainState& s, const DriftChainConfig& c,
                   const PotentialFieldParams& field, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, c.reward_noise);
  return 0.5 + c.reward_slope * (s.x - field.l) / field.sigma + gauss(rng);
}

}  // namespace

EquivalenceReport equivalence_experiment(const DriftChainConfig& chain, double lambda,
                                         const PotentialFieldParams& field, long n_steps,
                                         std::uint64_t seed, PositionRewardForm form) {
  field.validate();
  if (n_steps < 1000) throw std::invalid_argument("equivalence_experiment: too few steps");

  const double stationary_std =
      chain.pull > 0 ? chain.noise / std::sqrt(2.0 * chain.pull) : chain.noise;
  const int y_tar = static_cast<int>(std::lround(field.y_tar));

  auto initial = [&](std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    DriftChainState s;
    const double center = chain.orthogonal_drift ? field.l - 3.0 * field.sigma : field.l;
    s.x = center + stationary_std * gauss(rng);
    s.lane = chain.orthogonal_drift ? std::min(y_tar + 1, chain.n_lanes) : y_tar;
    return s;
  };

  // Calibration run: oracle mean of the base reward and the scales for lambda.
  std::mt19937_64 cal_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  DriftChainState cal = initial(cal_rng);
  const long n_cal = std::max<long>(n_steps / 5, 20000);
  double sum_r = 0.0, sum_r2 = 0.0, sum_p = 0.0, sum_p2 = 0.0;
  for (long t = 0; t < n_cal; ++t) {
    const DriftChainState pre = cal;
    const StepOutcome step = advance(cal, chain, field, cal_rng);
    const double rp = position_reward_discrete(step.vx, step.vy, pre.x,
                                               static_cast<double>(pre.lane), field, form);
    const double r = base_reward(cal, chain, field, cal_rng);
    sum_r += r;
    sum_r2 += r * r;
    sum_p += rp;
    sum_p2 += rp * rp;
  }
  const double oracle_mean = sum_r / static_cast<double>(n_cal);
  const double std_r = std::sqrt(std::max(sum_r2 / n_cal - oracle_mean * oracle_mean, 1e-300));
  const double mean_p = sum_p / static_cast<double>(n_cal);
  const double std_p = std::sqrt(std::max(sum_p2 / n_cal - mean_p * mean_p, 1e-300));

  EquivalenceReport rep;
  rep.lambda = std::isnan(lambda) ? std_r / std_p : lambda;
  rep.steps = n_steps;

  CenteringState centering;
  centering.mode = CenteringState::Mode::oracle;
  centering.mean_estimate = oracle_mean;

  // Measurement run.
  std::mt19937_64 rng(seed);
  DriftChainState s = initial(rng);
  const long n_batches = 100;
  const long batch = n_steps / n_batches;
  std::vector<double> batch_diff(static_cast<size_t>(n_batches), 0.0);
  double total_centered = 0.0, total_shaped = 0.0;
  double dot_drift_grad = 0.0, norm_drift = 0.0, norm_grad = 0.0;

  for (long t = 0; t < n_batches * batch; ++t) {
    const DriftChainState pre = s;
    const StepOutcome step = advance(s, chain, field, rng);
    if (std::abs(s.x - field.l) > chain.divergence_bound * field.sigma)
      throw std::runtime_error("equivalence_experiment: chain diverged at step " +
                               std::to_string(t));
    const double rp = position_reward_discrete(step.vx, step.vy, pre.x,
                                               static_cast<double>(pre.lane), field, form);
    const double r = base_reward(s, chain, field, rng);
    const auto [centered, unused] = center_reward(r, centering);
    (void)unused;

    total_centered += centered;
    total_shaped += centered + rep.lambda * rp;
    batch_diff[static_cast<size_t>(t / batch)] += rep.lambda * rp;

    const FieldGradient g = potential_gradient(pre.x, static_cast<double>(pre.lane), field);
    const double gy = g.dy_defined ? g.dy : 0.0;
    dot_drift_grad += step.drift_x * g.dx + step.drift_y * gy;
    norm_drift += step.drift_x * step.drift_x + step.drift_y * step.drift_y;
    norm_grad += g.dx * g.dx + gy * gy;
  }

  const double n_total = static_cast<double>(n_batches * batch);
  rep.mean_centered = total_centered / n_total;
  rep.mean_centered_shaped = total_shaped / n_total;
  rep.difference = rep.mean_centered_shaped - rep.mean_centered;

  double mean_b = 0.0;
  for (double& d : batch_diff) {
    d /= static_cast<double>(batch);
    mean_b += d;
  }
  mean_b /= static_cast<double>(n_batches);
  double var_b = 0.0;
  for (double d : batch_diff) var_b += (d - mean_b) * (d - mean_b);
  var_b /= static_cast<double>(n_batches - 1);
  rep.std_error = std::sqrt(var_b / static_cast<double>(n_batches));

  rep.drift_gradient_alignment =
      (norm_drift > 0 && norm_grad > 0)
          ? dot_drift_grad / (std::sqrt(norm_drift) * std::sqrt(norm_grad))
          : 0.0;
  rep.condition1_held = rep.drift_gradient_alignment > 0.5;
  rep.within_3se = std::abs(rep.difference) <= 3.0 * rep.std_error;
  return rep;
}

}  // namespace lanesim::lab
