#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "lanesim/percept.hpp"

namespace lanesim::learn {

/// Observation-to-key binning. Speed is linear over [0, v_max]; gap
/// distances are log-spaced over [gap_lo, d_max]; lane and goal are exact;
/// the nearest neighbor's relative speed falls in one of rel_speed_bins
/// buckets split at +-rel_speed_edge.
struct DiscretizerSpec {
  int speed_bins = 5;
  int gap_bins = 4;
  int rel_speed_bins = 3;
  double gap_lo = 2.0;
  double rel_speed_edge = 2.0;

  std::uint64_t key_space(const RoadConfig& cfg) const;
  std::uint64_t state_key(const Observation& obs, const RoadConfig& cfg) const;
};

struct Transition {
  std::uint64_t s = 0;
  int a = 0;
  double r = 0.0;
  std::uint64_t s2 = 0;
  bool terminal = false;
};

/// Bounded FIFO; evicts strictly oldest-first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000) : capacity_(capacity) {}
  void push(const Transition& t);
  const Transition& sample(std::mt19937_64& rng) const;
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return items_[i]; }

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

/// Tabular action-value function with a periodically refreshed target copy.
/// Unseen entries read as zero. Rows are kNumActions wide; `n_actions`
/// bounds the live action set for argmax and exploration.
struct TabularQ {
  double alpha = 3e-4;
  double gamma = 0.98;
  double epsilon = 1.0;
  double epsilon_decay = 0.99;
  double epsilon_min = 0.01;
  int target_period = 100;
  int n_actions = kNumActions;

  std::unordered_map<std::uint64_t, std::array<double, kNumActions>> table;
  std::unordered_map<std::uint64_t, std::array<double, kNumActions>> target;
  long updates = 0;
  ReplayBuffer buffer{100000};

  double q(std::uint64_t s, int a) const;
  double max_q(std::uint64_t s) const;
  double max_target(std::uint64_t s) const;
  int greedy_action(std::uint64_t s) const;  // lowest-index tie-break
  void decay_epsilon() { epsilon = std::max(epsilon * epsilon_decay, epsilon_min); }
};

/// Q(s,a) += alpha (r + gamma max_a' Q_target(s',a') - Q(s,a)); the target
/// table refreshes every target_period updates. Terminal transitions do not
/// bootstrap.
void iql_update(TabularQ& q, const Transition& t);

/// Epsilon-greedy: uniform over the action set with probability epsilon,
/// greedy otherwise.
int select_action(const TabularQ& q, std::uint64_t s, std::mt19937_64& rng);

/// Additive joint value of cooperating agents.
double vdn_target(const std::vector<double>& per_agent_q);

/// One cooperative update on a shared table: the joint TD error
/// r + gamma sum_i max Q_target(s2_i) - sum_i Q(s_i, a_i) is applied to every
/// participating (s_i, a_i) entry.
void vdn_update(TabularQ& q, const std::vector<Transition>& joint);

/// Serialize / load a trained table as a flat text file: a header line, then
/// one line per state: "<key> <q_0> ... <q_8>", keys ascending.
void save_table(const TabularQ& q, const std::string& path);
void load_table(TabularQ& q, const std::string& path);

// ---------------------------------------------------------------------------
// Linear value models and projections.

/// Continuously differentiable basis function on R^l with analytic gradient.
struct BasisFunction {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
  std::string name;
};

std::vector<BasisFunction> polynomial_basis_1d(int max_degree);  // 1, s, s^2, ...

struct LinearModel {
  std::vector<BasisFunction> basis;
  Eigen::VectorXd theta;
  double value(const Eigen::VectorXd& s) const;
  Eigen::VectorXd value_gradient(const Eigen::VectorXd& s) const;
};

struct ProjectionResult {
  Eigen::VectorXd theta;
  double weighted_residual = 0.0;  // sqrt of the minimized weighted squared norm
  std::vector<int> pinned;         // zero-gradient basis indices held at 0
};

/// Weighted least squares min_theta ||h_theta - h||^2_pi over the grid
/// (rows of `points`). Weights are normalized internally, so any positive
/// rescaling of the distribution gives the same solution. Throws on rank
/// deficiency, naming the dependent basis indices.
ProjectionResult td_projection(const std::vector<BasisFunction>& basis,
                               const Eigen::MatrixXd& points,
                               const Eigen::VectorXd& oracle_values,
                               const Eigen::VectorXd& weights);

/// Gradient-matching projection min_theta ||grad h_theta - grad h||^2_pi.
/// Basis functions with identically zero gradient over the grid cannot be
/// identified; they are pinned to zero. Throws when every basis function is
/// constant.
ProjectionResult gradient_td_projection(const std::vector<BasisFunction>& basis,
                                        const Eigen::MatrixXd& points,
                                        const Eigen::MatrixXd& oracle_gradients,
                                        const Eigen::VectorXd& weights);

// ---------------------------------------------------------------------------
// Steady-state chains (continuous-state, desk scale).

/// Nonlinear state-space chain s' = a(s, noise) with state reward R(s).
struct SteadyChain {
  std::function<double(double, std::mt19937_64&)> step;
  std::function<double(double)> reward;
};

struct ChainValueEstimate {
  Eigen::VectorXd values;
  Eigen::VectorXd std_errors;
};

/// Monte-Carlo estimate of the discounted value per start state; the horizon
/// should satisfy gamma^horizon < 1e-6.
ChainValueEstimate estimate_chain_values(const SteadyChain& chain, double gamma, int n_rollouts,
                                         int horizon, const Eigen::VectorXd& start_grid,
                                         std::uint64_t seed);

/// Central finite differences on a uniform 1-D grid (interior points);
/// endpoints use one-sided differences.
Eigen::VectorXd finite_difference_gradient_1d(const Eigen::VectorXd& grid,
                                              const Eigen::VectorXd& values);

}  // namespace lanesim::learn
