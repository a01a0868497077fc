#include "lanesim/learners.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace lanesim::learn {

namespace {

int linear_bin(double x, double lo, double hi, int bins) {
  if (x <= lo) return 0;
  if (x >= hi) return bins - 1;
  return std::min(bins - 1, static_cast<int>((x - lo) / (hi - lo) * bins));
}

int log_bin(double x, double lo, double hi, int bins) {
  if (x <= lo) return 0;
  if (x >= hi) return bins - 1;
  const double t = (std::log(x) - std::log(lo)) / (std::log(hi) - std::log(lo));
  return std::min(bins - 1, static_cast<int>(t * bins));
}

}  // namespace

std::uint64_t DiscretizerSpec::key_space(const RoadConfig& cfg) const {
  return static_cast<std::uint64_t>(speed_bins) * gap_bins * gap_bins * gap_bins *
         static_cast<std::uint64_t>(cfg.n_lanes) * 3 * rel_speed_bins;
}

std::uint64_t DiscretizerSpec::state_key(const Observation& obs, const RoadConfig& cfg) const {
  const int sv = linear_bin(obs.self.v, 0.0, cfg.v_max, speed_bins);
  const int gf = log_bin(obs.self.d_front, gap_lo, cfg.d_max, gap_bins);
  const int gl = log_bin(obs.self.d_left, gap_lo, cfg.d_max, gap_bins);
  const int gr = log_bin(obs.self.d_right, gap_lo, cfg.d_max, gap_bins);
  const int lane = linear_bin(obs.self.p_lat, 0.0, cfg.n_lanes * cfg.lane_width, cfg.n_lanes);
  int goal = 0;
  for (int k = 0; k < 3; ++k)
    if (obs.self.g[static_cast<size_t>(k)] > 0.5) goal = k;
  int rel = rel_speed_bins / 2;  // middle bucket when no neighbor
  if (obs.n_real > 0) {
    const double dv = obs.neighbors[0].d_v;
    if (dv < -rel_speed_edge)
      rel = 0;
    else if (dv > rel_speed_edge)
      rel = rel_speed_bins - 1;
  }

  std::uint64_t key = static_cast<std::uint64_t>(sv);
  key = key * gap_bins + gf;
  key = key * gap_bins + gl;
  key = key * gap_bins + gr;
  key = key * static_cast<std::uint64_t>(cfg.n_lanes) + static_cast<std::uint64_t>(lane);
  key = key * 3 + static_cast<std::uint64_t>(goal);
  key = key * static_cast<std::uint64_t>(rel_speed_bins) + static_cast<std::uint64_t>(rel);
  return key;
}

void ReplayBuffer::push(const Transition& t) {
  if (capacity_ == 0) return;
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(t);
}

const Transition& ReplayBuffer::sample(std::mt19937_64& rng) const {
  if (items_.empty()) throw std::out_of_range("ReplayBuffer::sample: empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  return items_[pick(rng)];
}

double TabularQ::q(std::uint64_t s, int a) const {
  const auto it = table.find(s);
  return it == table.end() ? 0.0 : it->second[static_cast<size_t>(a)];
}

double TabularQ::max_q(std::uint64_t s) const {
  const auto it = table.find(s);
  if (it == table.end()) return 0.0;
  double best = it->second[0];
  for (int a = 1; a < n_actions; ++a) best = std::max(best, it->second[static_cast<size_t>(a)]);
  return best;
}

double TabularQ::max_target(std::uint64_t s) const {
  const auto it = target.find(s);
  if (it == target.end()) return 0.0;
  double best = it->second[0];
  for (int a = 1; a < n_actions; ++a) best = std::max(best, it->second[static_cast<size_t>(a)]);
  return best;
}

int TabularQ::greedy_action(std::uint64_t s) const {
  const auto it = table.find(s);
  if (it == table.end()) return 0;
  int best = 0;
  for (int a = 1; a < n_actions; ++a)
    if (it->second[static_cast<size_t>(a)] > it->second[static_cast<size_t>(best)]) best = a;
  return best;
}

void iql_update(TabularQ& q, const Transition& t) {
  const double bootstrap = t.terminal ? 0.0 : q.gamma * q.max_target(t.s2);
  auto& row = q.table[t.s];  // value-initialized to zeros on first touch
  const double td = t.r + bootstrap - row[static_cast<size_t>(t.a)];
  row[static_cast<size_t>(t.a)] += q.alpha * td;
  ++q.updates;
  if (q.updates % q.target_period == 0) q.target = q.table;
}

int select_action(const TabularQ& q, std::uint64_t s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (u01(rng) < q.epsilon) {
    std::uniform_int_distribution<int> pick(0, q.n_actions - 1);
    return pick(rng);
  }
  return q.greedy_action(s);
}

double vdn_target(const std::vector<double>& per_agent_q) {
  if (per_agent_q.empty()) throw std::invalid_argument("vdn_target: need at least one agent");
  double s = 0.0;
  for (double v : per_agent_q) s += v;
  return s;
}

void vdn_update(TabularQ& q, const std::vector<Transition>& joint) {
  if (joint.empty()) return;
  double value = 0.0, next = 0.0;
  for (const auto& t : joint) {
    value += q.q(t.s, t.a);
    if (!t.terminal) next += q.max_target(t.s2);
  }
  // All transitions of a joint step share the team reward.
  const double td = joint.front().r + q.gamma * next - value;
  for (const auto& t : joint) q.table[t.s][static_cast<size_t>(t.a)] += q.alpha * td;
  ++q.updates;
  if (q.updates % q.target_period == 0) q.target = q.table;
}

void save_table(const TabularQ& q, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_table: cannot open " + path);
  out << "lanesim-qtable-v1 gamma=" << q.gamma << " n_actions=" << q.n_actions << "\n";
  std::vector<std::uint64_t> keys;
  keys.reserve(q.table.size());
  for (const auto& [k, row] : q.table) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  out.precision(17);
  for (std::uint64_t k : keys) {
    out << k;
    const auto& row = q.table.at(k);
    for (int a = 0; a < kNumActions; ++a) out << " " << row[static_cast<size_t>(a)];
    out << "\n";
  }
}

void load_table(TabularQ& q, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_table: cannot open " + path);
  std::string header;
  std::getline(in, header);
  if (header.rfind("lanesim-qtable-v1", 0) != 0)
    throw std::runtime_error("load_table: unrecognized header in " + path);
  q.table.clear();
  std::uint64_t key;
  while (in >> key) {
    std::array<double, kNumActions> row{};
    for (int a = 0; a < kNumActions; ++a) in >> row[static_cast<size_t>(a)];
    q.table[key] = row;
  }
  q.target = q.table;
}

// ---------------------------------------------------------------------------

std::vector<BasisFunction> polynomial_basis_1d(int max_degree) {
  std::vector<BasisFunction> out;
  for (int d = 0; d <= max_degree; ++d) {
    BasisFunction f;
    f.name = "s^" + std::to_string(d);
    f.value = [d](const Eigen::VectorXd& s) { return std::pow(s(0), d); };
    f.gradient = [d](const Eigen::VectorXd& s) {
      Eigen::VectorXd g(1);
      g(0) = d == 0 ? 0.0 : d * std::pow(s(0), d - 1);
      return g;
    };
    out.push_back(std::move(f));
  }
  return out;
}

double LinearModel::value(const Eigen::VectorXd& s) const {
  double acc = 0.0;
  for (size_t j = 0; j < basis.size(); ++j) acc += theta(static_cast<int>(j)) * basis[j].value(s);
  return acc;
}

Eigen::VectorXd LinearModel::value_gradient(const Eigen::VectorXd& s) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(s.size());
  for (size_t j = 0; j < basis.size(); ++j) g += theta(static_cast<int>(j)) * basis[j].gradient(s);
  return g;
}

namespace {

Eigen::VectorXd normalized_weights(const Eigen::VectorXd& weights) {
  if ((weights.array() < 0).any())
    throw std::invalid_argument("projection: weights must be nonnegative");
  const double total = weights.sum();
  if (total <= 0) throw std::invalid_argument("projection: weights sum to zero");
  return weights / total;
}

ProjectionResult solve_weighted(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                const Eigen::VectorXd& row_weights,
                                const std::vector<int>& column_map, int full_dim,
                                const std::vector<BasisFunction>& basis) {
  const Eigen::VectorXd sqrt_w = row_weights.cwiseSqrt();
  const Eigen::MatrixXd Aw = sqrt_w.asDiagonal() * A;
  const Eigen::VectorXd bw = sqrt_w.asDiagonal() * b;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Aw);
  qr.setThreshold(1e-10);
  if (qr.rank() < Aw.cols()) {
    const auto perm = qr.colsPermutation().indices();
    std::string msg = "projection: rank-deficient basis, dependent columns:";
    for (int i = qr.rank(); i < Aw.cols(); ++i) {
      const int col = column_map[static_cast<size_t>(perm(i))];
      msg += " " + std::to_string(col);
      if (!basis[static_cast<size_t>(col)].name.empty())
        msg += " (" + basis[static_cast<size_t>(col)].name + ")";
    }
    throw std::invalid_argument(msg);
  }

  ProjectionResult res;
  const Eigen::VectorXd theta_active = qr.solve(bw);
  res.theta = Eigen::VectorXd::Zero(full_dim);
  for (int j = 0; j < theta_active.size(); ++j)
    res.theta(column_map[static_cast<size_t>(j)]) = theta_active(j);
  res.weighted_residual = (Aw * theta_active - bw).norm();
  return res;
}

}  // namespace

ProjectionResult td_projection(const std::vector<BasisFunction>& basis,
                               const Eigen::MatrixXd& points,
                               const Eigen::VectorXd& oracle_values,
                               const Eigen::VectorXd& weights) {
  if (basis.empty()) throw std::invalid_argument("td_projection: empty basis");
  if (points.rows() != oracle_values.size() || points.rows() != weights.size())
    throw std::invalid_argument("td_projection: size mismatch");
  const Eigen::VectorXd w = normalized_weights(weights);

  const int n = static_cast<int>(points.rows());
  const int d = static_cast<int>(basis.size());
  Eigen::MatrixXd A(n, d);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd s = points.row(i).transpose();
    for (int j = 0; j < d; ++j) A(i, j) = basis[static_cast<size_t>(j)].value(s);
  }
  std::vector<int> column_map(static_cast<size_t>(d));
  for (int j = 0; j < d; ++j) column_map[static_cast<size_t>(j)] = j;
  return solve_weighted(A, oracle_values, w, column_map, d, basis);
}

ProjectionResult gradient_td_projection(const std::vector<BasisFunction>& basis,
                                        const Eigen::MatrixXd& points,
                                        const Eigen::MatrixXd& oracle_gradients,
                                        const Eigen::VectorXd& weights) {
  if (basis.empty()) throw std::invalid_argument("gradient_td_projection: empty basis");
  if (points.rows() != oracle_gradients.rows() || points.rows() != weights.size())
    throw std::invalid_argument("gradient_td_projection: size mismatch");
  const Eigen::VectorXd w = normalized_weights(weights);

  const int n = static_cast<int>(points.rows());
  const int dim = static_cast<int>(points.cols());
  const int d = static_cast<int>(basis.size());

  // Gradient columns; identically-zero ones (constants) are pinned to zero.
  std::vector<Eigen::MatrixXd> grad_cols(static_cast<size_t>(d), Eigen::MatrixXd(n, dim));
  std::vector<int> active;
  ProjectionResult res;
  for (int j = 0; j < d; ++j) {
    double norm = 0.0;
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd g = basis[static_cast<size_t>(j)].gradient(points.row(i).transpose());
      grad_cols[static_cast<size_t>(j)].row(i) = g.transpose();
      norm += g.squaredNorm();
    }
    if (norm > 1e-24)
      active.push_back(j);
    else
      res.pinned.push_back(j);
  }
  if (active.empty())
    throw std::invalid_argument(
        "gradient_td_projection: all basis functions are constant; the gradient objective "
        "cannot identify theta");

  // Stack the gradient components; each point's rows inherit its weight.
  Eigen::MatrixXd A(n * dim, static_cast<int>(active.size()));
  Eigen::VectorXd b(n * dim);
  Eigen::VectorXd rw(n * dim);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < dim; ++k) {
      const int row = i * dim + k;
      b(row) = oracle_gradients(i, k);
      rw(row) = w(i);
      for (size_t jj = 0; jj < active.size(); ++jj)
        A(row, static_cast<int>(jj)) = grad_cols[static_cast<size_t>(active[jj])](i, k);
    }

  auto solved = solve_weighted(A, b, rw, active, d, basis);
  solved.pinned = res.pinned;
  return solved;
}

// ---------------------------------------------------------------------------

ChainValueEstimate estimate_chain_values(const SteadyChain& chain, double gamma, int n_rollouts,
                                         int horizon, const Eigen::VectorXd& start_grid,
                                         std::uint64_t seed) {
  if (gamma <= 0.0 || gamma >= 1.0)
    throw std::invalid_argument("estimate_chain_values: gamma must be in (0,1)");
  ChainValueEstimate est;
  est.values = Eigen::VectorXd::Zero(start_grid.size());
  est.std_errors = Eigen::VectorXd::Zero(start_grid.size());

  for (int i = 0; i < start_grid.size(); ++i) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(i) * 0x9e3779b97f4a7c15ULL);
    double sum = 0.0, sum2 = 0.0;
    for (int k = 0; k < n_rollouts; ++k) {
      double s = start_grid(i);
      double acc = 0.0, disc = 1.0;
      for (int t = 0; t < horizon; ++t) {
        acc += disc * chain.reward(s);
        disc *= gamma;
        s = chain.step(s, rng);
      }
      sum += acc;
      sum2 += acc * acc;
    }
    const double mean = sum / n_rollouts;
    est.values(i) = mean;
    const double var = std::max(sum2 / n_rollouts - mean * mean, 0.0);
    est.std_errors(i) = std::sqrt(var / n_rollouts);
  }
  return est;
}

Eigen::VectorXd finite_difference_gradient_1d(const Eigen::VectorXd& grid,
                                              const Eigen::VectorXd& values) {
  if (grid.size() != values.size() || grid.size() < 3)
    throw std::invalid_argument("finite_difference_gradient_1d: need >= 3 grid points");
  const int n = static_cast<int>(grid.size());
  Eigen::VectorXd g(n);
  for (int i = 1; i + 1 < n; ++i)
    g(i) = (values(i + 1) - values(i - 1)) / (grid(i + 1) - grid(i - 1));
  g(0) = (values(1) - values(0)) / (grid(1) - grid(0));
  g(n - 1) = (values(n - 1) - values(n - 2)) / (grid(n - 1) - grid(n - 2));
  return g;
}

}  // namespace lanesim::learn
