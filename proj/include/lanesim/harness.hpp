#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lanesim/episode.hpp"
#include "lanesim/learners.hpp"
#include "lanesim/metrics.hpp"

namespace lanesim::harness {

struct LearnerConfig {
  enum class Kind { iql, vdn };
  Kind kind = Kind::iql;
  double alpha = 3e-4;  // conservative default, slow for tables; see fast_profile()
  double gamma = 0.98;
  std::size_t buffer_capacity = 100000;
  int target_period = 100;
  double epsilon_start = 1.0;
  double epsilon_decay = 0.99;  // per-episode factor
  double epsilon_min = 0.01;
  int replay_samples = 2;

  /// Tabular-friendly profile: alpha = 0.1, everything else unchanged.
  static LearnerConfig fast_profile();
};

struct ExperimentConfig {
  RoadConfig road;
  RewardConfig reward;
  LearnerConfig learner;
  learn::DiscretizerSpec discretizer;

  int n_episodes = 2000;
  int eval_episodes = 20;
  int smooth_window = 100;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<double> penetrations{0.25, 0.50, 0.75, 1.00};
  std::vector<RewardVariant> variants{RewardVariant::gr, RewardVariant::cr, RewardVariant::dr};
  std::string output_dir = "out";
  int workers = 1;
  bool plots = false;

  void validate() const;
};

/// Strict, versioned parsing: unknown keys anywhere are rejected, missing
/// keys fall back to defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

std::string variant_name(RewardVariant v);
RewardVariant variant_from_name(const std::string& name);

struct EpisodeRow {
  int episode = 0;
  double ret = 0.0;
  double smoothed = 0.0;
  double epsilon = 0.0;
  std::size_t table_size = 0;
};

struct TrainResult {
  std::vector<EpisodeRow> rows;
  metrics::MetricsRecord final_metrics;
  learn::TabularQ q;
  bool failed = false;
  std::string error;
};

/// Trains one sweep cell (variant x penetration x seed) and evaluates the
/// greedy policy on fresh episodes.
TrainResult train_cell(const ExperimentConfig& cfg, RewardVariant variant, double penetration,
                       std::uint64_t seed);

/// Greedy rollout policy over a trained table.
PolicyHooks greedy_policy(const learn::TabularQ& q, const learn::DiscretizerSpec& disc);
/// Uniform-random actions (independent of the world RNG).
PolicyHooks random_policy(std::uint64_t seed);
/// Always (keep, hold).
PolicyHooks idle_policy();

std::vector<double> smooth_trailing(const std::vector<double>& xs, int window);
/// Mean of the smoothed curve over its last `tail_frac` fraction.
double plateau_level(const std::vector<double>& smoothed, double tail_frac = 0.1);
/// First episode whose smoothed return reaches 80% of the plateau (20%
/// below it when the plateau is negative); episodes count when never reached.
int episodes_to_plateau_fraction(const std::vector<double>& smoothed, double frac = 0.8);

struct SweepCell {
  RewardVariant variant = RewardVariant::gr;
  double penetration = 0.0;
  std::uint64_t seed = 0;
  TrainResult result;
};

struct SweepOutput {
  std::vector<SweepCell> cells;
  std::string summary_csv_path;
};

/// Runs the full grid, in parallel up to cfg.workers, writing one training
/// curve CSV per cell plus per-seed and aggregated summary CSVs (and
/// optional SVG return plots) under cfg.output_dir. Failed cells are
/// recorded with their reason; the sweep continues.
SweepOutput run_sweep(const ExperimentConfig& cfg);

void write_curve_csv(const std::string& path, const std::vector<EpisodeRow>& rows);

/// Minimal SVG line plot; x may be log-scaled (episode axes).
struct PlotSeries {
  std::string label;
  std::vector<double> ys;  // x is 1..n
};
void write_svg_plot(const std::string& path, const std::string& title,
                    const std::vector<PlotSeries>& series, bool log_x);

}  // namespace lanesim::harness
