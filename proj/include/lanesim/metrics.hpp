#pragma once

#include <vector>

#include "lanesim/episode.hpp"

namespace lanesim::metrics {

/// Per-episode metric record; the four trace metrics plus training context.
struct MetricsRecord {
  double avg_speed = 0.0;
  double min_gap = 0.0;
  double lc_freq = 0.0;      // lane changes per CAV-step
  double lc_per_min = 0.0;   // lc_freq * 60 / dt
  double succ_rate = 0.0;    // fraction
  double episode_return = 0.0;
  int episode = 0;
  std::uint64_t seed = 0;
};

/// Mean over ticks of the per-tick mean speed of on-road vehicles; ticks with
/// an empty road are excluded from both sums.
double avg_speed(const EpisodeTrace& trace);

/// Minimum same-lane bumper gap over one episode (adjacent pairs per tick),
/// floored at zero; d_max when no same-lane pair ever exists.
double episode_min_gap(const EpisodeTrace& trace);

/// Mean of the per-episode minima.
double min_gap(const std::vector<EpisodeTrace>& traces);

/// Executed CAV lane changes per CAV-step; zero CAV-steps give 0.
double lc_frequency(const EpisodeTrace& trace);

/// CAVs that exited in a goal-satisfying lane over CAVs spawned.
double success_rate(const EpisodeTrace& trace);

MetricsRecord compute_metrics(const std::vector<EpisodeTrace>& traces);

}  // namespace lanesim::metrics
