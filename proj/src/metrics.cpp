#include "lanesim/metrics.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace lanesim::metrics {

double avg_speed(const EpisodeTrace& trace) {
  double sum_of_means = 0.0;
  long counted = 0;
  for (const auto& rec : trace.ticks) {
    if (rec.vehicles.empty()) continue;
    double s = 0.0;
    for (const auto& v : rec.vehicles) s += v.v;
    sum_of_means += s / static_cast<double>(rec.vehicles.size());
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("avg_speed: trace has no occupied tick");
  return sum_of_means / static_cast<double>(counted);
}

double episode_min_gap(const EpisodeTrace& trace) {
  double best = trace.cfg.d_max;
  for (const auto& rec : trace.ticks) {
    // Adjacent same-lane pairs; vehicles per tick are few, sort per lane.
    std::map<int, std::vector<const VehicleSnap*>> lanes;
    for (const auto& v : rec.vehicles) lanes[v.lane].push_back(&v);
    for (auto& [lane, vs] : lanes) {
      std::sort(vs.begin(), vs.end(),
                [](const VehicleSnap* a, const VehicleSnap* b) { return a->p_lon < b->p_lon; });
      for (size_t i = 0; i + 1 < vs.size(); ++i) {
        const double gap = vs[i + 1]->p_lon - vs[i]->p_lon - trace.cfg.vehicle_length;
        best = std::min(best, std::max(gap, 0.0));
      }
    }
  }
  return best;
}

double min_gap(const std::vector<EpisodeTrace>& traces) {
  if (traces.empty()) throw std::invalid_argument("min_gap: need at least one episode");
  double sum = 0.0;
  for (const auto& t : traces) sum += episode_min_gap(t);
  return sum / static_cast<double>(traces.size());
}

double lc_frequency(const EpisodeTrace& trace) {
  long lane_changes = 0;
  long cav_steps = 0;
  for (const auto& rec : trace.ticks) {
    for (const auto& lc : rec.events.lane_changes)
      if (lc.is_cav) ++lane_changes;
    for (const auto& v : rec.vehicles)
      if (v.kind == VehicleKind::cav) ++cav_steps;
  }
  if (cav_steps == 0) return 0.0;
  return static_cast<double>(lane_changes) / static_cast<double>(cav_steps);
}

double success_rate(const EpisodeTrace& trace) {
  // Recomputed from tick records alone: spawn events identify CAVs through
  // the same tick's vehicle snapshots, exits carry the goal outcome.
  long spawned_cavs = 0;
  long succeeded = 0;
  for (const auto& rec : trace.ticks) {
    for (int id : rec.events.spawned_ids)
      for (const auto& v : rec.vehicles)
        if (v.id == id && v.kind == VehicleKind::cav) {
          ++spawned_cavs;
          break;
        }
    for (const auto& e : rec.events.exits)
      if (e.kind == VehicleKind::cav && e.reached_goal) ++succeeded;
  }
  if (spawned_cavs == 0) return 0.0;
  return static_cast<double>(succeeded) / static_cast<double>(spawned_cavs);
}

MetricsRecord compute_metrics(const std::vector<EpisodeTrace>& traces) {
  if (traces.empty()) throw std::invalid_argument("compute_metrics: no traces");
  MetricsRecord rec;
  double sum_speed = 0.0, sum_lc = 0.0, sum_ret = 0.0;
  long occupied_episodes = 0;
  long total_succeeded = 0, total_spawned = 0;
  for (const auto& t : traces) {
    // Episodes that never saw a vehicle carry no speed information; they
    // still contribute d_max to the gap metric below.
    const bool occupied = std::any_of(t.ticks.begin(), t.ticks.end(),
                                      [](const TickRecord& r) { return !r.vehicles.empty(); });
    if (occupied) {
      sum_speed += avg_speed(t);
      ++occupied_episodes;
    }
    sum_lc += lc_frequency(t);
    sum_ret += t.summary.return_sum;
    total_succeeded += t.summary.cavs_succeeded;
    total_spawned += t.summary.cavs_spawned;
  }
  const double n = static_cast<double>(traces.size());
  rec.avg_speed = occupied_episodes > 0 ? sum_speed / static_cast<double>(occupied_episodes) : 0.0;
  rec.min_gap = min_gap(traces);
  rec.lc_freq = sum_lc / n;
  rec.lc_per_min = rec.lc_freq * 60.0 / traces.front().cfg.dt;
  rec.succ_rate = total_spawned == 0
                      ? 0.0
                      : static_cast<double>(total_succeeded) / static_cast<double>(total_spawned);
  rec.episode_return = sum_ret / n;
  return rec;
}

}  // namespace lanesim::metrics
