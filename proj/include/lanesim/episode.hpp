#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <string>

#include "lanesim/rewards.hpp"
#include "lanesim/types.hpp"

namespace lanesim {

/// Reward-variant selection plus everything needed to evaluate it per tick.
struct RewardConfig {
  RewardVariant variant = RewardVariant::dr;
  GeneralRewardWeights general;
  DiffRewardWeights diff;
  CenteringState centering;  // used by the CR variant
  PositionRewardForm form = PositionRewardForm::unnormalized;
  double field_sigma = 50.0;
  double field_zeta = 1.0;
  void validate() const;
};

/// Evaluates the configured reward variant each tick. Owns the centering
/// state so the running mean persists across episodes of a training run.
class RewardEngine {
 public:
  explicit RewardEngine(RewardConfig cfg);

  RewardBreakdown tick_reward(const WorldState& state,
                              const std::map<int, JointAction>& actions,
                              const TickEvents& events, const RoadConfig& cfg);

  const RewardConfig& config() const { return cfg_; }
  const CenteringState& centering() const { return centering_; }
  void reset_centering() { centering_ = cfg_.centering; }

 private:
  RewardConfig cfg_;
  CenteringState centering_;
};

struct VehicleSnap {
  int id = 0;
  VehicleKind kind = VehicleKind::hdv;
  int lane = 0;
  double p_lon = 0.0;
  double v = 0.0;
  GoalKind goal = GoalKind::straight;
};

struct TickRecord {
  int tick = 0;
  std::vector<VehicleSnap> vehicles;
  std::map<int, JointAction> actions;
  TickEvents events;
  RewardBreakdown reward;
};

struct EpisodeSummary {
  long cavs_spawned = 0;
  long cavs_exited = 0;
  long cavs_succeeded = 0;
  long vehicles_spawned = 0;
  long arrival_events = 0;
  long collisions = 0;
  double return_sum = 0.0;
  bool valid = true;
  std::string error;
};

struct EpisodeTrace {
  RoadConfig cfg;
  std::uint64_t seed = 0;
  std::vector<TickRecord> ticks;
  EpisodeSummary summary;
};

/// Context handed to the learning hook after each tick's reward is known.
/// `state` is the post-step world (this tick's collided vehicles are still
/// present, marked not-alive).
struct TickContext {
  const WorldState& state;
  const std::map<int, JointAction>& actions;
  const TickEvents& events;
  const RewardBreakdown& reward;
  const RoadConfig& cfg;
  int tick;
};

struct PolicyHooks {
  std::function<JointAction(const WorldState&, const Vehicle&, const RoadConfig&)> act;
  std::function<void(const TickContext&)> on_transition;  // optional
};

struct EpisodeOptions {
  bool record_ticks = true;
};

/// Runs exactly episode_duration/dt ticks. Per-tick order: prune previous
/// collisions, arrivals, CAV decisions, CAV lateral, HDV lateral, joint
/// longitudinal, exits, collision detection, reward, hook. Identical
/// (seed, cfg, policy) gives a bit-identical trace. A throwing policy aborts
/// the episode with the partial trace flagged invalid.
EpisodeTrace run_episode(const RoadConfig& cfg, const PolicyHooks& policy, std::uint64_t seed,
                         RewardEngine* engine = nullptr, const EpisodeOptions& opts = {});

/// Line-delimited records: a header line, one line per tick, a summary line.
/// Field order is fixed; see README for the schema.
void write_trace_jsonl(const EpisodeTrace& trace, std::ostream& os);
std::string trace_to_jsonl(const EpisodeTrace& trace);

}  // namespace lanesim
