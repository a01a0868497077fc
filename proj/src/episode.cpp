#include "lanesim/episode.hpp"

#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "lanesim/world.hpp"

namespace lanesim {

using ordered_json = nlohmann::ordered_json;

void RewardConfig::validate() const {
  general.validate();
  diff.validate();
  if (field_sigma <= 0 || field_zeta <= 0)
    throw std::invalid_argument("RewardConfig: field decay coefficients must be > 0");
}

RewardEngine::RewardEngine(RewardConfig cfg) : cfg_(std::move(cfg)), centering_(cfg_.centering) {
  cfg_.validate();
}

RewardBreakdown RewardEngine::tick_reward(const WorldState& state,
                                          const std::map<int, JointAction>& actions,
                                          const TickEvents& events, const RoadConfig& cfg) {
  switch (cfg_.variant) {
    case RewardVariant::gr: {
      RewardBreakdown b;
      b.r_flow = flow_reward(state, cfg.v_max);
      b.r_safe = static_cast<double>(safety_term(events));
      b.total = general_reward(state, events, cfg_.general);
      return b;
    }
    case RewardVariant::cr: {
      RewardBreakdown b;
      b.r_flow = flow_reward(state, cfg.v_max);
      b.r_safe = static_cast<double>(safety_term(events));
      const double raw = general_reward(state, events, cfg_.general);
      auto [centered, next] = center_reward(raw, centering_);
      centering_ = next;
      b.total = centered;
      return b;
    }
    case RewardVariant::dr: {
      std::map<int, PotentialFieldParams> fields;
      for (const auto& veh : state.vehicles)
        if (veh.is_cav() && actions.count(veh.id))
          fields[veh.id] = field_for(veh, cfg, cfg_.field_sigma, cfg_.field_zeta);
      return env_reward(state, actions, events, cfg_.diff, fields, cfg, cfg_.form);
    }
  }
  return {};
}

EpisodeTrace run_episode(const RoadConfig& cfg, const PolicyHooks& policy, std::uint64_t seed,
                         RewardEngine* engine, const EpisodeOptions& opts) {
  cfg.validate();
  EpisodeTrace trace;
  trace.cfg = cfg;
  trace.seed = seed;

  WorldState state = make_world(cfg, seed);
  const int n_ticks = cfg.n_ticks();

  for (int t = 0; t < n_ticks; ++t) {
    prune_dead(state);

    TickEvents events;
    spawn_arrivals(state, cfg, &events);

    std::map<int, JointAction> actions;
    try {
      for (const auto& veh : state.vehicles)
        if (veh.alive && veh.is_cav()) actions[veh.id] = policy.act(state, veh, cfg);
    } catch (const std::exception& e) {
      trace.summary.valid = false;
      trace.summary.error = e.what();
      break;
    }

    // Pre-lateral lanes, for intention-satisfaction bookkeeping.
    std::map<int, int> lane_pre;
    for (const auto& veh : state.vehicles)
      if (veh.alive) lane_pre[veh.id] = veh.lane;

    apply_cav_lateral(state, actions, cfg, events);
    step_hdv_lateral(state, cfg, events);
    apply_longitudinal(state, actions, cfg);

    // First-time intention satisfaction only: re-entering the goal lane
    // after leaving it is not "newly" satisfied.
    for (auto& veh : state.vehicles) {
      if (!veh.alive || !veh.is_cav()) continue;
      if (!lane_satisfies_goal(veh.goal, veh.lane, cfg.n_lanes)) continue;
      const auto pre = lane_pre.find(veh.id);
      const bool satisfied_pre =
          pre != lane_pre.end() && lane_satisfies_goal(veh.goal, pre->second, cfg.n_lanes);
      if (!veh.ever_satisfied && !satisfied_pre) ++events.newly_satisfied;
      veh.ever_satisfied = true;
    }

    process_exits(state, cfg, events);
    detect_collisions(state, cfg, &events);

    RewardBreakdown reward;
    if (engine != nullptr) reward = engine->tick_reward(state, actions, events, cfg);
    trace.summary.return_sum += reward.total;

    if (policy.on_transition) {
      TickContext ctx{state, actions, events, reward, cfg, t};
      policy.on_transition(ctx);
    }

    if (opts.record_ticks) {
      TickRecord rec;
      rec.tick = t;
      rec.vehicles.reserve(state.vehicles.size());
      for (const auto& veh : state.vehicles)
        rec.vehicles.push_back(
            {veh.id, veh.kind, veh.lane, veh.p_lon, veh.v, veh.goal.kind});
      rec.actions = actions;
      rec.events = events;
      rec.reward = reward;
      trace.ticks.push_back(std::move(rec));
    }

    ++state.tick;
  }

  trace.summary.cavs_spawned = state.spawned_cavs;
  trace.summary.cavs_exited = state.exited_cavs;
  trace.summary.cavs_succeeded = state.succeeded_cavs;
  trace.summary.vehicles_spawned = state.spawned_total;
  trace.summary.arrival_events = state.arrival_events;
  trace.summary.collisions = state.collision_count;
  return trace;
}

namespace {

ordered_json config_json(const RoadConfig& c) {
  return ordered_json{{"road_length", c.road_length},
                      {"n_lanes", c.n_lanes},
                      {"v_max", c.v_max},
                      {"arrival_rate", c.arrival_rate},
                      {"episode_duration", c.episode_duration},
                      {"dt", c.dt},
                      {"penetration", c.penetration},
                      {"vehicle_length", c.vehicle_length}};
}

}  // namespace

void write_trace_jsonl(const EpisodeTrace& trace, std::ostream& os) {
  ordered_json header{{"schema", "lanesim-trace-v1"},
                      {"seed", trace.seed},
                      {"config", config_json(trace.cfg)}};
  os << header.dump() << "\n";

  for (const auto& rec : trace.ticks) {
    ordered_json row;
    row["t"] = rec.tick;
    auto veh = ordered_json::array();
    for (const auto& v : rec.vehicles)
      veh.push_back({v.id, static_cast<int>(v.kind), v.lane, v.p_lon, v.v,
                     static_cast<int>(v.goal)});
    row["veh"] = veh;
    auto act = ordered_json::array();
    for (const auto& [id, a] : rec.actions)
      act.push_back({id, static_cast<int>(a.lon), static_cast<int>(a.lat)});
    row["act"] = act;
    auto col = ordered_json::array();
    for (const auto& c : rec.events.collisions) col.push_back({c.lead_id, c.follow_id, c.lane});
    row["col"] = col;
    auto lc = ordered_json::array();
    for (const auto& c : rec.events.lane_changes)
      lc.push_back({c.id, c.from, c.to, c.is_cav ? 1 : 0});
    row["lc"] = lc;
    auto ex = ordered_json::array();
    for (const auto& e : rec.events.exits)
      ex.push_back({e.id, e.lane, e.reached_goal ? 1 : 0, static_cast<int>(e.kind)});
    row["exit"] = ex;
    row["spawn"] = rec.events.spawned_ids;
    row["nsat"] = rec.events.newly_satisfied;
    row["nflc"] = rec.events.frequent_lc;
    row["r"] = {rec.reward.total, rec.reward.r_a_mean, rec.reward.r_p_mean, rec.reward.r_flow,
                rec.reward.r_safe};
    os << row.dump() << "\n";
  }

  ordered_json summary{{"summary",
                        ordered_json{{"cavs_spawned", trace.summary.cavs_spawned},
                                     {"cavs_exited", trace.summary.cavs_exited},
                                     {"cavs_succeeded", trace.summary.cavs_succeeded},
                                     {"vehicles_spawned", trace.summary.vehicles_spawned},
                                     {"arrival_events", trace.summary.arrival_events},
                                     {"collisions", trace.summary.collisions},
                                     {"return", trace.summary.return_sum},
                                     {"valid", trace.summary.valid},
                                     {"error", trace.summary.error}}}};
  os << summary.dump() << "\n";
}

std::string trace_to_jsonl(const EpisodeTrace& trace) {
  std::ostringstream ss;
  write_trace_jsonl(trace, ss);
  return ss.str();
}

}  // namespace lanesim
