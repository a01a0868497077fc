#include "lanesim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace lanesim::harness {

namespace fs = std::filesystem;
using nlohmann::json;

LearnerConfig LearnerConfig::fast_profile() {
  LearnerConfig c;
  c.alpha = 0.1;
  return c;
}

void ExperimentConfig::validate() const {
  road.validate();
  reward.validate();
  if (seeds.empty()) throw std::invalid_argument("config: seeds must be non-empty");
  if (n_episodes < 1) throw std::invalid_argument("config: n_episodes must be >= 1");
  if (eval_episodes < 1) throw std::invalid_argument("config: eval_episodes must be >= 1");
  if (smooth_window < 1) throw std::invalid_argument("config: smooth_window must be >= 1");
  if (workers < 1) throw std::invalid_argument("config: workers must be >= 1");
  for (double p : penetrations)
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("config: penetration out of [0,1]");
}

std::string variant_name(RewardVariant v) {
  switch (v) {
    case RewardVariant::gr: return "gr";
    case RewardVariant::cr: return "cr";
    case RewardVariant::dr: return "dr";
  }
  return "?";
}

RewardVariant variant_from_name(const std::string& name) {
  if (name == "gr" || name == "GR") return RewardVariant::gr;
  if (name == "cr" || name == "CR") return RewardVariant::cr;
  if (name == "dr" || name == "DR") return RewardVariant::dr;
  throw std::invalid_argument("unknown reward variant: " + name);
}

namespace {

void expect_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_road(const json& j, RoadConfig& r) {
  expect_keys(j, "road",
              {"road_length", "n_lanes", "v_max", "arrival_rate", "episode_duration", "dt",
               "penetration", "lane_width", "vehicle_length", "entry_zone",
               "spawn_speed_min_frac", "perception_radius", "max_neighbors", "d_max", "a_acc",
               "a_dec", "cav_shared_perception"});
  read_if(j, "road_length", r.road_length);
  read_if(j, "n_lanes", r.n_lanes);
  read_if(j, "v_max", r.v_max);
  read_if(j, "arrival_rate", r.arrival_rate);
  read_if(j, "episode_duration", r.episode_duration);
  read_if(j, "dt", r.dt);
  read_if(j, "penetration", r.penetration);
  read_if(j, "lane_width", r.lane_width);
  read_if(j, "vehicle_length", r.vehicle_length);
  read_if(j, "entry_zone", r.entry_zone);
  read_if(j, "spawn_speed_min_frac", r.spawn_speed_min_frac);
  read_if(j, "perception_radius", r.perception_radius);
  read_if(j, "max_neighbors", r.max_neighbors);
  read_if(j, "d_max", r.d_max);
  read_if(j, "a_acc", r.a_acc);
  read_if(j, "a_dec", r.a_dec);
  read_if(j, "cav_shared_perception", r.cav_shared_perception);
}

void parse_reward(const json& j, RewardConfig& rc) {
  expect_keys(j, "reward", {"variant", "form", "field_sigma", "field_zeta", "general", "diff",
                            "centering"});
  if (j.contains("variant")) rc.variant = variant_from_name(j.at("variant").get<std::string>());
  if (j.contains("form")) {
    const auto f = j.at("form").get<std::string>();
    if (f == "unnormalized")
      rc.form = PositionRewardForm::unnormalized;
    else if (f == "analytic")
      rc.form = PositionRewardForm::analytic;
    else
      throw std::invalid_argument("config: unknown position reward form: " + f);
  }
  read_if(j, "field_sigma", rc.field_sigma);
  read_if(j, "field_zeta", rc.field_zeta);
  if (j.contains("general")) {
    const json& g = j.at("general");
    expect_keys(g, "reward.general", {"w1", "w2", "w3", "w4"});
    read_if(g, "w1", rc.general.w1);
    read_if(g, "w2", rc.general.w2);
    read_if(g, "w3", rc.general.w3);
    read_if(g, "w4", rc.general.w4);
  }
  if (j.contains("diff")) {
    const json& d = j.at("diff");
    expect_keys(d, "reward.diff",
                {"omega1", "omega2", "omega3", "omega4", "lambda", "high_speed_frac"});
    read_if(d, "omega1", rc.diff.omega1);
    read_if(d, "omega2", rc.diff.omega2);
    read_if(d, "omega3", rc.diff.omega3);
    read_if(d, "omega4", rc.diff.omega4);
    read_if(d, "lambda", rc.diff.lambda);
    read_if(d, "high_speed_frac", rc.diff.high_speed_frac);
  }
  if (j.contains("centering")) {
    const json& c = j.at("centering");
    expect_keys(c, "reward.centering", {"mode", "beta", "mean"});
    if (c.contains("mode")) {
      const auto m = c.at("mode").get<std::string>();
      if (m == "oracle")
        rc.centering.mode = CenteringState::Mode::oracle;
      else if (m == "running")
        rc.centering.mode = CenteringState::Mode::running;
      else
        throw std::invalid_argument("config: unknown centering mode: " + m);
    }
    read_if(c, "beta", rc.centering.beta);
    read_if(c, "mean", rc.centering.mean_estimate);
  }
}

void parse_learner(const json& j, LearnerConfig& lc) {
  expect_keys(j, "learner",
              {"kind", "profile", "alpha", "gamma", "buffer", "target_period", "epsilon_start",
               "epsilon_decay", "epsilon_min", "replay_samples"});
  if (j.contains("profile")) {
    const auto p = j.at("profile").get<std::string>();
    if (p == "fast")
      lc = LearnerConfig::fast_profile();
    else if (p != "table2")
      throw std::invalid_argument("config: unknown learner profile: " + p);
  }
  if (j.contains("kind")) {
    const auto k = j.at("kind").get<std::string>();
    if (k == "iql")
      lc.kind = LearnerConfig::Kind::iql;
    else if (k == "vdn")
      lc.kind = LearnerConfig::Kind::vdn;
    else
      throw std::invalid_argument("config: unknown learner kind: " + k);
  }
  read_if(j, "alpha", lc.alpha);
  read_if(j, "gamma", lc.gamma);
  read_if(j, "buffer", lc.buffer_capacity);
  read_if(j, "target_period", lc.target_period);
  read_if(j, "epsilon_start", lc.epsilon_start);
  read_if(j, "epsilon_decay", lc.epsilon_decay);
  read_if(j, "epsilon_min", lc.epsilon_min);
  read_if(j, "replay_samples", lc.replay_samples);
}

void parse_discretizer(const json& j, learn::DiscretizerSpec& d) {
  expect_keys(j, "discretizer",
              {"speed_bins", "gap_bins", "rel_speed_bins", "gap_lo", "rel_speed_edge"});
  read_if(j, "speed_bins", d.speed_bins);
  read_if(j, "gap_bins", d.gap_bins);
  read_if(j, "rel_speed_bins", d.rel_speed_bins);
  read_if(j, "gap_lo", d.gap_lo);
  read_if(j, "rel_speed_edge", d.rel_speed_edge);
}

void parse_run(const json& j, ExperimentConfig& c) {
  expect_keys(j, "run",
              {"n_episodes", "eval_episodes", "smooth_window", "seeds", "penetrations",
               "variants", "output_dir", "workers", "plots"});
  read_if(j, "n_episodes", c.n_episodes);
  read_if(j, "eval_episodes", c.eval_episodes);
  read_if(j, "smooth_window", c.smooth_window);
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("penetrations"))
    c.penetrations = j.at("penetrations").get<std::vector<double>>();
  if (j.contains("variants")) {
    c.variants.clear();
    for (const auto& v : j.at("variants")) c.variants.push_back(variant_from_name(v.get<std::string>()));
  }
  read_if(j, "output_dir", c.output_dir);
  read_if(j, "workers", c.workers);
  read_if(j, "plots", c.plots);
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  expect_keys(j, "top level", {"version", "road", "reward", "learner", "discretizer", "run"});
  if (!j.contains("version") || j.at("version").get<int>() != 1)
    throw std::invalid_argument("config: missing or unsupported version (expected 1)");
  ExperimentConfig cfg;
  if (j.contains("road")) parse_road(j.at("road"), cfg.road);
  if (j.contains("reward")) parse_reward(j.at("reward"), cfg.reward);
  if (j.contains("learner")) parse_learner(j.at("learner"), cfg.learner);
  if (j.contains("discretizer")) parse_discretizer(j.at("discretizer"), cfg.discretizer);
  if (j.contains("run")) parse_run(j.at("run"), cfg);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json j;
  in >> j;
  return config_from_json(j);
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  json j;
  j["version"] = 1;
  j["road"] = {{"road_length", c.road.road_length},
               {"n_lanes", c.road.n_lanes},
               {"v_max", c.road.v_max},
               {"arrival_rate", c.road.arrival_rate},
               {"episode_duration", c.road.episode_duration},
               {"dt", c.road.dt},
               {"penetration", c.road.penetration}};
  j["reward"] = {{"variant", variant_name(c.reward.variant)},
                 {"form", c.reward.form == PositionRewardForm::unnormalized ? "unnormalized" : "analytic"},
                 {"field_sigma", c.reward.field_sigma},
                 {"field_zeta", c.reward.field_zeta},
                 {"general",
                  {{"w1", c.reward.general.w1},
                   {"w2", c.reward.general.w2},
                   {"w3", c.reward.general.w3},
                   {"w4", c.reward.general.w4}}},
                 {"diff",
                  {{"omega1", c.reward.diff.omega1},
                   {"omega2", c.reward.diff.omega2},
                   {"omega3", c.reward.diff.omega3},
                   {"omega4", c.reward.diff.omega4},
                   {"lambda", c.reward.diff.lambda},
                   {"high_speed_frac", c.reward.diff.high_speed_frac}}}};
  j["learner"] = {{"kind", c.learner.kind == LearnerConfig::Kind::iql ? "iql" : "vdn"},
                  {"alpha", c.learner.alpha},
                  {"gamma", c.learner.gamma},
                  {"buffer", c.learner.buffer_capacity},
                  {"target_period", c.learner.target_period},
                  {"epsilon_start", c.learner.epsilon_start},
                  {"epsilon_decay", c.learner.epsilon_decay},
                  {"epsilon_min", c.learner.epsilon_min},
                  {"replay_samples", c.learner.replay_samples}};
  j["discretizer"] = {{"speed_bins", c.discretizer.speed_bins},
                      {"gap_bins", c.discretizer.gap_bins},
                      {"rel_speed_bins", c.discretizer.rel_speed_bins},
                      {"gap_lo", c.discretizer.gap_lo},
                      {"rel_speed_edge", c.discretizer.rel_speed_edge}};
  j["run"] = {{"n_episodes", c.n_episodes},
              {"eval_episodes", c.eval_episodes},
              {"smooth_window", c.smooth_window},
              {"seeds", c.seeds},
              {"penetrations", c.penetrations},
              {"output_dir", c.output_dir},
              {"workers", c.workers},
              {"plots", c.plots}};
  std::vector<std::string> names;
  for (auto v : c.variants) names.push_back(variant_name(v));
  j["run"]["variants"] = names;
  return j;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

/// Shared state of the training policy across hook callbacks.
struct TrainerState {
  learn::TabularQ q;
  learn::DiscretizerSpec disc;
  LearnerConfig::Kind kind = LearnerConfig::Kind::iql;
  int replay_samples = 0;
  std::mt19937_64 rng;
  std::map<int, std::pair<std::uint64_t, int>> staged;  // agent -> (key, action)
};

PolicyHooks training_policy(std::shared_ptr<TrainerState> ts) {
  PolicyHooks hooks;
  hooks.act = [ts](const WorldState& state, const Vehicle& veh, const RoadConfig& cfg) {
    const Observation obs = encode_observation(state, veh.id, cfg);
    const std::uint64_t key = ts->disc.state_key(obs, cfg);
    const int a = learn::select_action(ts->q, key, ts->rng);
    ts->staged[veh.id] = {key, a};
    return action_from_index(a);
  };
  hooks.on_transition = [ts](const TickContext& ctx) {
    std::vector<learn::Transition> joint;
    joint.reserve(ts->staged.size());
    for (const auto& [id, key_action] : ts->staged) {
      learn::Transition t;
      t.s = key_action.first;
      t.a = key_action.second;
      t.r = ctx.reward.total;
      const Vehicle* veh = ctx.state.find(id);
      if (veh == nullptr || !veh->alive) {
        t.terminal = true;  // exited or collided
        t.s2 = t.s;
      } else {
        const Observation obs = encode_observation(ctx.state, id, ctx.cfg);
        t.s2 = ts->disc.state_key(obs, ctx.cfg);
      }
      joint.push_back(t);
    }
    ts->staged.clear();
    if (joint.empty()) return;

    if (ts->kind == LearnerConfig::Kind::vdn) {
      learn::vdn_update(ts->q, joint);
    } else {
      for (const auto& t : joint) {
        ts->q.buffer.push(t);
        learn::iql_update(ts->q, t);
        for (int k = 0; k < ts->replay_samples; ++k)
          learn::iql_update(ts->q, ts->q.buffer.sample(ts->rng));
      }
    }
  };
  return hooks;
}

}  // namespace

PolicyHooks greedy_policy(const learn::TabularQ& q, const learn::DiscretizerSpec& disc) {
  PolicyHooks hooks;
  hooks.act = [&q, disc](const WorldState& state, const Vehicle& veh, const RoadConfig& cfg) {
    const Observation obs = encode_observation(state, veh.id, cfg);
    return action_from_index(q.greedy_action(disc.state_key(obs, cfg)));
  };
  return hooks;
}

PolicyHooks random_policy(std::uint64_t seed) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  PolicyHooks hooks;
  hooks.act = [rng](const WorldState&, const Vehicle&, const RoadConfig&) {
    std::uniform_int_distribution<int> pick(0, kNumActions - 1);
    return action_from_index(pick(*rng));
  };
  return hooks;
}

PolicyHooks idle_policy() {
  PolicyHooks hooks;
  hooks.act = [](const WorldState&, const Vehicle&, const RoadConfig&) {
    return JointAction{LonAction::keep, LatAction::hold};
  };
  return hooks;
}

std::vector<double> smooth_trailing(const std::vector<double>& xs, int window) {
  std::vector<double> out(xs.size(), 0.0);
  double acc = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    acc += xs[i];
    if (i >= static_cast<size_t>(window)) acc -= xs[i - static_cast<size_t>(window)];
    const auto n = std::min<std::size_t>(i + 1, static_cast<std::size_t>(window));
    out[i] = acc / static_cast<double>(n);
  }
  return out;
}

double plateau_level(const std::vector<double>& smoothed, double tail_frac) {
  if (smoothed.empty()) throw std::invalid_argument("plateau_level: empty curve");
  const auto tail = std::max<std::size_t>(1, static_cast<std::size_t>(smoothed.size() * tail_frac));
  double acc = 0.0;
  for (std::size_t i = smoothed.size() - tail; i < smoothed.size(); ++i) acc += smoothed[i];
  return acc / static_cast<double>(tail);
}

int episodes_to_plateau_fraction(const std::vector<double>& smoothed, double frac) {
  const double plateau = plateau_level(smoothed);
  const double threshold = plateau >= 0.0 ? frac * plateau : (2.0 - frac) * plateau;
  for (std::size_t i = 0; i < smoothed.size(); ++i)
    if (smoothed[i] >= threshold) return static_cast<int>(i);
  return static_cast<int>(smoothed.size());
}

TrainResult train_cell(const ExperimentConfig& cfg, RewardVariant variant, double penetration,
                       std::uint64_t seed) {
  TrainResult result;
  RoadConfig road = cfg.road;
  road.penetration = penetration;
  road.validate();

  RewardConfig rc = cfg.reward;
  rc.variant = variant;
  RewardEngine engine(rc);

  auto ts = std::make_shared<TrainerState>();
  ts->disc = cfg.discretizer;
  ts->kind = cfg.learner.kind;
  ts->replay_samples = cfg.learner.replay_samples;
  ts->rng.seed(mix_seed(seed, 0xfeed));
  ts->q.alpha = cfg.learner.alpha;
  ts->q.gamma = cfg.learner.gamma;
  ts->q.epsilon = cfg.learner.epsilon_start;
  ts->q.epsilon_decay = cfg.learner.epsilon_decay;
  ts->q.epsilon_min = cfg.learner.epsilon_min;
  ts->q.target_period = cfg.learner.target_period;
  ts->q.buffer = learn::ReplayBuffer(cfg.learner.buffer_capacity);

  const PolicyHooks hooks = training_policy(ts);
  EpisodeOptions opts;
  opts.record_ticks = false;

  std::vector<double> returns;
  std::vector<double> epsilons;
  std::vector<std::size_t> table_sizes;
  returns.reserve(static_cast<size_t>(cfg.n_episodes));
  for (int ep = 0; ep < cfg.n_episodes; ++ep) {
    ts->staged.clear();
    const EpisodeTrace trace = run_episode(road, hooks, mix_seed(seed, static_cast<std::uint64_t>(ep)),
                                           &engine, opts);
    if (!trace.summary.valid) {
      result.failed = true;
      result.error = trace.summary.error;
      return result;
    }
    returns.push_back(trace.summary.return_sum);
    ts->q.decay_epsilon();
    epsilons.push_back(ts->q.epsilon);
    table_sizes.push_back(ts->q.table.size());
  }

  const std::vector<double> smoothed = smooth_trailing(returns, cfg.smooth_window);
  result.rows.reserve(returns.size());
  for (size_t i = 0; i < returns.size(); ++i)
    result.rows.push_back(
        {static_cast<int>(i), returns[i], smoothed[i], epsilons[i], table_sizes[i]});

  // Greedy evaluation on fresh seeds; a copy of the engine keeps the
  // training centering state untouched.
  RewardEngine eval_engine = engine;
  const PolicyHooks eval_hooks = greedy_policy(ts->q, cfg.discretizer);
  std::vector<EpisodeTrace> eval_traces;
  eval_traces.reserve(static_cast<size_t>(cfg.eval_episodes));
  for (int e = 0; e < cfg.eval_episodes; ++e)
    eval_traces.push_back(run_episode(road, eval_hooks,
                                      mix_seed(seed, 0xe7a1u + static_cast<std::uint64_t>(e)),
                                      &eval_engine));
  result.final_metrics = metrics::compute_metrics(eval_traces);
  result.final_metrics.seed = seed;
  result.final_metrics.episode = cfg.n_episodes;
  result.q = std::move(ts->q);
  return result;
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

std::string cell_stem(RewardVariant v, double pen, std::uint64_t seed) {
  const int pct = static_cast<int>(std::lround(pen * 100.0));
  return variant_name(v) + "_p" + std::to_string(pct) + "_s" + std::to_string(seed);
}

}  // namespace

void write_curve_csv(const std::string& path, const std::vector<EpisodeRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "episode,return,smoothed,epsilon,table_size\n";
  for (const auto& r : rows)
    out << r.episode << "," << fmt(r.ret) << "," << fmt(r.smoothed) << "," << fmt(r.epsilon)
        << "," << r.table_size << "\n";
}

void write_svg_plot(const std::string& path, const std::string& title,
                    const std::vector<PlotSeries>& series, bool log_x) {
  const double width = 720, height = 420, margin = 50;
  double ymin = 1e300, ymax = -1e300;
  std::size_t nmax = 0;
  for (const auto& s : series) {
    nmax = std::max(nmax, s.ys.size());
    for (double y : s.ys) {
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (nmax == 0) return;
  if (ymax <= ymin) ymax = ymin + 1.0;

  auto xpos = [&](std::size_t i) {
    const double t = log_x ? std::log10(static_cast<double>(i + 1)) /
                                 std::log10(static_cast<double>(nmax))
                           : static_cast<double>(i) / static_cast<double>(nmax - 1);
    return margin + t * (width - 2 * margin);
  };
  auto ypos = [&](double y) {
    return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin);
  };

  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
      << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<text x='" << width / 2 << "' y='20' text-anchor='middle' font-size='14'>" << title
      << "</text>\n";
  out << "<line x1='" << margin << "' y1='" << height - margin << "' x2='" << width - margin
      << "' y2='" << height - margin << "' stroke='black'/>\n";
  out << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin << "' y2='"
      << height - margin << "' stroke='black'/>\n";
  out << "<text x='" << width / 2 << "' y='" << height - 12
      << "' text-anchor='middle' font-size='11'>episode" << (log_x ? " (log scale)" : "")
      << "</text>\n";
  out << "<text x='12' y='" << height / 2 << "' font-size='11' transform='rotate(-90 12 "
      << height / 2 << ")'>smoothed return</text>\n";
  int ci = 0;
  for (const auto& s : series) {
    out << "<polyline fill='none' stroke='" << colors[ci % 5] << "' stroke-width='1.5' points='";
    for (std::size_t i = 0; i < s.ys.size(); ++i)
      out << fmt(xpos(i)) << "," << fmt(ypos(s.ys[i])) << " ";
    out << "'/>\n";
    out << "<text x='" << width - margin + 4 << "' y='" << margin + 16 * ci
        << "' font-size='11' fill='" << colors[ci % 5] << "'>" << s.label << "</text>\n";
    ++ci;
  }
  out << "</svg>\n";
}

SweepOutput run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);

  SweepOutput out;
  for (const auto v : cfg.variants)
    for (const double pen : cfg.penetrations)
      for (const auto seed : cfg.seeds) out.cells.push_back({v, pen, seed, {}});

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= out.cells.size()) break;
      SweepCell& cell = out.cells[i];
      try {
        cell.result = train_cell(cfg, cell.variant, cell.penetration, cell.seed);
      } catch (const std::exception& e) {
        cell.result.failed = true;
        cell.result.error = e.what();
      }
    }
  };
  std::vector<std::thread> threads;
  const int n_workers = std::min<int>(cfg.workers, static_cast<int>(out.cells.size()));
  threads.reserve(static_cast<size_t>(n_workers));
  for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  // All files are written from this thread, in grid order.
  for (const auto& cell : out.cells) {
    if (cell.result.failed) continue;
    write_curve_csv(cfg.output_dir + "/curve_" + cell_stem(cell.variant, cell.penetration, cell.seed) + ".csv",
                    cell.result.rows);
  }

  const std::string summary_path = cfg.output_dir + "/summary.csv";
  {
    std::ofstream s(summary_path);
    s << "variant,penetration,seed,avg_speed,min_gap,lc_freq,lc_per_min,succ_rate,succ_rate_pct,"
         "final_return,episodes_to_80pct_plateau,status,error\n";
    for (const auto& cell : out.cells) {
      s << variant_name(cell.variant) << "," << fmt(cell.penetration) << "," << cell.seed << ",";
      if (cell.result.failed) {
        s << ",,,,,,,,failed," << cell.result.error << "\n";
        continue;
      }
      const auto& m = cell.result.final_metrics;
      std::vector<double> sm;
      sm.reserve(cell.result.rows.size());
      for (const auto& r : cell.result.rows) sm.push_back(r.smoothed);
      s << fmt(m.avg_speed) << "," << fmt(m.min_gap) << "," << fmt(m.lc_freq) << ","
        << fmt(m.lc_per_min) << "," << fmt(m.succ_rate) << "," << fmt(m.succ_rate * 100.0) << ","
        << fmt(m.episode_return) << "," << episodes_to_plateau_fraction(sm) << ",ok,\n";
    }
  }

  // Aggregate mean/std across seeds per (variant, penetration).
  {
    std::ofstream s(cfg.output_dir + "/summary_agg.csv");
    s << "variant,penetration,metric,mean,std,n\n";
    for (const auto v : cfg.variants)
      for (const double pen : cfg.penetrations) {
        struct Acc {
          const char* name;
          std::vector<double> xs;
        };
        std::array<Acc, 5> accs{{{"avg_speed", {}},
                                 {"min_gap", {}},
                                 {"lc_freq", {}},
                                 {"succ_rate", {}},
                                 {"final_return", {}}}};
        for (const auto& cell : out.cells) {
          if (cell.variant != v || cell.penetration != pen || cell.result.failed) continue;
          const auto& m = cell.result.final_metrics;
          accs[0].xs.push_back(m.avg_speed);
          accs[1].xs.push_back(m.min_gap);
          accs[2].xs.push_back(m.lc_freq);
          accs[3].xs.push_back(m.succ_rate);
          accs[4].xs.push_back(m.episode_return);
        }
        for (const auto& acc : accs) {
          if (acc.xs.empty()) continue;
          double mean = 0.0;
          for (double x : acc.xs) mean += x;
          mean /= static_cast<double>(acc.xs.size());
          double var = 0.0;
          for (double x : acc.xs) var += (x - mean) * (x - mean);
          var = acc.xs.size() > 1 ? var / static_cast<double>(acc.xs.size() - 1) : 0.0;
          s << variant_name(v) << "," << fmt(pen) << "," << acc.name << "," << fmt(mean) << ","
            << fmt(std::sqrt(var)) << "," << acc.xs.size() << "\n";
        }
      }
  }

  if (cfg.plots) {
    for (const double pen : cfg.penetrations) {
      std::vector<PlotSeries> series;
      for (const auto v : cfg.variants) {
        // Mean smoothed curve across seeds.
        std::vector<double> mean_curve;
        int n = 0;
        for (const auto& cell : out.cells) {
          if (cell.variant != v || cell.penetration != pen || cell.result.failed) continue;
          if (mean_curve.empty()) mean_curve.assign(cell.result.rows.size(), 0.0);
          for (size_t i = 0; i < cell.result.rows.size(); ++i)
            mean_curve[i] += cell.result.rows[i].smoothed;
          ++n;
        }
        if (n == 0) continue;
        for (double& x : mean_curve) x /= n;
        series.push_back({variant_name(v), std::move(mean_curve)});
      }
      const int pct = static_cast<int>(std::lround(pen * 100.0));
      write_svg_plot(cfg.output_dir + "/returns_p" + std::to_string(pct) + ".svg",
                     "smoothed returns, penetration " + std::to_string(pct) + "%", series, true);
    }
  }

  out.summary_csv_path = summary_path;
  return out;
}

}  // namespace lanesim::harness
