#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lanesim/harness.hpp"
#include "lanesim/mdp_lab.hpp"

namespace {

using namespace lanesim;
namespace fs = std::filesystem;

harness::ExperimentConfig load_or_default(const std::string& config_path) {
  if (config_path.empty()) return harness::ExperimentConfig{};
  return harness::load_config(config_path);
}

int cmd_sim(const std::string& config_path, std::uint64_t seed, const std::string& out_path,
            const std::string& policy_name, const std::string& table_path) {
  auto cfg = load_or_default(config_path);
  PolicyHooks policy;
  learn::TabularQ q;
  if (policy_name == "random") {
    policy = harness::random_policy(seed ^ 0x5eedULL);
  } else if (policy_name == "idle") {
    policy = harness::idle_policy();
  } else if (policy_name == "greedy") {
    if (table_path.empty()) throw std::runtime_error("--policy greedy requires --table");
    learn::load_table(q, table_path);
    policy = harness::greedy_policy(q, cfg.discretizer);
  } else {
    throw std::runtime_error("unknown policy: " + policy_name);
  }
  RewardEngine engine(cfg.reward);
  const EpisodeTrace trace = run_episode(cfg.road, policy, seed, &engine);

  if (out_path.empty() || out_path == "-") {
    write_trace_jsonl(trace, std::cout);
  } else {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    write_trace_jsonl(trace, out);
  }
  std::cerr << "episode done: " << trace.ticks.size() << " ticks, return "
            << trace.summary.return_sum << ", collisions " << trace.summary.collisions << "\n";
  return trace.summary.valid ? 0 : 1;
}

int cmd_train(const std::string& config_path, const std::string& variant, double penetration,
              std::uint64_t seed, const std::string& out_dir) {
  auto cfg = load_or_default(config_path);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  fs::create_directories(cfg.output_dir);
  const auto v = harness::variant_from_name(variant);
  const double pen = penetration >= 0 ? penetration : cfg.road.penetration;

  const auto result = harness::train_cell(cfg, v, pen, seed);
  if (result.failed) {
    std::cerr << "training failed: " << result.error << "\n";
    return 1;
  }
  const int pct = static_cast<int>(std::lround(pen * 100.0));
  const std::string stem =
      cfg.output_dir + "/" + variant + "_p" + std::to_string(pct) + "_s" + std::to_string(seed);
  harness::write_curve_csv(stem + "_curve.csv", result.rows);
  learn::save_table(result.q, stem + "_qtable.txt");

  const auto& m = result.final_metrics;
  std::ofstream ms(stem + "_metrics.csv");
  ms << "avg_speed,min_gap,lc_freq,lc_per_min,succ_rate,final_return\n";
  ms << m.avg_speed << "," << m.min_gap << "," << m.lc_freq << "," << m.lc_per_min << ","
     << m.succ_rate << "," << m.episode_return << "\n";
  std::cout << "avg_speed=" << m.avg_speed << " min_gap=" << m.min_gap
            << " lc_freq=" << m.lc_freq << " succ_rate=" << m.succ_rate << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir, int workers,
              bool plots) {
  auto cfg = load_or_default(config_path);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (workers > 0) cfg.workers = workers;
  if (plots) cfg.plots = true;
  const auto out = harness::run_sweep(cfg);
  int failed = 0;
  for (const auto& cell : out.cells)
    if (cell.result.failed) ++failed;
  std::cout << "sweep: " << out.cells.size() << " cells, " << failed << " failed, summary at "
            << out.summary_csv_path << "\n";
  return failed == 0 ? 0 : 1;
}

int cmd_eval(const std::string& config_path, const std::string& table_path, std::uint64_t seed,
             int episodes, const std::string& out_path) {
  auto cfg = load_or_default(config_path);
  learn::TabularQ q;
  learn::load_table(q, table_path);
  RewardEngine engine(cfg.reward);
  const auto policy = harness::greedy_policy(q, cfg.discretizer);
  std::vector<EpisodeTrace> traces;
  for (int e = 0; e < episodes; ++e)
    traces.push_back(run_episode(cfg.road, policy, seed + static_cast<std::uint64_t>(e), &engine));
  const auto m = metrics::compute_metrics(traces);

  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out_path.empty() && out_path != "-") {
    file.open(out_path);
    if (!file) throw std::runtime_error("cannot write " + out_path);
    os = &file;
  }
  *os << "avg_speed,min_gap,lc_freq,lc_per_min,succ_rate,succ_rate_pct,mean_return\n";
  *os << m.avg_speed << "," << m.min_gap << "," << m.lc_freq << "," << m.lc_per_min << ","
      << m.succ_rate << "," << m.succ_rate * 100.0 << "," << m.episode_return << "\n";
  return 0;
}

int cmd_lab(const std::string& out_dir, int n_mdps, std::uint64_t seed) {
  fs::create_directories(out_dir);
  const std::vector<double> gammas{0.9, 0.99, 0.999};

  std::ofstream csv(out_dir + "/laurent.csv");
  csv << "mdp_seed,gamma,metric,value\n";
  double worst_identity = 0.0;
  for (int i = 0; i < n_mdps; ++i) {
    const std::uint64_t mdp_seed = seed + static_cast<std::uint64_t>(i);
    const auto mdp = lab::random_ergodic_mdp(8, 3, mdp_seed);
    for (double g : gammas) {
      const auto vb = lab::solve_values(mdp, g);
      const double identity =
          (vb.h_gamma.array() - vb.r_pi / (1.0 - g) - vb.h_tilde_gamma.array()).abs().maxCoeff();
      worst_identity = std::max(worst_identity, identity);
      csv << mdp_seed << "," << g << ",r_pi," << vb.r_pi << "\n";
      csv << mdp_seed << "," << g << ",decomposition_residual," << identity << "\n";
      csv << mdp_seed << "," << g << ",laurent_residual," << vb.e_gamma.cwiseAbs().maxCoeff()
          << "\n";
    }
  }
  std::cout << "decomposition identity: worst residual " << worst_identity << " over " << n_mdps
            << " random MDPs\n";

  std::ofstream sh(out_dir + "/shift_invariance.csv");
  sh << "mdp_seed,c,gamma,max_h_shift_error,max_centered_deviation,r_pi_shift_error,"
        "argmax_unchanged\n";
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> c_draw(-10.0, 10.0);
  for (int i = 0; i < n_mdps; ++i) {
    const auto mdp = lab::random_ergodic_mdp(6, 3, seed + 1000 + static_cast<std::uint64_t>(i));
    const double c = c_draw(rng);
    const auto rep = lab::shift_invariance_check(mdp, c, 0.9);
    sh << seed + 1000 + static_cast<std::uint64_t>(i) << "," << c << "," << rep.gamma << ","
       << rep.max_h_shift_error << "," << rep.max_centered_deviation << ","
       << rep.r_pi_shift_error << "," << (rep.argmax_unchanged ? 1 : 0) << "\n";
  }
  std::cout << "shift invariance report at " << out_dir << "/shift_invariance.csv\n";

  PotentialFieldParams field;
  field.sigma = 30.0;
  field.zeta = 1.0;
  field.l = 200.0;
  field.y_tar = 2.0;
  lab::DriftChainConfig chain;
  const auto rep = lab::equivalence_experiment(chain, std::nan(""), field, 1000000, seed);
  std::ofstream eq(out_dir + "/equivalence.csv");
  eq << "lambda,mean_centered,mean_centered_shaped,difference,std_error,alignment,"
        "condition1,within_3se\n";
  eq << rep.lambda << "," << rep.mean_centered << "," << rep.mean_centered_shaped << ","
     << rep.difference << "," << rep.std_error << "," << rep.drift_gradient_alignment << ","
     << rep.condition1_held << "," << rep.within_3se << "\n";
  std::cout << "equivalence: |E[R~+lambda r_p] - E[R~]| = " << std::abs(rep.difference)
            << " vs 3*SE = " << 3.0 * rep.std_error
            << (rep.within_3se ? "  (within)" : "  (outside)") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-lane mixed-autonomy traffic simulator with a pluggable reward engine"};
  app.require_subcommand(1);

  std::string config_path, out_path, policy_name = "random", table_path, variant = "dr";
  std::uint64_t seed = 1;
  double penetration = -1.0;
  int workers = 0, episodes = 20, n_mdps = 100;
  bool plots = false;

  auto* sim = app.add_subcommand("sim", "roll out one episode and emit its trace");
  sim->add_option("--config", config_path, "experiment config JSON");
  sim->add_option("--seed", seed, "episode seed");
  sim->add_option("--out", out_path, "trace output path ('-' for stdout)");
  sim->add_option("--policy", policy_name, "random | idle | greedy");
  sim->add_option("--table", table_path, "q-table for --policy greedy");

  auto* train = app.add_subcommand("train", "train one sweep cell");
  train->add_option("--config", config_path, "experiment config JSON");
  train->add_option("--variant", variant, "gr | cr | dr");
  train->add_option("--penetration", penetration, "CAV fraction (default from config)");
  train->add_option("--seed", seed, "training seed");
  train->add_option("--out", out_path, "output directory");

  auto* sweep = app.add_subcommand("sweep", "run the full variant x penetration x seed grid");
  sweep->add_option("--config", config_path, "experiment config JSON");
  sweep->add_option("--out", out_path, "output directory override");
  sweep->add_option("--workers", workers, "parallel cells");
  sweep->add_flag("--plots", plots, "write SVG return plots");

  auto* eval = app.add_subcommand("eval", "greedy metrics from a saved q-table");
  eval->add_option("--config", config_path, "experiment config JSON");
  eval->add_option("--table", table_path, "q-table path")->required();
  eval->add_option("--seed", seed, "first eval seed");
  eval->add_option("--episodes", episodes, "number of eval episodes");
  eval->add_option("--out", out_path, "metrics CSV path ('-' for stdout)");

  auto* lab_cmd = app.add_subcommand("lab", "average-reward / centering reports on finite MDPs");
  lab_cmd->add_option("--out", out_path, "output directory")->required();
  lab_cmd->add_option("--mdps", n_mdps, "number of random MDPs");
  lab_cmd->add_option("--seed", seed, "base seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_sim(config_path, seed, out_path, policy_name, table_path);
    if (train->parsed()) return cmd_train(config_path, variant, penetration, seed, out_path);
    if (sweep->parsed()) return cmd_sweep(config_path, out_path, workers, plots);
    if (eval->parsed()) return cmd_eval(config_path, table_path, seed, episodes, out_path);
    if (lab_cmd->parsed()) return cmd_lab(out_path, n_mdps, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
