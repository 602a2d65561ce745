// alignflow: checkerboard -> sdot -> pairs -> train -> sample -> eval.
// Exit status: 0 success, 2 invalid input, 3 numeric failure.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <alignflow/alignflow.hpp>

namespace af = alignflow;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

struct ConfigFlags {
  std::string path;
  std::vector<std::string> overrides;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.path, "key = value run configuration");
  cmd->add_option("--set", flags.overrides, "override one config key (key=value), repeatable");
}

af::RunConfig load_config(const ConfigFlags& flags) {
  af::RunConfig cfg = flags.path.empty() ? af::RunConfig{} : af::RunConfig::parse_file(flags.path);
  for (const auto& kv : flags.overrides) cfg.apply(kv);
  return cfg;
}

void write_echo(const std::string& out_path, const af::RunConfig& cfg) {
  std::ofstream out(out_path + ".config", std::ios::trunc);
  if (!out) throw af::ValidationError("cannot write " + out_path + ".config");
  out << cfg.echo();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw af::ValidationError("cannot open " + path + " for writing");
  return out;
}

// ---- checkerboard ---------------------------------------------------------

struct CheckerboardArgs {
  long n = 10000;
  std::uint64_t seed = 0;
  std::string out;
};

int run_checkerboard(const CheckerboardArgs& a) {
  af::require(a.n >= 1, "--n must be at least 1");
  const auto data = af::Dataset::uniform(af::checkerboard_points(a.n, a.seed));
  af::write_point_file(a.out, data);
  std::printf("wrote %ld checkerboard points to %s\n", a.n, a.out.c_str());
  return 0;
}

// ---- sdot -----------------------------------------------------------------

struct SdotArgs {
  ConfigFlags config;
  std::string data;
  std::string out;
  std::string metrics;
  std::optional<double> threshold;
  std::optional<std::uint64_t> seed;
};

int run_sdot(const SdotArgs& a) {
  af::RunConfig cfg = load_config(a.config);
  if (!a.data.empty()) cfg.data_points = a.data;
  if (a.threshold) cfg.mre_threshold = *a.threshold;
  if (a.seed) cfg.sdot.master_seed = *a.seed;
  cfg.validate();
  const auto data = af::read_point_file(cfg.data_points);
  data.validate();

  // Each class is its own semi-discrete problem with its own noise stream.
  const auto classes = data.classes();
  af::ClassDuals g, g_ema;
  std::vector<af::MetricsSnapshot> combined;
  double worst = 0.0;
  for (const auto cls : classes) {
    const auto members = data.members(cls);
    const auto local = data.restrict_to(members);
    af::SdotConfig sc = cfg.sdot;
    if (classes.size() > 1) sc.master_seed = af::derive_seed(cfg.sdot.master_seed, cls);
    const auto result = af::solve_dual(local, af::NoisePrior{data.dim()}, sc);
    g.emplace(cls, result.duals.g);
    g_ema.emplace(cls, result.duals.g_ema);
    double class_mass = 0.0;
    for (const auto i : members) class_mass += data.weights[i];
    if (combined.empty()) {
      combined = result.history;
      for (auto& s : combined) s.l1_est *= class_mass;
    } else {
      for (std::size_t k = 0; k < combined.size(); ++k) {
        combined[k].mre_est = std::max(combined[k].mre_est, result.history[k].mre_est);
        combined[k].l1_est += class_mass * result.history[k].l1_est;
      }
    }
    worst = std::max(worst, result.final_metrics().mre_est);
    std::printf("class %u: %zu points, final mre_est %.6g, l1_est %.6g\n", cls, members.size(),
                result.final_metrics().mre_est, result.final_metrics().l1_est);
  }

  af::DualWeights duals{af::merge_duals(data, g), af::merge_duals(data, g_ema)};
  af::write_duals(a.out, duals);
  write_echo(a.out, cfg);
  if (!a.metrics.empty()) {
    auto out = open_out(a.metrics);
    af::write_metrics_csv(out, combined);
  }
  if (worst >= cfg.mre_threshold) {
    std::fprintf(stderr, "sdot: final mre_est %.6g is not below the threshold %.6g\n", worst,
                 cfg.mre_threshold);
    return kExitValidation;
  }
  return 0;
}

// ---- pairs ----------------------------------------------------------------

struct PairsArgs {
  ConfigFlags config;
  std::string data;
  std::string duals;
  std::string out;
  std::optional<std::uint64_t> count;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> rebalance;
};

int run_pairs(const PairsArgs& a) {
  af::RunConfig cfg = load_config(a.config);
  if (!a.data.empty()) cfg.data_points = a.data;
  if (a.count) cfg.pairs.count = *a.count;
  if (a.seed) cfg.pairs.seed = *a.seed;
  if (a.rebalance) cfg.set("pairs.rebalance", *a.rebalance);
  cfg.validate();
  const auto data = af::read_point_file(cfg.data_points);
  const auto duals = af::read_duals(a.duals);
  af::require(duals.g_ema.size() == data.size(), "dual file has " + std::to_string(duals.g_ema.size()) +
                                                     " weights, dataset has " + std::to_string(data.size()) +
                                                     " points");
  const std::uint64_t count = cfg.pairs.count > 0 ? cfg.pairs.count
                                                  : static_cast<std::uint64_t>(cfg.train.num_steps) *
                                                        static_cast<std::uint64_t>(cfg.train.batch_size);
  // The averaged weights are the solver's answer; g is only the last iterate.
  auto records = af::generate_pairs(data, af::split_duals(data, duals.g_ema), af::NoisePrior{data.dim()},
                                    af::proportional_class_mix(data, count), cfg.pairs.seed);
  std::uint64_t changed = 0;
  if (cfg.pairs.rebalance) {
    changed = af::rebalance_per_class(records, data).changed;
    af::shuffle_records(records, cfg.pairs.seed);
  }
  af::write_pairs(a.out, {static_cast<std::uint32_t>(data.size()), records});
  write_echo(a.out, cfg);
  std::printf("wrote %zu pairs to %s (rebalance changed %llu)\n", records.size(), a.out.c_str(),
              static_cast<unsigned long long>(changed));
  return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  ConfigFlags config;
  std::string data;
  std::string pairs;
  std::string out;
  std::string loss_csv;
  std::optional<long> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> coupling;
};

int run_train(const TrainArgs& a) {
  af::RunConfig cfg = load_config(a.config);
  if (!a.data.empty()) cfg.data_points = a.data;
  if (a.steps) cfg.train.num_steps = *a.steps;
  if (a.seed) cfg.train.master_seed = *a.seed;
  if (a.coupling) cfg.set("train.coupling", *a.coupling);
  cfg.validate();
  const auto data = af::read_point_file(cfg.data_points);
  af::PairFile pairs;
  if (cfg.train.coupling == af::CouplingMode::AlignFlow) {
    af::require(!a.pairs.empty(), "alignflow coupling needs --pairs");
    pairs = af::read_pairs(a.pairs);
    af::require(pairs.dataset_size == data.size(), "pair file was built for " +
                                                       std::to_string(pairs.dataset_size) +
                                                       " points, dataset has " + std::to_string(data.size()));
  }
  const auto result = af::train(data, cfg.train, pairs.records);
  af::write_checkpoint(a.out, result.params);
  write_echo(a.out, cfg);
  if (!a.loss_csv.empty()) {
    auto out = open_out(a.loss_csv);
    af::write_loss_csv(out, result.history);
  }
  if (!result.history.empty()) {
    std::printf("trained %ld steps, final loss_ema %.6g\n", cfg.train.num_steps, result.history.back().loss_ema);
  }
  return 0;
}

// ---- sample ---------------------------------------------------------------

struct SampleArgs {
  ConfigFlags config;
  std::string model;
  std::string out;
  std::string trajectories;
  std::string metrics;
  std::string slices_prefix;
  std::string policy;
  std::optional<long> count;
  std::optional<long> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scheme;
};

af::ExtraPolicy resolve_policy(const std::string& name, const af::MlpParams& params) {
  if (name.empty()) {
    af::require(params.layout.num_extra == 0, "network takes an extra input; pass --policy shortcut or meanflow");
    return af::ExtraPolicy::None;
  }
  if (name == "none") return af::ExtraPolicy::None;
  if (name == "shortcut") return af::ExtraPolicy::ShortcutStep;
  if (name == "meanflow") return af::ExtraPolicy::MeanFlowWindow;
  throw af::ValidationError("unknown --policy \"" + name + "\" (expected none, shortcut or meanflow)");
}

constexpr int kDensitySlices = 10;

int run_sample(const SampleArgs& a) {
  af::RunConfig cfg = load_config(a.config);
  if (a.count) cfg.sample.count = *a.count;
  if (a.steps) cfg.sample.steps = *a.steps;
  if (a.seed) cfg.sample.seed = *a.seed;
  if (a.scheme) cfg.set("sample.scheme", *a.scheme);
  cfg.validate();
  const auto params = af::read_checkpoint(a.model);
  const auto policy = resolve_policy(a.policy, params);
  const af::Index d = params.layout.dim;
  const af::Index n = cfg.sample.count;

  Eigen::MatrixXd x0(d, n);
  for (af::Index i = 0; i < n; ++i) {
    x0.col(i) = af::noise_from_seed(af::derive_seed(cfg.sample.seed, static_cast<std::uint64_t>(i)), d);
  }
  const auto traj = af::integrate(af::mlp_field(params, policy), x0, cfg.sample.scheme, cfg.sample.steps);

  af::write_point_file(a.out, af::Dataset::uniform(traj.states.back()));
  write_echo(a.out, cfg);

  std::vector<double> straight(static_cast<std::size_t>(n));
  for (af::Index i = 0; i < n; ++i) straight[static_cast<std::size_t>(i)] = af::straightness(af::column_log(traj, i));
  double mean = 0.0;
  for (const double s : straight) mean += s;
  mean /= static_cast<double>(n);

  if (!a.trajectories.empty()) {
    auto out = open_out(a.trajectories);
    out << "traj_id,t";
    for (af::Index k = 0; k < d; ++k) out << ",x" << k;
    out << '\n';
    for (af::Index i = 0; i < n; ++i) {
      for (std::size_t s = 0; s < traj.states.size(); ++s) {
        out << i << ',' << af::format_double(traj.times[s]);
        for (af::Index k = 0; k < d; ++k) out << ',' << af::format_double(traj.states[s](k, i));
        out << '\n';
      }
    }
  }
  if (!a.metrics.empty()) {
    auto out = open_out(a.metrics);
    out << "metric,value\n";
    out << "count," << n << '\n';
    out << "steps," << cfg.sample.steps << '\n';
    out << "nfe_per_sample," << traj.nfe << '\n';
    out << "mean_straightness," << af::format_double(mean) << '\n';
  }
  if (!a.slices_prefix.empty()) {
    af::require(d == 2, "density slices need 2D samples");
    for (int s = 0; s < kDensitySlices; ++s) {
      const double t = static_cast<double>(s) / (kDensitySlices - 1);
      const auto k = static_cast<std::size_t>(std::lround(t * static_cast<double>(cfg.sample.steps)));
      af::DensityGrid grid;
      grid.add(traj.states[k]);
      grid.write_pgm(a.slices_prefix + "_t" + std::to_string(s) + ".pgm");
    }
  }
  std::printf("sampled %ld points, nfe %ld per sample, mean straightness %.6g\n", n, traj.nfe, mean);
  return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string a;
  std::string b;
  std::string out;
  std::string trajectories;
  std::string density;
  long w2_samples = 1024;
};

// Straightness of each trajectory in a `traj_id,t,x0,...` CSV.
std::vector<double> trajectory_straightness(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw af::ValidationError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || af::trim(line).substr(0, 9) != "traj_id,t") {
    throw af::ValidationError(path + ": expected header traj_id,t,x0,...");
  }
  std::vector<double> out;
  af::TrajectoryLog cur;
  long cur_id = -1;
  const auto flush = [&] {
    if (cur_id >= 0) out.push_back(af::straightness(cur));
    cur = {};
  };
  while (std::getline(in, line)) {
    if (af::trim(line).empty()) continue;
    const auto f = af::split(af::trim(line), ',');
    af::require(f.size() >= 3, path + ": trajectory row needs at least one coordinate");
    const long id = af::parse_int<long>(f[0], "traj_id");
    if (id != cur_id) {
      flush();
      cur_id = id;
    }
    cur.times.push_back(af::parse_double(f[1], "t"));
    Eigen::VectorXd x(static_cast<af::Index>(f.size() - 2));
    for (std::size_t k = 2; k < f.size(); ++k) x[static_cast<af::Index>(k - 2)] = af::parse_double(f[k], "coordinate");
    cur.states.push_back(std::move(x));
  }
  flush();
  return out;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::size_t>(std::lround(q * static_cast<double>(v.size() - 1)));
  return v[k];
}

int run_eval(const EvalArgs& e) {
  af::require(e.w2_samples >= 1 && e.w2_samples <= af::kMaxW2Samples, "--w2-samples must be in [1, 2048]");
  const auto a = af::read_point_file(e.a);
  std::ostringstream summary;
  summary << "metric,value\n";
  summary << "count_a," << a.size() << '\n';
  if (!e.b.empty()) {
    const auto b = af::read_point_file(e.b);
    af::require(a.dim() == b.dim(), "sample sets differ in dimension");
    const af::Index n = std::min<af::Index>({a.size(), b.size(), e.w2_samples});
    const double w2 = af::empirical_w2(a.points.leftCols(n), b.points.leftCols(n));
    summary << "count_b," << b.size() << '\n';
    summary << "w2_samples," << n << '\n';
    summary << "w2," << af::format_double(w2) << '\n';
  }
  if (!e.trajectories.empty()) {
    const auto s = trajectory_straightness(e.trajectories);
    af::require(!s.empty(), "trajectory file holds no trajectories");
    double mean = 0.0;
    for (const double v : s) mean += v;
    mean /= static_cast<double>(s.size());
    summary << "trajectories," << s.size() << '\n';
    summary << "straightness_mean," << af::format_double(mean) << '\n';
    summary << "straightness_median," << af::format_double(quantile(s, 0.5)) << '\n';
    summary << "straightness_p90," << af::format_double(quantile(s, 0.9)) << '\n';
    summary << "straightness_max," << af::format_double(quantile(s, 1.0)) << '\n';
  }
  if (!e.density.empty()) {
    af::require(a.dim() == 2, "density grid needs 2D points");
    af::DensityGrid grid;
    grid.add(a.points);
    grid.write_pgm(e.density);
    summary << "black_mass_fraction," << af::format_double(grid.black_mass_fraction()) << '\n';
  }
  if (e.out.empty()) {
    std::cout << summary.str();
  } else {
    auto out = open_out(e.out);
    out << summary.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-discrete OT noise-data alignment for flow matching"};
  app.require_subcommand(1);

  CheckerboardArgs cb;
  auto* cmd_cb = app.add_subcommand("checkerboard", "sample the 2D checkerboard training set");
  cmd_cb->add_option("--n", cb.n, "number of points")->capture_default_str();
  cmd_cb->add_option("--seed", cb.seed, "sampling seed")->capture_default_str();
  cmd_cb->add_option("--out", cb.out, "output point file")->required();

  SdotArgs sd;
  auto* cmd_sd = app.add_subcommand("sdot", "solve the dual weights, one problem per class");
  add_config_flags(cmd_sd, sd.config);
  cmd_sd->add_option("--data", sd.data, "point file (overrides data.points)");
  cmd_sd->add_option("--out", sd.out, "output dual-weight file")->required();
  cmd_sd->add_option("--metrics", sd.metrics, "metrics history CSV");
  cmd_sd->add_option("--threshold", sd.threshold, "fail unless the final MRE estimate is below this");
  cmd_sd->add_option("--seed", sd.seed, "noise seed (overrides sdot.seed)");

  PairsArgs pa;
  auto* cmd_pa = app.add_subcommand("pairs", "generate and rebalance noise-data pairs");
  add_config_flags(cmd_pa, pa.config);
  cmd_pa->add_option("--data", pa.data, "point file (overrides data.points)");
  cmd_pa->add_option("--duals", pa.duals, "dual-weight file from `sdot`")->required();
  cmd_pa->add_option("--out", pa.out, "output pair file")->required();
  cmd_pa->add_option("--count", pa.count, "number of pairs (default train.steps * train.batch_size)");
  cmd_pa->add_option("--seed", pa.seed, "pair stream seed (overrides pairs.seed)");
  cmd_pa->add_option("--rebalance", pa.rebalance, "true or false (overrides pairs.rebalance)");

  TrainArgs tr;
  auto* cmd_tr = app.add_subcommand("train", "train the velocity network");
  add_config_flags(cmd_tr, tr.config);
  cmd_tr->add_option("--data", tr.data, "point file (overrides data.points)");
  cmd_tr->add_option("--pairs", tr.pairs, "pair file (alignflow coupling)");
  cmd_tr->add_option("--out", tr.out, "output checkpoint")->required();
  cmd_tr->add_option("--loss-csv", tr.loss_csv, "loss history CSV");
  cmd_tr->add_option("--steps", tr.steps, "training steps (overrides train.steps)");
  cmd_tr->add_option("--seed", tr.seed, "training seed (overrides train.seed)");
  cmd_tr->add_option("--coupling", tr.coupling, "independent or alignflow (overrides train.coupling)");

  SampleArgs sa;
  auto* cmd_sa = app.add_subcommand("sample", "integrate the learned field from seeded noise");
  add_config_flags(cmd_sa, sa.config);
  cmd_sa->add_option("--model", sa.model, "checkpoint from `train`")->required();
  cmd_sa->add_option("--out", sa.out, "output point file of final states")->required();
  cmd_sa->add_option("--count", sa.count, "number of samples (overrides sample.count)");
  cmd_sa->add_option("--steps", sa.steps, "integration steps (overrides sample.steps)");
  cmd_sa->add_option("--seed", sa.seed, "noise seed (overrides sample.seed)");
  cmd_sa->add_option("--scheme", sa.scheme, "euler, midpoint or rk4 (overrides sample.scheme)");
  cmd_sa->add_option("--policy", sa.policy, "extra input: none, shortcut or meanflow");
  cmd_sa->add_option("--trajectories", sa.trajectories, "trajectory CSV");
  cmd_sa->add_option("--metrics", sa.metrics, "summary CSV");
  cmd_sa->add_option("--slices-prefix", sa.slices_prefix, "write density PGMs at 10 time slices");

  EvalArgs ev;
  auto* cmd_ev = app.add_subcommand("eval", "compare sample sets and summarize trajectories");
  cmd_ev->add_option("--a", ev.a, "point file")->required();
  cmd_ev->add_option("--b", ev.b, "reference point file for W2");
  cmd_ev->add_option("--w2-samples", ev.w2_samples, "leading points of each file used for W2")->capture_default_str();
  cmd_ev->add_option("--trajectories", ev.trajectories, "trajectory CSV from `sample`");
  cmd_ev->add_option("--density", ev.density, "PGM density image of --a");
  cmd_ev->add_option("--out", ev.out, "summary CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*cmd_cb) return run_checkerboard(cb);
    if (*cmd_sd) return run_sdot(sd);
    if (*cmd_pa) return run_pairs(pa);
    if (*cmd_tr) return run_train(tr);
    if (*cmd_sa) return run_sample(sa);
    if (*cmd_ev) return run_eval(ev);
  } catch (const af::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const af::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
  return kExitValidation;
}
