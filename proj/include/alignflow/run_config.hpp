#ifndef ALIGNFLOW_RUN_CONFIG_HPP
#define ALIGNFLOW_RUN_CONFIG_HPP

// Plain-text run configuration: one `key = value` per line, `#` starts a
// comment. Every key has a default; unknown keys are rejected. echo() prints
// every key in table order and parse(echo()) reproduces the same config.

#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "flow.hpp"
#include "sampler.hpp"
#include "sdot.hpp"
#include "text.hpp"

namespace alignflow {

struct PairSettings {
  std::uint64_t count = 0;  // 0: K * B of the training config
  std::uint64_t seed = 0;
  bool rebalance = true;
};

struct SampleSettings {
  Scheme scheme = Scheme::Euler;
  long steps = 100;
  long count = 512;
  std::uint64_t seed = 1;
};

struct RunConfig {
  std::string data_points = "data.txt";
  std::string out_dir = ".";
  SdotConfig sdot = default_sdot();
  double mre_threshold = 0.2;
  PairSettings pairs;
  TrainConfig train;
  SampleSettings sample;

  // A soft coarse stage, then hard stages with a decaying rate. Pairs use hard
  // cells, and g jitters by about lr per step, so the last rate has to be small
  // before g_ema balances those cells (hard MRE ~0.05 on a 1024-point 2D
  // checkerboard).
  static SdotConfig default_sdot() {
    SdotConfig cfg;
    cfg.stages = {{1000, 0.1, 4096, 0.99, 0.01},
                  {1000, 0.01, 4096, 0.99, 0.0},
                  {1000, 0.002, 4096, 0.999, 0.0},
                  {2000, 0.0005, 4096, 0.999, 0.0}};
    return cfg;
  }

  struct Key {
    std::string name;
    std::string doc;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
  };

  static const std::vector<Key>& keys();

  void set(std::string_view key, std::string_view value) {
    for (const auto& k : keys()) {
      if (k.name == key) {
        k.set(*this, trim(value));
        return;
      }
    }
    throw ValidationError("unknown config key \"" + std::string(key) + "\"");
  }

  std::string get(std::string_view key) const {
    for (const auto& k : keys()) {
      if (k.name == key) return k.get(*this);
    }
    throw ValidationError("unknown config key \"" + std::string(key) + "\"");
  }

  /// Applies a `key=value` override.
  void apply(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("expected key=value, got \"" + std::string(assignment) + "\"");
    }
    set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
  }

  std::string echo() const {
    std::ostringstream out;
    for (const auto& k : keys()) out << k.name << " = " << k.get(*this) << '\n';
    return out.str();
  }

  static RunConfig parse(std::istream& in, const std::string& name = "config") {
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      const auto body = trim(std::string_view(line).substr(0, hash));
      if (body.empty()) continue;
      try {
        cfg.apply(body);
      } catch (const ValidationError& e) {
        throw ValidationError(name + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return cfg;
  }

  static RunConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path);
    return parse(in, path);
  }

  void validate() const {
    sdot.validate();
    train.validate();
    require(mre_threshold >= 0.0, "sdot.mre_threshold must be >= 0");
    require(sample.steps >= 1, "sample.steps must be >= 1");
    require(sample.count >= 1, "sample.count must be >= 1");
  }
};

namespace detail {

inline bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("expected true or false, got \"" + std::string(v) + "\"");
}

inline std::string format_stages(const std::vector<SdotStage>& stages) {
  std::string out;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    if (s) out += ';';
    out += std::to_string(st.num_steps) + ':' + format_double(st.learning_rate) + ':' +
           std::to_string(st.batch_size) + ':' + format_double(st.ema_beta) + ':' +
           format_double(st.entropic_eps);
  }
  return out;
}

/// "steps:lr:batch:beta:eps;..." stage list.
inline std::vector<SdotStage> parse_stages(std::string_view text) {
  std::vector<SdotStage> stages;
  for (const auto part : split(text, ';')) {
    const auto item = trim(part);
    if (item.empty()) continue;
    const auto f = split(item, ':');
    if (f.size() != 5) throw ValidationError("sdot stage \"" + std::string(item) + "\" needs steps:lr:batch:beta:eps");
    stages.push_back({parse_int<long>(trim(f[0]), "stage steps"), parse_double(trim(f[1]), "stage lr"),
                      parse_int<long>(trim(f[2]), "stage batch"), parse_double(trim(f[3]), "stage beta"),
                      parse_double(trim(f[4]), "stage eps")});
  }
  if (stages.empty()) throw ValidationError("sdot.stages is empty");
  return stages;
}

template <typename T, typename Fmt>
std::string join(const std::vector<T>& v, Fmt fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt(v[i]);
  }
  return out;
}

}  // namespace detail

inline const std::vector<RunConfig::Key>& RunConfig::keys() {
  using detail::parse_bool;
  const auto dbl = [](double v) { return format_double(v); };
  const auto num = [](auto v) { return std::to_string(v); };
  static const std::vector<Key> table = {
      {"data.points", "training point file", [](const RunConfig& c) { return c.data_points; },
       [](RunConfig& c, std::string_view v) { c.data_points = std::string(v); }},
      {"out.dir", "directory for outputs", [](const RunConfig& c) { return c.out_dir; },
       [](RunConfig& c, std::string_view v) { c.out_dir = std::string(v); }},
      {"sdot.stages", "steps:lr:batch:beta:eps per stage, ';'-separated",
       [](const RunConfig& c) { return detail::format_stages(c.sdot.stages); },
       [](RunConfig& c, std::string_view v) { c.sdot.stages = detail::parse_stages(v); }},
      {"sdot.adam_beta1", "Adam first-moment decay", [dbl](const RunConfig& c) { return dbl(c.sdot.adam.beta1); },
       [](RunConfig& c, std::string_view v) { c.sdot.adam.beta1 = parse_double(v, "sdot.adam_beta1"); }},
      {"sdot.adam_beta2", "Adam second-moment decay", [dbl](const RunConfig& c) { return dbl(c.sdot.adam.beta2); },
       [](RunConfig& c, std::string_view v) { c.sdot.adam.beta2 = parse_double(v, "sdot.adam_beta2"); }},
      {"sdot.adam_eps", "Adam denominator epsilon", [dbl](const RunConfig& c) { return dbl(c.sdot.adam.eps); },
       [](RunConfig& c, std::string_view v) { c.sdot.adam.eps = parse_double(v, "sdot.adam_eps"); }},
      {"sdot.seed", "noise stream seed for the dual solve", [num](const RunConfig& c) { return num(c.sdot.master_seed); },
       [](RunConfig& c, std::string_view v) { c.sdot.master_seed = parse_int<std::uint64_t>(v, "sdot.seed"); }},
      {"sdot.mre_threshold", "fail the solve if the final MRE estimate is at or above this",
       [dbl](const RunConfig& c) { return dbl(c.mre_threshold); },
       [](RunConfig& c, std::string_view v) { c.mre_threshold = parse_double(v, "sdot.mre_threshold"); }},
      {"pairs.count", "pairs to generate (0 = train.steps * train.batch_size)",
       [num](const RunConfig& c) { return num(c.pairs.count); },
       [](RunConfig& c, std::string_view v) { c.pairs.count = parse_int<std::uint64_t>(v, "pairs.count"); }},
      {"pairs.seed", "master seed of the pair stream", [num](const RunConfig& c) { return num(c.pairs.seed); },
       [](RunConfig& c, std::string_view v) { c.pairs.seed = parse_int<std::uint64_t>(v, "pairs.seed"); }},
      {"pairs.rebalance", "equalize data-index frequencies", [](const RunConfig& c) { return std::string(c.pairs.rebalance ? "true" : "false"); },
       [](RunConfig& c, std::string_view v) { c.pairs.rebalance = parse_bool(v); }},
      {"train.batch_size", "samples per step", [num](const RunConfig& c) { return num(c.train.batch_size); },
       [](RunConfig& c, std::string_view v) { c.train.batch_size = parse_int<long>(v, "train.batch_size"); }},
      {"train.steps", "optimizer steps", [num](const RunConfig& c) { return num(c.train.num_steps); },
       [](RunConfig& c, std::string_view v) { c.train.num_steps = parse_int<long>(v, "train.steps"); }},
      {"train.lr", "Adam learning rate", [dbl](const RunConfig& c) { return dbl(c.train.learning_rate); },
       [](RunConfig& c, std::string_view v) { c.train.learning_rate = parse_double(v, "train.lr"); }},
      {"train.loss_p", "loss exponent p", [dbl](const RunConfig& c) { return dbl(c.train.loss_p); },
       [](RunConfig& c, std::string_view v) { c.train.loss_p = parse_double(v, "train.loss_p"); }},
      {"train.coupling", "independent | alignflow", [](const RunConfig& c) { return to_string(c.train.coupling); },
       [](RunConfig& c, std::string_view v) { c.train.coupling = coupling_from_string(std::string(v)); }},
      {"train.target", "vanilla | shortcut | meanflow", [](const RunConfig& c) { return to_string(c.train.target); },
       [](RunConfig& c, std::string_view v) { c.train.target = target_from_string(std::string(v)); }},
      {"train.kappa", "flow-matching slots per shortcut batch", [num](const RunConfig& c) { return num(c.train.shortcut_kappa); },
       [](RunConfig& c, std::string_view v) { c.train.shortcut_kappa = parse_int<long>(v, "train.kappa"); }},
      {"train.shortcut_steps", "candidate shortcut step sizes", [dbl](const RunConfig& c) { return detail::join(c.train.shortcut_steps, dbl); },
       [](RunConfig& c, std::string_view v) {
         c.train.shortcut_steps.clear();
         for (const auto f : split(v, ',')) c.train.shortcut_steps.push_back(parse_double(trim(f), "train.shortcut_steps"));
       }},
      {"train.meanflow_equal_prob", "probability that r = t", [dbl](const RunConfig& c) { return dbl(c.train.meanflow_equal_prob); },
       [](RunConfig& c, std::string_view v) { c.train.meanflow_equal_prob = parse_double(v, "train.meanflow_equal_prob"); }},
      {"train.hidden", "hidden layer widths", [num](const RunConfig& c) { return detail::join(c.train.hidden, num); },
       [](RunConfig& c, std::string_view v) {
         c.train.hidden.clear();
         for (const auto f : split(v, ',')) {
           if (!trim(f).empty()) c.train.hidden.push_back(parse_int<Index>(trim(f), "train.hidden"));
         }
       }},
      {"train.embed_width", "sinusoidal embedding width per scalar", [num](const RunConfig& c) { return num(c.train.embed_width); },
       [](RunConfig& c, std::string_view v) { c.train.embed_width = parse_int<Index>(v, "train.embed_width"); }},
      {"train.activation", "tanh | silu", [](const RunConfig& c) { return to_string(c.train.activation); },
       [](RunConfig& c, std::string_view v) { c.train.activation = activation_from_string(std::string(v)); }},
      {"train.seed", "initialization and batch seed", [num](const RunConfig& c) { return num(c.train.master_seed); },
       [](RunConfig& c, std::string_view v) { c.train.master_seed = parse_int<std::uint64_t>(v, "train.seed"); }},
      {"sample.scheme", "euler | midpoint | rk4", [](const RunConfig& c) { return to_string(c.sample.scheme); },
       [](RunConfig& c, std::string_view v) { c.sample.scheme = scheme_from_string(std::string(v)); }},
      {"sample.steps", "integration steps", [num](const RunConfig& c) { return num(c.sample.steps); },
       [](RunConfig& c, std::string_view v) { c.sample.steps = parse_int<long>(v, "sample.steps"); }},
      {"sample.count", "trajectories to sample", [num](const RunConfig& c) { return num(c.sample.count); },
       [](RunConfig& c, std::string_view v) { c.sample.count = parse_int<long>(v, "sample.count"); }},
      {"sample.seed", "noise seed for sampling", [num](const RunConfig& c) { return num(c.sample.seed); },
       [](RunConfig& c, std::string_view v) { c.sample.seed = parse_int<std::uint64_t>(v, "sample.seed"); }},
  };
  return table;
}

}  // namespace alignflow

#endif  // ALIGNFLOW_RUN_CONFIG_HPP
