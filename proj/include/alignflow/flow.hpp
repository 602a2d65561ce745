#ifndef ALIGNFLOW_FLOW_HPP
#define ALIGNFLOW_FLOW_HPP

// Flow-matching training with pluggable couplings and target fields.
//
// Every random draw is counter based: sample j of the training stream
// (j = step * B + slot) takes its time, extra input, and (in independent
// mode) its noise and data index from derive_seed(master ^ domain, j). Two
// runs with the same seed therefore see the same times and inputs whatever
// the coupling, and training is bitwise reproducible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "error.hpp"
#include "nn.hpp"
#include "pairing.hpp"
#include "random.hpp"
#include "sdot.hpp"
#include "text.hpp"

namespace alignflow {

enum class CouplingMode { Independent, AlignFlow };
enum class TargetField { VanillaFM, Shortcut, MeanFlow };

inline std::string to_string(CouplingMode m) {
  return m == CouplingMode::Independent ? "independent" : "alignflow";
}

inline std::string to_string(TargetField f) {
  switch (f) {
    case TargetField::VanillaFM: return "vanilla";
    case TargetField::Shortcut: return "shortcut";
    case TargetField::MeanFlow: return "meanflow";
  }
  return "vanilla";
}

inline CouplingMode coupling_from_string(const std::string& s) {
  if (s == "independent") return CouplingMode::Independent;
  if (s == "alignflow") return CouplingMode::AlignFlow;
  throw ValidationError("unknown coupling \"" + s + "\" (expected independent or alignflow)");
}

inline TargetField target_from_string(const std::string& s) {
  if (s == "vanilla") return TargetField::VanillaFM;
  if (s == "shortcut") return TargetField::Shortcut;
  if (s == "meanflow") return TargetField::MeanFlow;
  throw ValidationError("unknown target field \"" + s + "\" (expected vanilla, shortcut or meanflow)");
}

struct TrainConfig {
  long batch_size = 256;
  long num_steps = 20000;
  double learning_rate = 1e-3;
  double loss_p = 2.0;
  CouplingMode coupling = CouplingMode::Independent;
  TargetField target = TargetField::VanillaFM;
  long shortcut_kappa = 192;  // leading flow-matching slots per batch
  std::vector<double> shortcut_steps{1.0 / 128, 1.0 / 64, 1.0 / 32, 1.0 / 16};
  double meanflow_equal_prob = 0.75;  // P(r = t)
  std::vector<Index> hidden{128, 128, 128};
  Index embed_width = 16;
  Activation activation = Activation::Tanh;
  AdamConfig adam;
  std::uint64_t master_seed = 0;

  Index num_extra() const { return target == TargetField::VanillaFM ? 0 : 1; }

  void validate() const {
    require(batch_size >= 1, "batch_size must be >= 1");
    require(num_steps >= 0, "num_steps must be >= 0");
    require(learning_rate > 0.0, "learning_rate must be positive");
    require(loss_p >= 1.0, "loss exponent p must be >= 1");
    if (target == TargetField::Shortcut) {
      require(shortcut_kappa >= 0 && shortcut_kappa <= batch_size, "shortcut_kappa must lie in [0, B]");
    }
    require(!shortcut_steps.empty(), "shortcut step set is empty");
    for (const double d : shortcut_steps) require(d > 0.0 && d <= 1.0, "shortcut steps must lie in (0, 1]");
    require(meanflow_equal_prob >= 0.0 && meanflow_equal_prob <= 1.0,
            "meanflow_equal_prob must lie in [0, 1]");
    require(embed_width >= 0 && embed_width % 2 == 0, "embed_width must be even");
  }

  MlpLayout layout(Index dim) const { return {dim, embed_width, num_extra()}; }
};

/// Everything a training step needs; column j is sample j.
struct TrainingBatch {
  Eigen::MatrixXd x0;
  Eigen::MatrixXd x1;
  Eigen::VectorXd t;
  Eigen::MatrixXd extra;
  Eigen::MatrixXd xt;
  Eigen::MatrixXd target;
};

inline Vec interpolate(const Vec& x0, const Vec& x1, double t) {
  require(x0.size() == x1.size(), "interpolate: endpoint dimensions differ");
  require(t >= 0.0 && t <= 1.0, "interpolate: t = " + format_double(t) + " outside [0, 1]");
  return (1.0 - t) * x0 + t * x1;
}

inline Vec target_vanilla(const Vec& x0, const Vec& x1) {
  require(x0.size() == x1.size(), "target: endpoint dimensions differ");
  return x1 - x0;
}

namespace detail {

// Bootstrap target (s_t + s_{t+d}) / 2 for shortcut slots, columnwise.
inline Eigen::MatrixXd shortcut_bootstrap(const MlpParams& p, const Eigen::MatrixXd& xt,
                                          const Eigen::VectorXd& t, const Eigen::VectorXd& d) {
  MlpInput in{xt, t, d.transpose()};
  const Eigen::MatrixXd s_t = forward(p, in);
  in.x = xt + s_t * d.asDiagonal();
  in.t = t + d;
  const Eigen::MatrixXd s_td = forward(p, in);
  return 0.5 * (s_t + s_td);
}

// v - (t - r) * (v . d_x u + d_t u) with v = x1 - x0, columnwise.
inline Eigen::MatrixXd meanflow_target(const MlpParams& p, const Eigen::MatrixXd& xt,
                                       const Eigen::MatrixXd& v, const Eigen::VectorXd& t,
                                       const Eigen::VectorXd& r) {
  const MlpInput in{xt, t, r.transpose()};
  const MlpTangent tan{v, Eigen::VectorXd::Ones(t.size()), Eigen::MatrixXd::Zero(1, t.size())};
  const Eigen::MatrixXd du = jvp(p, in, tan);
  return v - du * (t - r).asDiagonal();
}

}  // namespace detail

/// Shortcut-model target. Flow-matching slots regress on x1 - x0; the rest
/// on the two-step self-consistency average, evaluated with the current
/// parameters and treated as a constant by the optimizer.
inline Vec target_shortcut(const MlpParams& p, const Vec& x0, const Vec& x1, double t, double d_step,
                           bool flow_matching_slot) {
  if (flow_matching_slot) return target_vanilla(x0, x1);
  require(t + d_step <= 1.0, "shortcut target needs t + d <= 1");
  require(p.layout.num_extra == 1, "shortcut network must take one extra input (step size)");
  const Vec xt = interpolate(x0, x1, t);
  return detail::shortcut_bootstrap(p, xt, Eigen::VectorXd::Constant(1, t),
                                    Eigen::VectorXd::Constant(1, d_step))
      .col(0);
}

/// Mean-flow target for the window [t, r] (t <= r), anchored at x_t.
/// The network's extra input is the window end r.
inline Vec target_meanflow(const MlpParams& p, const Vec& x0, const Vec& x1, double t, double r) {
  require(0.0 <= t && t <= r && r <= 1.0, "meanflow target needs 0 <= t <= r <= 1");
  require(p.layout.num_extra == 1, "meanflow network must take one extra input (window end)");
  const Vec xt = interpolate(x0, x1, t);
  const Eigen::MatrixXd v = x1 - x0;
  return detail::meanflow_target(p, xt, v, Eigen::VectorXd::Constant(1, t),
                                 Eigen::VectorXd::Constant(1, r))
      .col(0);
}

/// Mean over columns of sum_k |pred - target|^p.
inline double loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target, double p = 2.0) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), "loss: shape mismatch");
  require(pred.cols() >= 1, "loss: empty batch");
  const Eigen::ArrayXXd e = (pred - target).array().abs();
  const double total = p == 2.0 ? e.square().sum() : e.pow(p).sum();
  return total / static_cast<double>(pred.cols());
}

/// d loss / d pred with the targets held fixed.
inline Eigen::MatrixXd loss_gradient(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target,
                                     double p = 2.0) {
  const Eigen::ArrayXXd e = (pred - target).array();
  const double scale = p / static_cast<double>(pred.cols());
  if (p == 2.0) return (scale * e).matrix();
  if (p == 1.0) return (scale * e.sign()).matrix();
  return (scale * e.sign() * e.abs().pow(p - 1.0)).matrix();
}

struct LossAndGrad {
  double loss = 0.0;
  GradBundle grad;
};

/// Loss of u(x_t, t, extra) against the batch's (constant) targets and its
/// parameter gradient.
inline LossAndGrad loss_and_grad(const MlpParams& p, const TrainingBatch& batch, double loss_p) {
  const MlpInput in{batch.xt, batch.t, batch.extra};
  const ForwardPass pass = forward_pass(p, in);
  LossAndGrad out;
  out.loss = loss(pass.output, batch.target, loss_p);
  out.grad = backward(p, in, pass, loss_gradient(pass.output, batch.target, loss_p));
  return out;
}

// Stream domains for counter-based draws.
inline constexpr std::uint64_t kTimeDomain = 0x74696d6500000001ULL;
inline constexpr std::uint64_t kExtraDomain = 0x6578747200000002ULL;
inline constexpr std::uint64_t kNoiseDomain = 0x6e6f697300000003ULL;
inline constexpr std::uint64_t kDataDomain = 0x6461746100000004ULL;
inline constexpr std::uint64_t kInitDomain = 0x696e697400000005ULL;

/// Index drawn from the dataset weights by inverse CDF.
class WeightedIndexSampler {
 public:
  explicit WeightedIndexSampler(const Vec& weights) : cdf_(static_cast<std::size_t>(weights.size())) {
    double acc = 0.0;
    for (Index i = 0; i < weights.size(); ++i) cdf_[static_cast<std::size_t>(i)] = (acc += weights[i]);
  }

  Index operator()(double u) const {
    const double target = u * cdf_.back();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), target);
    return std::min<Index>(static_cast<Index>(it - cdf_.begin()), static_cast<Index>(cdf_.size()) - 1);
  }

 private:
  std::vector<double> cdf_;
};

/// Assembles step `step`'s batch and its stop-gradient targets.
inline TrainingBatch make_batch(const Dataset& data, const TrainConfig& cfg, const MlpParams& p,
                                std::span<const PairRecord> pairs, const WeightedIndexSampler& sampler,
                                long step) {
  const Index d = data.dim();
  const Index b = cfg.batch_size;
  const std::uint64_t seed = cfg.master_seed;
  TrainingBatch batch;
  batch.x0.resize(d, b);
  batch.x1.resize(d, b);
  batch.t.resize(b);
  batch.extra.resize(cfg.num_extra(), b);
  for (Index l = 0; l < b; ++l) {
    const auto j = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(b) +
                   static_cast<std::uint64_t>(l);
    Index index = 0;
    if (cfg.coupling == CouplingMode::AlignFlow) {
      const auto& rec = pairs[j];
      batch.x0.col(l) = noise_from_seed(rec.seed, d);
      index = rec.data_index;
    } else {
      batch.x0.col(l) = noise_from_seed(derive_seed(seed ^ kNoiseDomain, j), d);
      index = sampler(uniform_open(derive_seed(seed ^ kDataDomain, j)));
    }
    batch.x1.col(l) = data.points.col(index);
    double t = uniform_open(derive_seed(seed ^ kTimeDomain, j));
    SplitMix64 extra_rng(derive_seed(seed ^ kExtraDomain, j));
    if (cfg.target == TargetField::Shortcut) {
      const double dstep = cfg.shortcut_steps[extra_rng.below(cfg.shortcut_steps.size())];
      batch.extra(0, l) = std::min(dstep, 1.0 - t);
    } else if (cfg.target == TargetField::MeanFlow) {
      double r = t;
      if (extra_rng.uniform() >= cfg.meanflow_equal_prob) {
        const double other = extra_rng.uniform();
        r = std::max(t, other);
        t = std::min(t, other);
      }
      batch.extra(0, l) = r;
    }
    batch.t[l] = t;
  }
  batch.xt = batch.x0 * (1.0 - batch.t.array()).matrix().asDiagonal();
  batch.xt += batch.x1 * batch.t.asDiagonal();

  const Eigen::MatrixXd v = batch.x1 - batch.x0;
  switch (cfg.target) {
    case TargetField::VanillaFM:
      batch.target = v;
      break;
    case TargetField::Shortcut: {
      batch.target = v;
      const Index kappa = static_cast<Index>(cfg.shortcut_kappa);
      if (kappa < b) {
        const Index rest = b - kappa;
        batch.target.rightCols(rest) = detail::shortcut_bootstrap(
            p, batch.xt.rightCols(rest), batch.t.tail(rest), batch.extra.row(0).tail(rest).transpose());
      }
      break;
    }
    case TargetField::MeanFlow:
      batch.target = detail::meanflow_target(p, batch.xt, v, batch.t, batch.extra.row(0).transpose());
      break;
  }
  return batch;
}

struct LossRecord {
  long step = 0;
  double loss = 0.0;
  double loss_ema = 0.0;
};

struct TrainResult {
  MlpParams params;
  std::vector<LossRecord> history;
};

inline MlpParams initial_params(Index dim, const TrainConfig& cfg) {
  return MlpParams::init(cfg.layout(dim), cfg.hidden, cfg.activation,
                         derive_seed(cfg.master_seed ^ kInitDomain, 0));
}

/// K Adam steps of flow matching. Independent coupling draws noise and data
/// separately; AlignFlow coupling consumes `pairs` in order, B per step.
inline TrainResult train(const Dataset& data, const TrainConfig& cfg,
                         std::span<const PairRecord> pairs = {}) {
  data.validate();
  cfg.validate();
  const auto needed = static_cast<std::uint64_t>(cfg.num_steps) * static_cast<std::uint64_t>(cfg.batch_size);
  if (cfg.coupling == CouplingMode::AlignFlow) {
    if (pairs.size() < needed) {
      throw ValidationError("AlignFlow training needs M = K * B = " + std::to_string(needed) +
                            " pairs, got " + std::to_string(pairs.size()));
    }
    for (std::size_t j = 0; j < needed; ++j) {
      require(pairs[j].data_index < data.size(),
              "pair " + std::to_string(j) + " has data_index outside the dataset");
    }
  }
  TrainResult result;
  result.params = initial_params(data.dim(), cfg);
  MlpAdamState state = MlpAdamState::for_params(result.params, cfg.adam);
  const WeightedIndexSampler sampler(data.weights);
  double ema = 0.0;
  result.history.reserve(static_cast<std::size_t>(cfg.num_steps));
  for (long k = 0; k < cfg.num_steps; ++k) {
    const TrainingBatch batch = make_batch(data, cfg, result.params, pairs, sampler, k);
    const LossAndGrad lg = loss_and_grad(result.params, batch, cfg.loss_p);
    if (!std::isfinite(lg.loss)) throw NumericError("non-finite training loss at step " + std::to_string(k));
    adam_update(result.params, lg.grad, state, cfg.learning_rate);
    ema = k == 0 ? lg.loss : 0.99 * ema + 0.01 * lg.loss;
    result.history.push_back({k, lg.loss, ema});
  }
  return result;
}

inline void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& history) {
  out << "step,loss,loss_ema\n";
  for (const auto& r : history) {
    out << r.step << ',' << format_double(r.loss) << ',' << format_double(r.loss_ema) << '\n';
  }
}

}  // namespace alignflow

#endif  // ALIGNFLOW_FLOW_HPP
