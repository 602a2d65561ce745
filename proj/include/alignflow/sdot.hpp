#ifndef ALIGNFLOW_SDOT_HPP
#define ALIGNFLOW_SDOT_HPP

// Semi-discrete optimal transport between a standard-normal noise prior and
// a weighted point cloud. The transport map is encoded by one dual weight per
// data point: noise x goes to argmin_i |x - y_i|^2 - g_i (its Laguerre cell).
// The duals are found by stochastic ascent on the concave dual objective,
// whose gradient is b - (mass of each cell); with entropic smoothing the cell
// indicator becomes a softmax with temperature eps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "binary_io.hpp"
#include "error.hpp"
#include "optim.hpp"
#include "random.hpp"
#include "text.hpp"

namespace alignflow {

using Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Discrete target distribution: columns of `points` with masses `weights`.
/// An empty `class_ids` means every point belongs to class 0.
struct Dataset {
  Mat points;  // d x N
  Vec weights;
  std::vector<std::uint32_t> class_ids;

  Index dim() const noexcept { return points.rows(); }
  Index size() const noexcept { return points.cols(); }

  std::uint32_t class_of(Index i) const {
    return class_ids.empty() ? 0u : class_ids[static_cast<std::size_t>(i)];
  }

  static Dataset uniform(Mat points, std::vector<std::uint32_t> class_ids = {}) {
    Dataset ds;
    const Index n = points.cols();
    ds.points = std::move(points);
    ds.weights = Vec::Constant(n, n > 0 ? 1.0 / static_cast<double>(n) : 0.0);
    ds.class_ids = std::move(class_ids);
    return ds;
  }

  /// Sorted distinct class ids.
  std::vector<std::uint32_t> classes() const {
    std::vector<std::uint32_t> out;
    if (class_ids.empty()) {
      if (size() > 0) out.push_back(0);
      return out;
    }
    out = class_ids;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  std::vector<Index> members(std::uint32_t cls) const {
    std::vector<Index> out;
    for (Index i = 0; i < size(); ++i) {
      if (class_of(i) == cls) out.push_back(i);
    }
    return out;
  }

  /// Sub-dataset of one class with weights renormalized to sum to one.
  Dataset restrict_to(const std::vector<Index>& indices) const {
    Dataset sub;
    sub.points.resize(dim(), static_cast<Index>(indices.size()));
    sub.weights.resize(static_cast<Index>(indices.size()));
    double mass = 0.0;
    for (std::size_t k = 0; k < indices.size(); ++k) {
      sub.points.col(static_cast<Index>(k)) = points.col(indices[k]);
      sub.weights[static_cast<Index>(k)] = weights[indices[k]];
      mass += weights[indices[k]];
    }
    if (mass > 0.0) sub.weights /= mass;
    return sub;
  }

  void validate() const {
    require(size() > 0, "dataset is empty");
    require(dim() >= 1, "dataset dimension must be at least 1");
    require(weights.size() == size(), "dataset has " + std::to_string(size()) + " points but " +
                                          std::to_string(weights.size()) + " weights");
    require(class_ids.empty() || class_ids.size() == static_cast<std::size_t>(size()),
            "class id count does not match point count");
    require(points.allFinite(), "dataset contains non-finite coordinates");
    for (Index i = 0; i < size(); ++i) {
      require(std::isfinite(weights[i]) && weights[i] > 0.0,
              "weight " + std::to_string(i) + " is not strictly positive");
    }
    require(std::abs(weights.sum() - 1.0) <= 1e-12, "dataset weights do not sum to 1");
  }
};

/// Standard normal prior on R^dim; the only supported noise distribution.
struct NoisePrior {
  Index dim = 1;

  Mat sample(SplitMix64& rng, Index count) const {
    Mat out(dim, count);
    for (Index j = 0; j < count; ++j) {
      for (Index k = 0; k < dim; ++k) out(k, j) = rng.normal();
    }
    return out;
  }
};

struct DualWeights {
  Vec g;
  Vec g_ema;

  static DualWeights zeros(Index n) { return {Vec::Zero(n), Vec::Zero(n)}; }
};

struct SdotStage {
  long num_steps = 1000;
  double learning_rate = 1.0;
  long batch_size = 1024;
  double ema_beta = 0.99;
  double entropic_eps = 0.0;
};

struct SdotConfig {
  std::vector<SdotStage> stages;
  AdamConfig adam;
  std::uint64_t master_seed = 0;

  void validate() const {
    require(!stages.empty(), "sdot config has no stages");
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto& st = stages[s];
      const std::string tag = "sdot stage " + std::to_string(s) + ": ";
      require(st.num_steps >= 1, tag + "num_steps must be >= 1");
      require(st.batch_size >= 1, tag + "batch_size must be >= 1");
      require(st.learning_rate > 0.0 && std::isfinite(st.learning_rate),
              tag + "learning_rate must be positive");
      require(st.ema_beta >= 0.0 && st.ema_beta < 1.0, tag + "ema_beta must be in [0, 1)");
      require(st.entropic_eps >= 0.0 && std::isfinite(st.entropic_eps),
              tag + "entropic_eps must be >= 0");
    }
    require(adam.beta1 >= 0.0 && adam.beta1 < 1.0, "adam_beta1 must be in [0, 1)");
    require(adam.beta2 >= 0.0 && adam.beta2 < 1.0, "adam_beta2 must be in [0, 1)");
    require(adam.eps > 0.0, "adam_eps must be positive");
  }

  long total_steps() const {
    long n = 0;
    for (const auto& st : stages) n += st.num_steps;
    return n;
  }
};

/// Three-stage schedule used for CIFAR-10 (unconditional, flip-augmented).
inline SdotConfig cifar10_schedule(std::uint64_t seed = 0) {
  SdotConfig cfg;
  cfg.stages = {{1000, 10.0, 1024, 0.99, 1.0},
                {5000, 0.1, 4096, 0.999, 1.0},
                {5000, 0.1, 16384, 0.999, 0.01}};
  cfg.master_seed = seed;
  return cfg;
}

/// Single-stage schedule used per class on ImageNet256 latents.
inline SdotConfig imagenet_schedule(std::uint64_t seed = 0) {
  SdotConfig cfg;
  cfg.stages = {{3000, 10.0, 4096, 0.99, 0.01}};
  cfg.master_seed = seed;
  return cfg;
}

/// Stochastic estimate of mass - b (sums to zero).
struct GradientEstimate {
  Vec grad;
};

struct MetricsSnapshot {
  long step = 0;
  double mre_est = 0.0;
  double l1_est = 0.0;
  bool warmup = false;
};

struct SdotResult {
  DualWeights duals;
  Vec grad_ema;
  std::vector<MetricsSnapshot> history;

  const MetricsSnapshot& final_metrics() const { return history.back(); }
};

namespace detail {

inline void check_duals(const Dataset& data, const Vec& g) {
  require(data.size() > 0, "dataset is empty");
  require(g.size() == data.size(), "dual vector has length " + std::to_string(g.size()) +
                                       ", dataset has " + std::to_string(data.size()) + " points");
}

inline void check_point(const Dataset& data, Index dim) {
  require(data.size() > 0, "dataset is empty");
  require(dim == data.dim(), "noise dimension " + std::to_string(dim) +
                                 " does not match dataset dimension " + std::to_string(data.dim()));
}

// Shifted costs |x - y_i|^2 - g_i written into `out`.
inline void shifted_costs(const double* x, const Dataset& data, const Vec& g, Vec& out) {
  const Index d = data.dim();
  const Index n = data.size();
  const double* y = data.points.data();
  out.resize(n);
  for (Index i = 0; i < n; ++i) {
    double c = 0.0;
    for (Index k = 0; k < d; ++k) {
      const double diff = x[k] - y[i * d + k];
      c += diff * diff;
    }
    out[i] = c - g[i];
  }
}

inline Index argmin_shifted_cost(const double* x, const Dataset& data, const Vec& g) {
  const Index d = data.dim();
  const Index n = data.size();
  const double* y = data.points.data();
  Index best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) {
    double c = 0.0;
    for (Index k = 0; k < d; ++k) {
      const double diff = x[k] - y[i * d + k];
      c += diff * diff;
    }
    c -= g[i];
    if (c < best_cost) {  // strict: ties keep the smallest index
      best_cost = c;
      best = i;
    }
  }
  return best;
}

// Softmax terms below exp(-50) of the largest (about 2e-22) are dropped;
// they are far below the rounding error of the normalized result.
inline constexpr double kSoftmaxCutoff = 50.0;

// Softmax of -(costs)/eps, in place.
inline void softmax_neg(Vec& costs, double eps) {
  const double lo = costs.minCoeff();
  double z = 0.0;
  for (Index i = 0; i < costs.size(); ++i) {
    const double a = (costs[i] - lo) / eps;
    costs[i] = a < kSoftmaxCutoff ? std::exp(-a) : 0.0;
    z += costs[i];
  }
  costs /= z;
}

}  // namespace detail

/// Index of the Laguerre cell containing x0; ties go to the smallest index.
inline Index hard_assign(const Vec& x0, const Dataset& data, const Vec& g) {
  detail::check_point(data, x0.size());
  detail::check_duals(data, g);
  return detail::argmin_shifted_cost(x0.data(), data, g);
}

/// Entropic (softmax) assignment of x0 over the data points.
inline Vec soft_assign(const Vec& x0, const Dataset& data, const Vec& g, double eps) {
  require(eps > 0.0, "soft_assign needs eps > 0; use hard_assign for eps = 0");
  detail::check_point(data, x0.size());
  detail::check_duals(data, g);
  Vec p;
  detail::shifted_costs(x0.data(), data, g, p);
  detail::softmax_neg(p, eps);
  return p;
}

/// Mean assignment over the batch minus b. One-hot cells when eps == 0.
/// Costs drop the per-sample constant |x|^2, which neither the argmin nor
/// the softmax sees.
inline GradientEstimate gradient_estimate(const Mat& noise, const Dataset& data, const Vec& g,
                                          double eps) {
  detail::check_point(data, noise.rows());
  detail::check_duals(data, g);
  require(noise.cols() >= 1, "gradient_estimate needs a non-empty batch");
  require(eps >= 0.0, "entropic eps must be >= 0");
  const Index n = data.size();
  const Index d = data.dim();
  const Index batch = noise.cols();
  const double* y = data.points.data();
  const Vec base = data.points.colwise().squaredNorm().transpose() - g;
  Vec mass = Vec::Zero(n);
  Vec cost(n);
  std::vector<std::pair<Index, double>> live;
  for (Index j = 0; j < batch; ++j) {
    const double* x = noise.col(j).data();
    Index best = 0;
    double lo = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      double dot = 0.0;
      for (Index k = 0; k < d; ++k) dot += x[k] * y[i * d + k];
      const double c = base[i] - 2.0 * dot;
      cost[i] = c;
      if (c < lo) {
        lo = c;
        best = i;
      }
    }
    if (eps == 0.0) {
      mass[best] += 1.0;
      continue;
    }
    const double limit = lo + detail::kSoftmaxCutoff * eps;
    live.clear();
    double z = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double c = cost[i];
      if (c < limit) {
        const double w = std::exp((lo - c) / eps);
        live.emplace_back(i, w);
        z += w;
      }
    }
    for (const auto& [i, w] : live) mass[i] += w / z;
  }
  mass /= static_cast<double>(batch);
  return {mass - data.weights};
}

/// EMA-based estimates of MRE = max_i |p_i - b_i| / b_i and L1 = sum_i |p_i - b_i|.
inline MetricsSnapshot estimate_metrics(const Vec& grad_ema, const Vec& weights, long step = 0) {
  require(grad_ema.size() == weights.size(), "metric vectors differ in length");
  MetricsSnapshot snap;
  snap.step = step;
  for (Index i = 0; i < weights.size(); ++i) {
    require(weights[i] > 0.0, "weight " + std::to_string(i) + " is zero; relative error undefined");
    snap.mre_est = std::max(snap.mre_est, std::abs(grad_ema[i]) / weights[i]);
    snap.l1_est += std::abs(grad_ema[i]);
  }
  return snap;
}

inline MetricsSnapshot estimate_metrics(const Vec& grad_ema, const Dataset& data, long step = 0) {
  return estimate_metrics(grad_ema, data.weights, step);
}

/// Number of leading steps whose EMA metrics are still dominated by the
/// zero initialization.
inline long warmup_steps(double beta) {
  const double horizon = beta < 1.0 ? std::ceil(1.0 / (1.0 - beta)) : 0.0;
  return std::max(10L, static_cast<long>(horizon));
}

/// Stochastic dual ascent with Adam. Noise is drawn from a SplitMix64
/// stream rooted at config.master_seed, so the run is reproducible bit for
/// bit. Adam moments and EMAs carry over between stages.
inline SdotResult solve_dual(const Dataset& data, const NoisePrior& prior, const SdotConfig& config) {
  data.validate();
  config.validate();
  require(prior.dim == data.dim(), "prior dimension " + std::to_string(prior.dim) +
                                       " does not match dataset dimension " +
                                       std::to_string(data.dim()));
  const Index n = data.size();
  SdotResult result;
  result.duals = DualWeights::zeros(n);
  result.grad_ema = Vec::Zero(n);
  result.history.reserve(static_cast<std::size_t>(config.total_steps()));

  Vec m = Vec::Zero(n);
  Vec v = Vec::Zero(n);
  SplitMix64 rng(config.master_seed);
  const long warmup = warmup_steps(config.stages.front().ema_beta);
  long step = 0;
  for (const auto& stage : config.stages) {
    const double beta = stage.ema_beta;
    for (long k = 0; k < stage.num_steps; ++k, ++step) {
      const Mat noise = prior.sample(rng, stage.batch_size);
      const Vec grad = gradient_estimate(noise, data, result.duals.g, stage.entropic_eps).grad;
      if (!grad.allFinite()) {
        throw NumericError("non-finite dual gradient at step " + std::to_string(step));
      }
      result.grad_ema = beta * result.grad_ema + (1.0 - beta) * grad;
      // Ascent on the dual objective: its gradient is b - mass = -grad.
      const Vec ascent = -grad;
      adam_apply(result.duals.g, ascent, m, v, step + 1, stage.learning_rate, config.adam, +1.0);
      if (!result.duals.g.allFinite()) {
        throw NumericError("non-finite dual weights at step " + std::to_string(step));
      }
      result.duals.g_ema = beta * result.duals.g_ema + (1.0 - beta) * result.duals.g;
      auto snap = estimate_metrics(result.grad_ema, data.weights, step);
      snap.warmup = step < warmup;
      result.history.push_back(snap);
    }
  }
  return result;
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// One Laguerre cell on the real line; empty when lo >= hi.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool empty() const noexcept { return !(lo < hi); }
};

/// Exact 1D Laguerre cells for sorted distinct points. The cost of cell i is
/// the line x -> -2 y_i x + (y_i^2 - g_i); slopes fall with i, so the lower
/// envelope visits cells in index order and cells off the envelope are empty.
/// Adjacent live cells i < j meet at (y_i + y_j)/2 + (g_i - g_j) / (2 (y_j - y_i)).
inline std::vector<Interval> laguerre_cells_1d(const Dataset& data, const Vec& g) {
  require(data.dim() == 1, "exact 1D cells need a 1-dimensional dataset");
  detail::check_duals(data, g);
  const Index n = data.size();
  const auto y = [&](Index i) { return data.points(0, i); };
  for (Index i = 1; i < n; ++i) {
    require(y(i - 1) < y(i), "1D points must be strictly increasing (index " + std::to_string(i) + ")");
  }
  const auto meet = [&](Index a, Index b) {
    return 0.5 * (y(a) + y(b)) + (g[a] - g[b]) / (2.0 * (y(b) - y(a)));
  };
  std::vector<Index> hull;
  for (Index i = 0; i < n; ++i) {
    while (hull.size() >= 2 &&
           meet(hull[hull.size() - 2], i) <= meet(hull[hull.size() - 2], hull.back())) {
      hull.pop_back();
    }
    hull.push_back(i);
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<Interval> cells(static_cast<std::size_t>(n), Interval{0.0, 0.0});
  for (std::size_t k = 0; k < hull.size(); ++k) {
    const double lo = k == 0 ? -inf : meet(hull[k - 1], hull[k]);
    const double hi = k + 1 == hull.size() ? inf : meet(hull[k], hull[k + 1]);
    cells[static_cast<std::size_t>(hull[k])] = {lo, hi};
  }
  return cells;
}

/// Standard-normal mass of each exact 1D Laguerre cell.
inline Vec exact_cell_mass_1d(const Dataset& data, const Vec& g) {
  const auto cells = laguerre_cells_1d(data, g);
  Vec mass = Vec::Zero(data.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].empty()) continue;
    mass[static_cast<Index>(i)] = normal_cdf(cells[i].hi) - normal_cdf(cells[i].lo);
  }
  return mass;
}

// Dual weight file: "ALNW", u16 version, u32 N, N f64 g_ema, N f64 g.
inline constexpr std::uint16_t kDualFileVersion = 1;

inline std::vector<char> encode_duals(const DualWeights& duals) {
  require(duals.g.size() == duals.g_ema.size(), "g and g_ema differ in length");
  ByteWriter w;
  w.magic("ALNW");
  w.u16(kDualFileVersion);
  w.u32(static_cast<std::uint32_t>(duals.g.size()));
  for (Index i = 0; i < duals.g_ema.size(); ++i) w.f64(duals.g_ema[i]);
  for (Index i = 0; i < duals.g.size(); ++i) w.f64(duals.g[i]);
  return w.bytes();
}

inline DualWeights decode_duals(std::vector<char> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic("ALNW");
  const auto version_at = r.offset();
  if (r.u16() != kDualFileVersion) throw FormatError("unsupported dual file version", version_at);
  const std::uint32_t n = r.u32();
  if (r.remaining() != 16ull * n) {
    throw FormatError("dual file payload does not hold 2 x " + std::to_string(n) + " f64 values",
                      r.offset());
  }
  DualWeights duals = DualWeights::zeros(n);
  for (std::uint32_t i = 0; i < n; ++i) duals.g_ema[i] = r.f64();
  for (std::uint32_t i = 0; i < n; ++i) duals.g[i] = r.f64();
  return duals;
}

inline void write_duals(const std::string& path, const DualWeights& duals) {
  write_file(path, encode_duals(duals));
}

inline DualWeights read_duals(const std::string& path) { return decode_duals(read_file(path)); }

inline void write_metrics_csv(std::ostream& out, const std::vector<MetricsSnapshot>& history) {
  out << "step,mre_est,l1_est,warmup\n";
  for (const auto& s : history) {
    out << s.step << ',' << format_double(s.mre_est) << ',' << format_double(s.l1_est) << ','
        << (s.warmup ? 1 : 0) << '\n';
  }
}

}  // namespace alignflow

#endif  // ALIGNFLOW_SDOT_HPP
