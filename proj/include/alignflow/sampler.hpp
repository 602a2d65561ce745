#ifndef ALIGNFLOW_SAMPLER_HPP
#define ALIGNFLOW_SAMPLER_HPP

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "error.hpp"
#include "nn.hpp"

namespace alignflow {

using Eigen::Index;

enum class Scheme { Euler, Midpoint, RK4 };

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::Euler: return "euler";
    case Scheme::Midpoint: return "midpoint";
    case Scheme::RK4: return "rk4";
  }
  return "euler";
}

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "euler") return Scheme::Euler;
  if (s == "midpoint") return Scheme::Midpoint;
  if (s == "rk4") return Scheme::RK4;
  throw ValidationError("unknown integration scheme \"" + s + "\" (expected euler, midpoint or rk4)");
}

constexpr long evals_per_step(Scheme s) {
  return s == Scheme::Euler ? 1 : s == Scheme::Midpoint ? 2 : 4;
}

/// States at the uniform grid t_k = k / steps. `nfe` counts field
/// evaluations per trajectory.
template <typename State>
struct Trajectory {
  std::vector<double> times;
  std::vector<State> states;
  long nfe = 0;
};

using TrajectoryLog = Trajectory<Eigen::VectorXd>;

namespace detail {

inline bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }
inline bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace detail

/// Fixed-step integration of dx/dt = field(x, t, h) from t = 0 to 1. The
/// step size h is passed so step-aware networks can condition on it.
template <typename State, typename Field>
Trajectory<State> integrate(Field&& field, State x0, Scheme scheme, long steps) {
  require(steps >= 1, "integrate needs at least one step");
  const double h = 1.0 / static_cast<double>(steps);
  Trajectory<State> traj;
  traj.times.reserve(static_cast<std::size_t>(steps) + 1);
  traj.states.reserve(static_cast<std::size_t>(steps) + 1);
  traj.times.push_back(0.0);
  traj.states.push_back(x0);
  State x = std::move(x0);
  for (long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(steps);
    switch (scheme) {
      case Scheme::Euler:
        x = x + h * field(x, t, h);
        break;
      case Scheme::Midpoint: {
        const State k1 = field(x, t, h);
        const State mid = x + (0.5 * h) * k1;
        x = x + h * field(mid, t + 0.5 * h, h);
        break;
      }
      case Scheme::RK4: {
        const State k1 = field(x, t, h);
        const State k2 = field(State(x + (0.5 * h) * k1), t + 0.5 * h, h);
        const State k3 = field(State(x + (0.5 * h) * k2), t + 0.5 * h, h);
        const State k4 = field(State(x + h * k3), t + h, h);
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        break;
      }
    }
    if (!detail::all_finite(x)) {
      throw NumericError("non-finite state after integration step " + std::to_string(k));
    }
    traj.times.push_back(static_cast<double>(k + 1) / static_cast<double>(steps));
    traj.states.push_back(x);
  }
  traj.nfe = steps * evals_per_step(scheme);
  return traj;
}

/// How the sampler fills a network's extra input.
enum class ExtraPolicy {
  None,            // plain u(x, t)
  ShortcutStep,    // extra = step size h
  MeanFlowWindow,  // extra = window end t + h (average velocity over the step)
};

inline std::string to_string(ExtraPolicy p) {
  switch (p) {
    case ExtraPolicy::None: return "none";
    case ExtraPolicy::ShortcutStep: return "shortcut";
    case ExtraPolicy::MeanFlowWindow: return "meanflow";
  }
  return "none";
}

/// Batched velocity field backed by an MLP; states are dim x n.
inline auto mlp_field(const MlpParams& params, ExtraPolicy policy) {
  require((policy == ExtraPolicy::None) == (params.layout.num_extra == 0),
          "extra-input policy does not match the network's inputs");
  return [&params, policy](const Eigen::MatrixXd& x, double t, double h) -> Eigen::MatrixXd {
    MlpInput in;
    in.x = x;
    in.t = Eigen::VectorXd::Constant(x.cols(), t);
    if (policy == ExtraPolicy::ShortcutStep) in.extra = Eigen::MatrixXd::Constant(1, x.cols(), h);
    if (policy == ExtraPolicy::MeanFlowWindow) {
      in.extra = Eigen::MatrixXd::Constant(1, x.cols(), std::min(1.0, t + h));
    }
    return forward(params, in);
  };
}

/// Trajectory j of a batched integration.
inline TrajectoryLog column_log(const Trajectory<Eigen::MatrixXd>& batch, Index j) {
  TrajectoryLog log;
  log.times = batch.times;
  log.nfe = batch.nfe;
  log.states.reserve(batch.states.size());
  for (const auto& s : batch.states) log.states.push_back(s.col(j));
  return log;
}

/// Mean distance of interior logged states from the chord between the
/// endpoints. Logs with fewer than three points give 0 and set `degenerate`.
inline double straightness(const TrajectoryLog& traj, bool* degenerate = nullptr) {
  require(traj.times.size() == traj.states.size(), "trajectory times and states differ in length");
  for (std::size_t k = 1; k < traj.times.size(); ++k) {
    require(traj.times[k - 1] < traj.times[k], "trajectory times must be strictly increasing");
  }
  if (degenerate) *degenerate = traj.states.size() < 3;
  if (traj.states.size() < 3) return 0.0;
  const double t0 = traj.times.front();
  const double span = traj.times.back() - t0;
  const auto& a = traj.states.front();
  const auto& b = traj.states.back();
  double total = 0.0;
  for (std::size_t k = 1; k + 1 < traj.states.size(); ++k) {
    const double s = (traj.times[k] - t0) / span;
    total += (traj.states[k] - ((1.0 - s) * a + s * b)).norm();
  }
  return total / static_cast<double>(traj.states.size() - 2);
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with row/column potentials, O(n^3)). Returns the column of each row.
inline std::vector<Index> solve_assignment(const Eigen::MatrixXd& cost_in) {
  require(cost_in.rows() == cost_in.cols(), "assignment needs a square cost matrix");
  const Index n = cost_in.rows();
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cost = cost_in;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<Index> row_of(static_cast<std::size_t>(n) + 1, 0), way(static_cast<std::size_t>(n) + 1, 0);
  std::vector<double> minv(static_cast<std::size_t>(n) + 1);
  std::vector<char> used(static_cast<std::size_t>(n) + 1);
  for (Index i = 1; i <= n; ++i) {
    row_of[0] = i;
    Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const Index i0 = row_of[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of[j0] != 0);
    do {
      const Index j1 = way[j0];
      row_of[j0] = row_of[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> assignment(static_cast<std::size_t>(n));
  for (Index j = 1; j <= n; ++j) assignment[static_cast<std::size_t>(row_of[j] - 1)] = j - 1;
  return assignment;
}

inline constexpr Index kMaxW2Samples = 2048;

/// Exact W2 between two equal-size empirical measures (columns).
inline double empirical_w2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.cols() == b.cols(), "empirical_w2 needs equal sample counts (" + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.cols()) + ")");
  require(a.rows() == b.rows(), "empirical_w2 needs equal dimensions");
  require(a.cols() <= kMaxW2Samples, "empirical_w2 supports at most 2048 samples");
  const Index n = a.cols();
  if (n == 0) return 0.0;
  Eigen::MatrixXd cost(n, n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) cost(i, j) = (a.col(i) - b.col(j)).squaredNorm();
  }
  const auto assignment = solve_assignment(cost);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) total += cost(i, assignment[static_cast<std::size_t>(i)]);
  return std::sqrt(total / static_cast<double>(n));
}

}  // namespace alignflow

#endif  // ALIGNFLOW_SAMPLER_HPP
