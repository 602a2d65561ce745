#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include <alignflow/sampler.hpp>

#include "oracles.hpp"

namespace af = alignflow;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const auto decay = [](const VectorXd& x, double, double) -> VectorXd { return -x; };

double endpoint_error(af::Scheme s, long steps) {
  const auto traj = af::integrate(decay, VectorXd(VectorXd::Constant(1, 1.0)), s, steps);
  return std::abs(traj.states.back()[0] - std::exp(-1.0));
}

MatrixXd gaussian_cloud(std::uint64_t seed, Eigen::Index dim, Eigen::Index n) {
  af::SplitMix64 rng(seed);
  MatrixXd m(dim, n);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST(Integrate, ConstantFieldIsExactForEveryScheme) {
  const auto field = [](const VectorXd& x, double, double) -> VectorXd { return VectorXd::Constant(x.size(), 2.0); };
  for (const auto s : {af::Scheme::Euler, af::Scheme::Midpoint, af::Scheme::RK4}) {
    const auto traj = af::integrate(field, VectorXd(VectorXd::Zero(2)), s, 7);
    EXPECT_LT((traj.states.back() - VectorXd::Constant(2, 2.0)).cwiseAbs().maxCoeff(), 1e-14);
    ASSERT_EQ(traj.times.size(), 8u);
    EXPECT_EQ(traj.times.front(), 0.0);
    EXPECT_EQ(traj.times.back(), 1.0);
    EXPECT_EQ(traj.nfe, 7 * af::evals_per_step(s));
  }
}

TEST(Integrate, EulerDecayAtThousandSteps) {
  // (1 - 1/1000)^1000 is the exact Euler iterate.
  EXPECT_NEAR(af::integrate(decay, VectorXd(VectorXd::Constant(1, 1.0)), af::Scheme::Euler, 1000).states.back()[0],
              std::pow(1.0 - 1e-3, 1000), 1e-12);
  EXPECT_LT(endpoint_error(af::Scheme::Euler, 1000), 2e-4);
}

TEST(Integrate, SingleStepCostsOneEvaluationPerStage) {
  int calls = 0;
  const auto field = [&](const VectorXd& x, double, double) -> VectorXd {
    ++calls;
    return x;
  };
  EXPECT_EQ(af::integrate(field, VectorXd(VectorXd::Ones(1)), af::Scheme::Euler, 1).nfe, 1);
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(af::integrate(field, VectorXd(VectorXd::Ones(1)), af::Scheme::RK4, 1).nfe, 4);
  EXPECT_EQ(calls, 5);
  EXPECT_EQ(af::integrate(field, VectorXd(VectorXd::Ones(1)), af::Scheme::RK4, 10).nfe, 40);
}

TEST(Integrate, ConvergenceOrders) {
  // Halving h divides the error by 2^order.
  const struct {
    af::Scheme s;
    double ratio;
  } cases[] = {{af::Scheme::Euler, 2.0}, {af::Scheme::Midpoint, 4.0}, {af::Scheme::RK4, 16.0}};
  for (const auto& c : cases) {
    const double r = endpoint_error(c.s, 20) / endpoint_error(c.s, 40);
    EXPECT_NEAR(r / c.ratio, 1.0, 0.2) << af::to_string(c.s);
  }
}

TEST(Integrate, StepSizeAndTimesReachTheField) {
  std::vector<double> ts, hs;
  const auto field = [&](const VectorXd& x, double t, double h) -> VectorXd {
    ts.push_back(t);
    hs.push_back(h);
    return VectorXd::Zero(x.size());
  };
  af::integrate(field, VectorXd(VectorXd::Zero(1)), af::Scheme::Midpoint, 4);
  EXPECT_EQ(ts, (std::vector<double>{0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875}));
  for (const double h : hs) EXPECT_EQ(h, 0.25);
}

TEST(Integrate, NonFiniteStateAborts) {
  const auto field = [](const VectorXd& x, double, double) -> VectorXd {
    return VectorXd::Constant(x.size(), std::numeric_limits<double>::infinity());
  };
  EXPECT_THROW(af::integrate(field, VectorXd(VectorXd::Zero(1)), af::Scheme::Euler, 3), af::NumericError);
  EXPECT_THROW(af::integrate(decay, VectorXd(VectorXd::Zero(1)), af::Scheme::Euler, 0), af::ValidationError);
}

TEST(Integrate, BatchedMatchesPerColumn) {
  const auto p = af::MlpParams::init({2, 8, 0}, {16}, af::Activation::Tanh, 3);
  const auto field = af::mlp_field(p, af::ExtraPolicy::None);
  const MatrixXd x0 = gaussian_cloud(4, 2, 5);
  const auto batch = af::integrate(field, x0, af::Scheme::RK4, 6);
  for (Eigen::Index j = 0; j < 5; ++j) {
    const auto single = af::integrate(field, MatrixXd(x0.col(j)), af::Scheme::RK4, 6);
    const auto log = af::column_log(batch, j);
    EXPECT_LT((log.states.back() - single.states.back().col(0)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MlpField, PolicyMustMatchInputs) {
  const auto plain = af::MlpParams::init({2, 8, 0}, {8}, af::Activation::Tanh, 1);
  const auto step = af::MlpParams::init({2, 8, 1}, {8}, af::Activation::Tanh, 1);
  EXPECT_THROW(af::mlp_field(plain, af::ExtraPolicy::ShortcutStep), af::ValidationError);
  EXPECT_THROW(af::mlp_field(step, af::ExtraPolicy::None), af::ValidationError);
  const auto f = af::mlp_field(step, af::ExtraPolicy::MeanFlowWindow);
  const MatrixXd x = MatrixXd::Ones(2, 1);
  const MatrixXd want = af::forward(step, af::MlpInput{x, VectorXd::Constant(1, 0.5), MatrixXd::Constant(1, 1, 0.75)});
  EXPECT_EQ(f(x, 0.5, 0.25), want);
}

TEST(Straightness, LineIsZero) {
  const auto traj = af::integrate([](const VectorXd&, double, double) -> VectorXd { return Eigen::Vector2d(1.0, 2.0); },
                                  VectorXd(VectorXd::Zero(2)), af::Scheme::Euler, 10);
  EXPECT_LT(af::straightness(traj), 1e-15);
}

TEST(Straightness, SemicircleThroughTheTop) {
  // (-1,0) -> (0,1) -> (1,0): the midpoint sits one unit above the chord.
  af::TrajectoryLog log;
  log.times = {0.0, 0.5, 1.0};
  log.states = {Eigen::Vector2d(-1.0, 0.0), Eigen::Vector2d(0.0, 1.0), Eigen::Vector2d(1.0, 0.0)};
  EXPECT_DOUBLE_EQ(af::straightness(log), 1.0);
}

TEST(Straightness, PlateauOfHeightOne) {
  // Lift every interior point one unit off the chord.
  af::TrajectoryLog log;
  for (int i = 0; i <= 10; ++i) {
    const double s = i / 10.0;
    log.times.push_back(s);
    log.states.push_back(Eigen::Vector2d(s, (i == 0 || i == 10) ? 0.0 : 1.0));
  }
  EXPECT_DOUBLE_EQ(af::straightness(log), 1.0);
}

TEST(Straightness, TranslationInvariantAndDegenerate) {
  af::TrajectoryLog log;
  for (int i = 0; i <= 4; ++i) {
    log.times.push_back(i / 4.0);
    log.states.push_back(Eigen::Vector2d(i * i, std::sin(i)));
  }
  auto shifted = log;
  for (auto& s : shifted.states) s += Eigen::Vector2d(10.0, -3.0);
  EXPECT_NEAR(af::straightness(log), af::straightness(shifted), 1e-12);
  af::TrajectoryLog two;
  two.times = {0.0, 1.0};
  two.states = {VectorXd::Zero(1), VectorXd::Ones(1)};
  bool degenerate = false;
  EXPECT_EQ(af::straightness(two, &degenerate), 0.0);
  EXPECT_TRUE(degenerate);
  two.times = {0.0, 0.0};
  EXPECT_THROW(af::straightness(two), af::ValidationError);
}

TEST(W2, ShiftedCopyIsTheShiftLength) {
  const MatrixXd a = gaussian_cloud(1, 2, 50);
  const MatrixXd b = a.colwise() + Eigen::Vector2d(2.0, 0.0);
  EXPECT_NEAR(af::empirical_w2(a, b), 2.0, 1e-12);
  EXPECT_EQ(af::empirical_w2(a, a), 0.0);
}

TEST(W2, SymmetricAndTriangle) {
  const MatrixXd a = gaussian_cloud(1, 2, 40), b = gaussian_cloud(2, 2, 40), c = gaussian_cloud(3, 2, 40);
  EXPECT_NEAR(af::empirical_w2(a, b), af::empirical_w2(b, a), 1e-12);
  EXPECT_LE(af::empirical_w2(a, c), af::empirical_w2(a, b) + af::empirical_w2(b, c) + 1e-12);
}

TEST(W2, PermutationInvariant) {
  const MatrixXd a = gaussian_cloud(5, 3, 30), b = gaussian_cloud(6, 3, 30);
  MatrixXd shuffled = b;
  for (Eigen::Index j = 0; j < 30; ++j) shuffled.col(j) = b.col((7 * j + 3) % 30);
  EXPECT_NEAR(af::empirical_w2(a, b), af::empirical_w2(a, shuffled), 1e-12);
}

TEST(W2, HungarianMatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(seed % 7);
    const MatrixXd a = gaussian_cloud(100 + seed, 2, n), b = gaussian_cloud(200 + seed, 2, n);
    EXPECT_NEAR(af::empirical_w2(a, b), oracle::w2_brute_force(a, b), 1e-12) << "n=" << n;
  }
}

TEST(W2, RejectsBadShapes) {
  EXPECT_THROW(af::empirical_w2(MatrixXd::Zero(2, 3), MatrixXd::Zero(2, 4)), af::ValidationError);
  EXPECT_THROW(af::empirical_w2(MatrixXd::Zero(2, 3), MatrixXd::Zero(3, 3)), af::ValidationError);
  EXPECT_THROW(af::empirical_w2(MatrixXd::Zero(1, 2049), MatrixXd::Zero(1, 2049)), af::ValidationError);
  EXPECT_EQ(af::empirical_w2(MatrixXd::Zero(2, 0), MatrixXd::Zero(2, 0)), 0.0);
}

TEST(Scheme, NamesRoundTrip) {
  for (const auto s : {af::Scheme::Euler, af::Scheme::Midpoint, af::Scheme::RK4}) {
    EXPECT_EQ(af::scheme_from_string(af::to_string(s)), s);
  }
  EXPECT_THROW(af::scheme_from_string("heun"), af::ValidationError);
}
