#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include <alignflow/checkerboard.hpp>
#include <alignflow/density.hpp>
#include <alignflow/point_file.hpp>
#include <alignflow/run_config.hpp>

namespace af = alignflow;

TEST(PointFile, RoundTripsBitExactly) {
  Eigen::MatrixXd pts(2, 3);
  pts << 0.1, -1e-300, 1.0 / 3.0, 2.5, 123456789.123456789, -0.0;
  const auto data = af::Dataset::uniform(pts, {4, 4, 9});
  std::stringstream io;
  af::write_point_file(io, data);
  const auto back = af::read_point_file(io);
  ASSERT_EQ(back.size(), 3);
  for (Eigen::Index i = 0; i < pts.size(); ++i) {
    EXPECT_EQ(std::memcmp(&back.points.data()[i], &pts.data()[i], sizeof(double)), 0);
  }
  EXPECT_EQ(back.class_ids, (std::vector<std::uint32_t>{4, 4, 9}));
}

TEST(PointFile, HeaderFormat) {
  Eigen::MatrixXd pts(1, 2);
  pts << 0.5, -2.0;
  std::ostringstream out;
  af::write_point_file(out, af::Dataset::uniform(pts));
  EXPECT_EQ(out.str(), "d=1 n=2 classes=1\n0 0.5\n0 -2\n");
}

TEST(PointFile, RejectsMalformedInput) {
  const char* bad[] = {
      "",
      "d=2 n=1\n0 1\n",
      "d=2 n=2 classes=1\n0 1 2\n",
      "d=2 n=1 classes=1\n0 1\n",
      "d=1 n=1 classes=1 colour=red\n0 1\n",
      "d=1 n=1 classes=1\n0 abc\n",
      "d=1 n=2 classes=1\n0 1\n1 2\n",
  };
  for (const char* text : bad) {
    std::istringstream in(text);
    EXPECT_THROW(af::read_point_file(in, "bad"), af::ValidationError) << text;
  }
}

TEST(RunConfig, UnknownKeysAreRejected) {
  af::RunConfig cfg;
  EXPECT_THROW(cfg.set("train.stepz", "5"), af::ValidationError);
  std::istringstream in("train.steps = 10\nsdot.typo = 1\n");
  try {
    af::RunConfig::parse(in, "run.cfg");
    FAIL() << "expected a validation error";
  } catch (const af::ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
  }
}

TEST(RunConfig, EchoRoundTrips) {
  af::RunConfig cfg;
  cfg.apply("train.steps=123");
  cfg.apply("sdot.stages=10:0.5:64:0.9:0;20:0.25:128:0.99:0.01");
  cfg.apply("train.hidden=8,4");
  cfg.apply("pairs.rebalance=false");
  cfg.apply("sample.scheme=rk4");
  std::istringstream in("# comment line\n" + cfg.echo());
  const auto back = af::RunConfig::parse(in);
  EXPECT_EQ(back.echo(), cfg.echo());
  EXPECT_EQ(back.train.num_steps, 123);
  ASSERT_EQ(back.sdot.stages.size(), 2u);
  EXPECT_EQ(back.sdot.stages[1].batch_size, 128);
  EXPECT_FALSE(back.pairs.rebalance);
  EXPECT_EQ(back.train.hidden, (std::vector<Eigen::Index>{8, 4}));
}

TEST(RunConfig, ValidatesValues) {
  af::RunConfig cfg;
  EXPECT_THROW(cfg.apply("train.steps"), af::ValidationError);
  EXPECT_THROW(cfg.apply("sdot.stages=10:0.5:64"), af::ValidationError);
  EXPECT_THROW(cfg.apply("pairs.rebalance=maybe"), af::ValidationError);
  EXPECT_THROW(cfg.apply("train.coupling=magic"), af::ValidationError);
  cfg.apply("train.lr=-1");
  EXPECT_THROW(cfg.validate(), af::ValidationError);
}

TEST(Checkerboard, MembershipExamples) {
  EXPECT_TRUE(af::in_black_square(-1.5, -1.5));
  EXPECT_FALSE(af::in_black_square(-0.5, -1.5));
  EXPECT_TRUE(af::in_black_square(0.5, 0.5));
  EXPECT_FALSE(af::in_black_square(2.5, 0.5));
  EXPECT_EQ(af::black_squares().size(), 8u);
}

TEST(Checkerboard, PointsCoverEverySquareEvenly) {
  const auto pts = af::checkerboard_points(10000, 3);
  std::map<std::pair<int, int>, int> counts;
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    ASSERT_TRUE(af::in_black_square(pts(0, j), pts(1, j)));
    ++counts[{static_cast<int>(std::floor(pts(0, j))), static_cast<int>(std::floor(pts(1, j)))}];
  }
  ASSERT_EQ(counts.size(), 8u);
  for (const auto& [sq, c] : counts) EXPECT_NEAR(c, 1250.0, 0.15 * 1250.0);
  EXPECT_EQ(af::checkerboard_points(5, 3), af::checkerboard_points(10000, 3).leftCols(5));
}

TEST(Density, CheckerboardMassIsBlack) {
  af::DensityGrid grid;
  grid.add(af::checkerboard_points(100000, 4));
  EXPECT_EQ(grid.total(), 100000u);
  EXPECT_GE(grid.black_mass_fraction(), 0.95);
}

TEST(Density, PgmLayoutAndOrientation) {
  af::DensityGrid grid(4, -2.0, 2.0);
  Eigen::MatrixXd pts(2, 3);
  pts << -1.5, -1.5, 1.5, 1.5, 1.5, -1.5;  // two top-left, one bottom-right
  grid.add(pts);
  grid.add(Eigen::MatrixXd::Constant(2, 1, 9.0));  // outside, counted in the total only
  EXPECT_EQ(grid.count(0, 0), 2u);
  EXPECT_EQ(grid.count(3, 3), 1u);
  EXPECT_EQ(grid.total(), 4u);
  std::ostringstream out;
  grid.write_pgm(out);
  EXPECT_EQ(out.str(), "P2\n4 4\n255\n255 0 0 0\n0 0 0 0\n0 0 0 0\n0 0 0 128\n");
}
