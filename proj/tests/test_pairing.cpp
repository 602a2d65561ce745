#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <vector>

#include <gtest/gtest.h>

#include <alignflow/pairing.hpp>

#include "oracles.hpp"

namespace af = alignflow;
using af::Dataset;
using af::Vec;

namespace {

Dataset line_data(const std::vector<double>& y, std::vector<std::uint32_t> classes = {}) {
  Eigen::MatrixXd pts(1, static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) pts(0, static_cast<Eigen::Index>(i)) = y[i];
  return Dataset::uniform(pts, std::move(classes));
}

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

std::vector<std::uint64_t> counts_of(const std::vector<std::uint32_t>& v, std::uint32_t n) {
  std::vector<std::uint64_t> c(n, 0);
  for (const auto i : v) ++c[i];
  return c;
}

}  // namespace

// ---- generate_pairs ---------------------------------------------------------

TEST(GeneratePairs, ZeroCountIsEmpty) {
  const auto data = line_data({0.0, 1.0});
  EXPECT_TRUE(af::generate_pairs(data, Vec::Zero(2), af::NoisePrior{1}, 0, 1).empty());
}

TEST(GeneratePairs, SinglePointTakesEverything) {
  const auto data = line_data({0.4});
  const auto recs = af::generate_pairs(data, Vec::Zero(1), af::NoisePrior{1}, 500, 9);
  ASSERT_EQ(recs.size(), 500u);
  for (const auto& r : recs) EXPECT_EQ(r.data_index, 0u);
}

TEST(GeneratePairs, RecordsReplayFromTheirSeeds) {
  af::SplitMix64 rng(3);
  Eigen::MatrixXd pts(2, 12);
  for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = rng.normal();
  const auto data = Dataset::uniform(pts);
  Vec g(12);
  for (Eigen::Index i = 0; i < 12; ++i) g[i] = 0.3 * rng.normal();
  const auto recs = af::generate_pairs(data, g, af::NoisePrior{2}, 2000, 321);
  for (std::uint64_t j = 0; j < recs.size(); ++j) {
    EXPECT_EQ(recs[j].seed, af::derive_seed(321, j));
    EXPECT_EQ(recs[j].class_id, 0u);
    EXPECT_EQ(recs[j].data_index, static_cast<std::uint32_t>(af::hard_assign(af::noise_from_seed(recs[j].seed, 2), data, g)));
  }
}

TEST(GeneratePairs, QuantileDualsGiveUniformFrequencies) {
  const auto y = oracle::even_points(8);
  const auto data = line_data(y);
  const auto recs = af::generate_pairs(data, to_vec(oracle::quantile_duals(y)), af::NoisePrior{1}, 80000, 17);
  std::vector<double> freq(8, 0.0);
  for (const auto& r : recs) freq[r.data_index] += 1.0 / 80000;
  // One percentage point is about 8.5 standard errors at this sample size.
  for (const double f : freq) EXPECT_NEAR(f, 0.125, 0.01);
}

TEST(GeneratePairs, MissingClassDualsNameTheClass) {
  const auto data = line_data({0.0, 1.0, 2.0}, {0, 7, 7});
  af::ClassDuals duals{{0, Vec::Zero(1)}};
  try {
    af::generate_pairs(data, duals, af::NoisePrior{1}, af::proportional_class_mix(data, 30), 1);
    FAIL() << "expected a validation error";
  } catch (const af::ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("class 7"), std::string::npos);
  }
}

TEST(GeneratePairs, PerClassCountsFollowTheMix) {
  const auto data = line_data({-1.0, 0.0, 1.0, 2.0, 3.0, 4.0}, {2, 2, 5, 5, 5, 9});
  const auto mix = af::proportional_class_mix(data, 600);
  ASSERT_EQ(mix.size(), 3u);
  EXPECT_EQ(mix[0].count, 200u);
  EXPECT_EQ(mix[1].count, 300u);
  EXPECT_EQ(mix[2].count, 100u);
  const auto duals = af::split_duals(data, Vec::Zero(6));
  const auto recs = af::generate_pairs(data, duals, af::NoisePrior{1}, mix, 4);
  std::map<std::uint32_t, std::uint64_t> per_class;
  for (const auto& r : recs) {
    ++per_class[r.class_id];
    EXPECT_EQ(data.class_of(r.data_index), r.class_id);
  }
  EXPECT_EQ(per_class[2], 200u);
  EXPECT_EQ(per_class[5], 300u);
  EXPECT_EQ(per_class[9], 100u);
}

TEST(GeneratePairs, LargestRemainderMixSumsToTotal) {
  const auto data = line_data({0.0, 1.0, 2.0}, {0, 1, 2});
  for (std::uint64_t total : {0u, 1u, 2u, 7u, 100u}) {
    std::uint64_t s = 0;
    for (const auto& c : af::proportional_class_mix(data, total)) s += c.count;
    EXPECT_EQ(s, total);
  }
}

TEST(GeneratePairs, SplitAndMergeDualsRoundTrip) {
  const auto data = line_data({0.0, 1.0, 2.0, 3.0}, {1, 0, 1, 0});
  const Vec g(Eigen::Vector4d(0.1, 0.2, 0.3, 0.4));
  const auto split = af::split_duals(data, g);
  EXPECT_EQ(split.at(0), Eigen::Vector2d(0.2, 0.4));
  EXPECT_EQ(split.at(1), Eigen::Vector2d(0.1, 0.3));
  EXPECT_EQ(af::merge_duals(data, split), g);
}

// ---- rebalance --------------------------------------------------------------

TEST(Rebalance, BalancedInputUnchanged) {
  const std::vector<std::uint32_t> in{0, 1, 0, 1};
  af::RebalanceReport rep;
  EXPECT_EQ(af::rebalance(in, 2, &rep), in);
  EXPECT_EQ(rep.changed, 0u);
}

TEST(Rebalance, OneEditFixesThreeToOne) {
  af::RebalanceReport rep;
  EXPECT_EQ(af::rebalance({0, 0, 0, 1}, 2, &rep), (std::vector<std::uint32_t>{0, 0, 1, 1}));
  EXPECT_EQ(rep.changed, 1u);
  EXPECT_EQ(rep.counts_after, (std::vector<std::uint64_t>{2, 2}));
}

TEST(Rebalance, OddLengthKeepsTheCeilOnTheMajority) {
  af::RebalanceReport rep;
  EXPECT_EQ(af::rebalance({0, 0, 0}, 2, &rep), (std::vector<std::uint32_t>{0, 0, 1}));
  EXPECT_EQ(rep.changed, 1u);
  EXPECT_EQ(rep.counts_after, (std::vector<std::uint64_t>{2, 1}));
}

TEST(Rebalance, RewritesLatestOccurrencesAscending) {
  // index 2 is over by three; 0 and 3 are under by one and two
  const std::vector<std::uint32_t> in{2, 1, 2, 2, 1, 2, 0, 2};
  const auto out = af::rebalance(in, 4);
  EXPECT_EQ(out, (std::vector<std::uint32_t>{2, 1, 2, 0, 1, 3, 0, 3}));
}

TEST(Rebalance, RejectsOutOfRangeIndex) {
  EXPECT_THROW(af::rebalance({0, 3}, 3), af::ValidationError);
}

TEST(Rebalance, OracleAgreesWithExhaustiveSearch) {
  // Validates the count-vector oracle itself on tiny inputs.
  for (std::uint32_t n = 1; n <= 3; ++n) {
    for (std::size_t m = 0; m <= 5; ++m) {
      std::vector<std::uint32_t> in(m, 0);
      while (true) {
        EXPECT_EQ(oracle::min_rebalance_changes(in, n), oracle::min_rebalance_changes_exhaustive(in, n));
        std::size_t pos = 0;
        while (pos < m && ++in[pos] == n) in[pos++] = 0;
        if (pos == m) break;
      }
    }
  }
}

TEST(Rebalance, RandomInputsMeetTheContract) {
  af::SplitMix64 rng(44);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = static_cast<std::uint32_t>(1 + rng.below(6));
    const auto m = static_cast<std::size_t>(rng.below(40));
    std::vector<std::uint32_t> in(m);
    // skewed draws so rebalancing has work to do
    for (auto& v : in) v = static_cast<std::uint32_t>(rng.below(1 + rng.below(n)));
    af::RebalanceReport rep;
    const auto out = af::rebalance(in, n, &rep);
    const auto c = counts_of(out, n);
    const auto [mn, mx] = std::minmax_element(c.begin(), c.end());
    EXPECT_LE(*mx - *mn, 1u);
    std::uint64_t diff = 0;
    for (std::size_t j = 0; j < m; ++j) diff += in[j] != out[j];
    EXPECT_EQ(rep.changed, diff);
    EXPECT_EQ(diff, oracle::min_rebalance_changes(in, n));
    EXPECT_EQ(rep.counts_before, counts_of(in, n));
    EXPECT_EQ(rep.counts_after, c);
  }
}

TEST(Rebalance, ChangedFractionBoundedByMreOnConvergedMap) {
  const auto y = oracle::even_points(8);
  const auto data = line_data(y);
  af::SdotConfig cfg;
  cfg.stages = {{2000, 0.5, 4096, 0.99, 0.01}};
  cfg.master_seed = 2;
  const auto sol = af::solve_dual(data, af::NoisePrior{1}, cfg);
  const double mre = sol.final_metrics().mre_est;
  ASSERT_LT(mre, 0.2);
  auto recs = af::generate_pairs(data, sol.duals.g_ema, af::NoisePrior{1}, 80000, 8);
  const auto rep = af::rebalance_per_class(recs, data);
  // Half the expected L1 deviation of 80000 multinomial draws, tripled.
  const double noise = 3.0 * 0.5 * 8.0 * std::sqrt(0.125 * 0.875 / 80000.0) * std::sqrt(2.0 / M_PI);
  EXPECT_LE(static_cast<double>(rep.changed) / 80000.0, mre + noise);
}

TEST(Rebalance, PerClassNeverCrossesClasses) {
  const auto data = line_data({0.0, 1.0, 2.0, 3.0, 4.0}, {0, 1, 0, 1, 1});
  std::vector<af::PairRecord> recs;
  for (std::uint64_t j = 0; j < 40; ++j) recs.push_back({j, j % 3 == 0 ? 0u : 1u, j % 3 == 0 ? 0u : 4u});
  const auto before = recs;
  const auto rep = af::rebalance_per_class(recs, data);
  std::vector<std::uint64_t> counts(5, 0);
  for (std::size_t j = 0; j < recs.size(); ++j) {
    EXPECT_EQ(recs[j].class_id, before[j].class_id);
    EXPECT_EQ(recs[j].seed, before[j].seed);
    EXPECT_EQ(data.class_of(recs[j].data_index), recs[j].class_id);
    ++counts[recs[j].data_index];
  }
  EXPECT_EQ(counts[0] + counts[2], 14u);
  EXPECT_LE(std::max(counts[0], counts[2]) - std::min(counts[0], counts[2]), 1u);
  const auto c1 = {counts[1], counts[3], counts[4]};
  EXPECT_LE(std::max(c1) - std::min(c1), 1u);
  EXPECT_EQ(rep.total, 40u);
}

TEST(ShuffleRecords, PermutesAndSpreadsTheRewrittenTail) {
  std::vector<af::PairRecord> recs;
  for (std::uint64_t j = 0; j < 4000; ++j) recs.push_back({j, 0u, j < 3000 ? 0u : 1u});
  auto a = recs, b = recs;
  af::shuffle_records(a, 5);
  af::shuffle_records(b, 5);
  EXPECT_TRUE(a == b);
  auto c = recs;
  af::shuffle_records(c, 6);
  EXPECT_FALSE(a == c);
  std::vector<std::uint64_t> seeds;
  for (const auto& r : a) {
    EXPECT_EQ(r.data_index, r.seed < 3000 ? 0u : 1u);
    seeds.push_back(r.seed);
  }
  std::sort(seeds.begin(), seeds.end());
  for (std::uint64_t j = 0; j < 4000; ++j) ASSERT_EQ(seeds[j], j);
  // The last 1000 records were all index 1; after shuffling each quarter holds
  // about 250 of them (binomial sd ~14).
  for (int q = 0; q < 4; ++q) {
    const auto ones = std::count_if(a.begin() + q * 1000, a.begin() + (q + 1) * 1000,
                                    [](const af::PairRecord& r) { return r.data_index == 1; });
    EXPECT_NEAR(static_cast<double>(ones), 250.0, 70.0) << "quarter " << q;
  }
}

// ---- augment_involution -----------------------------------------------------

TEST(Augment, IdentityDuplicatesWithHalfWeights) {
  const auto data = line_data({0.0, 1.0, 5.0});
  const auto aug = af::augment_involution(data, [](const Vec& p) { return p; });
  ASSERT_EQ(aug.size(), 6);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_EQ(aug.points(0, i + 3), data.points(0, i));
  EXPECT_NEAR(aug.weights.sum(), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(aug.weights[0], 1.0 / 6.0);
}

TEST(Augment, MirrorAppendsReflection) {
  Eigen::MatrixXd pts(2, 1);
  pts << 1.0, 0.0;
  const auto aug = af::augment_involution(Dataset::uniform(pts, {3}), af::mirror_axis(0));
  ASSERT_EQ(aug.size(), 2);
  EXPECT_EQ(aug.points.col(0), Eigen::Vector2d(1.0, 0.0));
  EXPECT_EQ(aug.points.col(1), Eigen::Vector2d(-1.0, 0.0));
  EXPECT_EQ(aug.weights, Eigen::Vector2d(0.5, 0.5));
  EXPECT_EQ(aug.class_ids, (std::vector<std::uint32_t>{3, 3}));
  EXPECT_NO_THROW(aug.validate());
}

TEST(Augment, RejectsNonInvolution) {
  const auto data = line_data({0.0, 1.0});
  EXPECT_THROW(af::augment_involution(data, [](const Vec& p) { return Vec(p.array() + 1.0); }), af::ValidationError);
}

// ---- end-to-end -------------------------------------------------------------

TEST(PairStream, DeterministicThroughDisk) {
  const auto y = oracle::even_points(8);
  const auto data = line_data(y);
  const Vec g = to_vec(oracle::quantile_duals(y));
  const auto dir = std::filesystem::temp_directory_path() / "alignflow_test_pairing";
  std::filesystem::create_directories(dir);
  std::vector<std::vector<char>> files;
  for (int run = 0; run < 2; ++run) {
    auto recs = af::generate_pairs(data, g, af::NoisePrior{1}, 5000, 99);
    af::rebalance_per_class(recs, data);
    const auto path = (dir / ("run" + std::to_string(run) + ".bin")).string();
    af::write_pairs(path, {8, recs});
    files.push_back(af::read_file(path));
    const auto back = af::read_pairs(path);
    ASSERT_TRUE(back.records == recs);
  }
  EXPECT_EQ(files[0], files[1]);
  // Stream of (noise, data) regenerated from the file matches bit for bit.
  const auto back = af::decode_pairs(files[0]);
  auto fresh = af::generate_pairs(data, g, af::NoisePrior{1}, 5000, 99);
  af::rebalance_per_class(fresh, data);
  for (std::size_t j = 0; j < back.records.size(); ++j) {
    const Vec a = af::noise_from_seed(back.records[j].seed, 1);
    const Vec b = af::noise_from_seed(fresh[j].seed, 1);
    EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double)), 0);
    EXPECT_EQ(back.records[j].data_index, fresh[j].data_index);
  }
}
