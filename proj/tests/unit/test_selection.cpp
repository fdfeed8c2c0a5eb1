#include <algorithm>
#include <map>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "stylemark/error.hpp"
#include "stylemark/selection.hpp"
#include "support.hpp"

using namespace stylemark;
using namespace testing_support;

namespace {

DatasetManifest ids_manifest(std::size_t n, const std::string& prefix = "t") {
  DatasetManifest m;
  m.tag = "Train";
  m.landmark_count = 3;
  for (std::size_t i = 0; i < n; ++i) {
    m.records.push_back(make_record(prefix + std::to_string(10000 + i), make_set({{1, 1}, {5, 1}, {1, 5}})));
  }
  return m;
}

std::vector<RankedImage> ranked_from(std::vector<std::pair<std::string, double>> v) {
  return rank_values(v);
}

}  // namespace

TEST(Selection, RankOrdersByNme) {
  const auto r = ranked_from({{"a", 5}, {"b", 3}, {"c", 9}});
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].id, "b");
  EXPECT_EQ(r[1].id, "a");
  EXPECT_EQ(r[2].id, "c");
  EXPECT_EQ(r[0].rank, 1u);
  EXPECT_EQ(r[2].rank, 3u);
}

TEST(Selection, TiesFallBackToIdOrder) {
  const auto r = ranked_from({{"z", 2}, {"m", 2}, {"a", 2}});
  EXPECT_EQ(r[0].id, "a");
  EXPECT_EQ(r[1].id, "m");
  EXPECT_EQ(r[2].id, "z");
  EXPECT_EQ(ranked_from({{"only", 4}})[0].rank, 1u);
}

TEST(Selection, RankByNmeFromPredictions) {
  DatasetManifest gt = ids_manifest(2);
  PredictionSet p;
  p.landmark_count = 3;
  p.entries[gt.records[0].id] = make_set({{2, 1}, {5, 1}, {1, 5}});
  EXPECT_THROW(rank_by_nme(p, gt), SelectionError);
  p.entries[gt.records[1].id] = gt.records[1].landmarks;
  const auto r = rank_by_nme(p, gt);
  EXPECT_EQ(r[0].id, gt.records[1].id);
  EXPECT_EQ(r[0].nme, 0.0);
}

TEST(Selection, SelectTopN) {
  const auto r = ranked_from({{"a", 5}, {"b", 3}, {"c", 9}});
  EXPECT_EQ(sst_select(r, 2).members, (std::vector<std::string>{"b", "a"}));
  EXPECT_EQ(sst_select(r, 1).members, (std::vector<std::string>{"b"}));
  EXPECT_EQ(sst_select(r, 10).members.size(), 3u);
  EXPECT_THROW(sst_select(r, 0), SelectionError);
  EXPECT_THROW(sst_select(std::vector<RankedImage>{}, 1), SelectionError);
}

TEST(Selection, TwoHundredFiftyOfFiveHundred) {
  Rng rng(3);
  std::vector<std::pair<std::string, double>> v;
  for (int i = 0; i < 500; ++i) v.emplace_back("img" + std::to_string(i), rng.uniform(0, 20));
  const auto ranked = rank_values(v);
  const auto pool = sst_select(ranked, 250);
  EXPECT_EQ(pool.members.size(), 250u);
  // Pool monotonicity.
  const auto small = sst_select(ranked, 10);
  for (const auto& id : small.members) {
    EXPECT_NE(std::find(pool.members.begin(), pool.members.end(), id), pool.members.end());
  }
}

TEST(Selection, SingletonPoolForcesOneStyle) {
  const auto train = ids_manifest(500);
  StylePool pool{1, {"elsewhere"}};
  const auto p = assign_styles(train, pool, 4);
  ASSERT_EQ(p.pairs.size(), 500u);
  for (const auto& [c, s] : p.pairs) EXPECT_EQ(s, "elsewhere");
}

TEST(Selection, SingletonSelfPoolIsKept) {
  const auto train = ids_manifest(3);
  StylePool pool{1, {train.records[1].id}};
  const auto p = assign_styles(train, pool, 4, true);
  EXPECT_EQ(p.pairs[1].first, p.pairs[1].second);
}

TEST(Selection, ForbidSelfNeverPairsAnImageWithItself) {
  const auto train = ids_manifest(40);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p = assign_styles(train, full_pool(train), seed, true);
    for (const auto& [c, s] : p.pairs) EXPECT_NE(c, s);
  }
}

TEST(Selection, AssignIsDeterministic) {
  const auto train = ids_manifest(100);
  EXPECT_EQ(assign_styles(train, full_pool(train), 9), assign_styles(train, full_pool(train), 9));
  EXPECT_NE(assign_styles(train, full_pool(train), 9), assign_styles(train, full_pool(train), 10));
}

TEST(Selection, FullPoolIsUniformChiSquare) {
  const auto train = ids_manifest(500);
  const auto pool = full_pool(train);
  std::map<std::string, double> counts;
  std::size_t draws = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& [c, s] : assign_styles(train, pool, 1000 + seed, true).pairs) {
      counts[s] += 1;
      ++draws;
    }
  }
  ASSERT_EQ(draws, 10000u);
  const double expected = static_cast<double>(draws) / 500.0;
  double chi2 = 0;
  for (const auto& r : train.records) {
    const double o = counts.contains(r.id) ? counts[r.id] : 0.0;
    chi2 += (o - expected) * (o - expected) / expected;
  }
  const boost::math::chi_squared dist(499);
  const double p_value = 1.0 - boost::math::cdf(dist, chi2);
  EXPECT_GT(p_value, 0.001) << "chi2 = " << chi2;
}

TEST(Selection, TestStPairsDrawFromTrain) {
  const auto train = ids_manifest(500, "tr");
  auto test = ids_manifest(100, "te");
  test.tag = "Test";
  const auto p = make_test_st(test, train, 5);
  ASSERT_EQ(p.pairs.size(), 100u);
  std::set<std::string> train_ids;
  for (const auto& r : train.records) train_ids.insert(r.id);
  for (const auto& [c, s] : p.pairs) EXPECT_TRUE(train_ids.contains(s));

  const auto one = ids_manifest(1, "solo");
  for (const auto& [c, s] : make_test_st(test, one, 5).pairs) EXPECT_EQ(s, one.records[0].id);
}

TEST(Selection, PairingAndRankingFilesRoundTrip) {
  TempDir dir;
  const auto train = ids_manifest(30);
  const auto p = assign_styles(train, full_pool(train), 2);
  save_pairing(p, dir / "p.pairing");
  EXPECT_EQ(load_pairing(dir / "p.pairing"), p);
  const auto r = ranked_from({{"a", 5.123456789012345}, {"b", 3}, {"c", 9}});
  save_ranking(r, dir / "r.ranking");
  EXPECT_EQ(load_ranking(dir / "r.ranking"), r);
}
