#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "stylemark/error.hpp"
#include "stylemark/experiment.hpp"
#include "support.hpp"

using namespace stylemark;
using namespace testing_support;

namespace {

DatasetManifest small_root(const TempDir& dir, std::size_t n = 30) {
  SyntheticOptions o;
  o.count = n;
  o.image_size = 48;
  return generate_synthetic_dataset(dir / "root", o);
}

ExperimentConfig small_config(std::string name, std::vector<TrainTerm> terms) {
  ExperimentConfig c;
  c.name = std::move(name);
  c.label = c.name;
  c.train_source = std::move(terms);
  c.n_train = 20;
  c.n_test = 8;
  return c;
}

std::string stub_backend(const std::string& mode) { return std::string("external:") + STYLEMARK_STUB + " " + mode; }

}  // namespace

TEST(Experiment, TermNamesRoundTrip) {
  for (const std::string s : {"Train", "TrainST", "TrainSST(10)", "TrainRotated"}) {
    EXPECT_EQ(TrainTerm::parse(s).name(), s);
  }
  EXPECT_EQ(TrainTerm::parse("TrainSST(250)").n, 250u);
  EXPECT_THROW(TrainTerm::parse("TrainSST(0)"), Error);
  EXPECT_THROW(TrainTerm::parse("Test"), Error);
}

TEST(Experiment, ConfigJsonRoundTrip) {
  ExperimentConfig c = small_config("X", {TrainTerm::parse("Train"), TrainTerm::parse("TrainSST(10)")});
  c.test_source = TestSource::test_st;
  c.backend = "hist-match";
  c.backend_params["epochs"] = "4000";
  c.seeds.pairing = 99;
  c.region_map = "regions.json";
  EXPECT_EQ(config_from_json(config_to_json(c)), c);
  for (const auto& b : builtin_configs()) EXPECT_EQ(config_from_json(config_to_json(b)), b);
}

TEST(Experiment, ConfigRejectsUnknownField) {
  EXPECT_THROW(config_from_json(R"({"name":"A","bogus":1})"), ParseError);
  EXPECT_THROW(config_from_json("not json"), ParseError);
}

TEST(Experiment, BuiltinConfigsInTableOrder) {
  const auto configs = builtin_configs();
  ASSERT_EQ(configs.size(), 12u);
  const std::vector<std::string> names{"Baseline",          "Baseline-TestST",   "TrainST",
                                       "TrainSST(1)",       "TrainSST(10)",      "TrainSST(250)",
                                       "Train+TrainRotated", "Train+TrainST",     "Train+TrainSST(1)",
                                       "Train+TrainSST(10)", "Train+TrainSST(250)", "CF-ST-vs-FB-ST"};
  for (std::size_t i = 0; i < names.size(); ++i) EXPECT_EQ(configs[i].name, names[i]);
  EXPECT_EQ(configs[0].label, "Baseline (Original Only)");
  EXPECT_EQ(configs[1].test_source, TestSource::test_st);
  EXPECT_EQ(configs.back().kind, ExperimentKind::preprocessing_study);
  for (const auto& c : configs) EXPECT_EQ(c.seeds, configs[0].seeds);
}

TEST(Experiment, BaselineScoresEveryTestImage) {
  TempDir dir;
  const auto root = small_root(dir);
  const auto r = run(small_config("Baseline", {TrainTerm{}}), root, dir / "out");
  ASSERT_TRUE(r.report);
  EXPECT_EQ(r.report->per_image.size(), 8u);
  EXPECT_EQ(r.set_sizes.at("train"), 20u);
  EXPECT_TRUE(fs::exists(dir / "out/reports/Baseline.json"));
  for (const auto& f : r.provenance) EXPECT_TRUE(fs::exists(dir / "out/manifests" / f)) << f;
}

TEST(Experiment, IdentityStyleMatchesBaseline) {
  TempDir dir;
  const auto root = small_root(dir);
  auto st = small_config("TrainST", {TrainTerm::parse("TrainST")});
  st.backend = stub_backend("copy");
  const auto results = run_experiments({small_config("Baseline", {TrainTerm{}}), st}, root, dir / "out");
  ASSERT_EQ(results.size(), 2u);
  EXPECT_EQ(results[1].report->nme, results[0].report->nme);
  EXPECT_EQ(results[1].style_failures, 0u);
}

TEST(Experiment, UnionCardinalities) {
  TempDir dir;
  const auto root = small_root(dir);
  const auto r = run(small_config("U", {TrainTerm{}, TrainTerm::parse("TrainSST(5)")}), root, dir / "out");
  EXPECT_EQ(r.set_sizes.at("Train"), 20u);
  EXPECT_EQ(r.set_sizes.at("TrainSST(5)"), 20u);
  EXPECT_EQ(r.set_sizes.at("train"), 40u);
}

TEST(Experiment, RerunIsByteIdentical) {
  TempDir dir;
  const auto root = small_root(dir);
  const std::vector<ExperimentConfig> configs{small_config("Baseline", {TrainTerm{}}),
                                              small_config("Mix", {TrainTerm{}, TrainTerm::parse("TrainST")})};
  write_summary(run_experiments(configs, root, dir / "a"), dir / "a");
  write_summary(run_experiments(configs, root, dir / "b"), dir / "b");
  for (const std::string sub : {"manifests", "reports", "plots"}) {
    EXPECT_EQ(snapshot(dir / ("a/" + sub)), snapshot(dir / ("b/" + sub))) << sub;
  }
  EXPECT_EQ(read_file(dir / "a/comparison.csv"), read_file(dir / "b/comparison.csv"));
}

TEST(Experiment, StyleStageErrorsAreTagged) {
  TempDir dir;
  const auto root = small_root(dir);
  auto c = small_config("Bad", {TrainTerm::parse("TrainST")});
  c.backend = stub_backend("fail");
  try {
    run(c, root, dir / "out");
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "style:TrainST");
  }
}

TEST(Experiment, SplitErrorsAreTagged) {
  TempDir dir;
  const auto root = small_root(dir, 10);
  try {
    run(small_config("Baseline", {TrainTerm{}}), root, dir / "out");
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "split");
  }
}

TEST(Experiment, PercentagesByHand) {
  EXPECT_NEAR(degradation_pct(9.144, 10.477), 100.0 * (10.477 - 9.144) / 9.144, 1e-12);
  EXPECT_NEAR(retention_pct(9.144, 10.046), 100.0 * 9.144 / 10.046, 1e-12);
  EXPECT_EQ(retention_pct(9.0, 8.0), 100.0);
}

TEST(Experiment, CompareNeedsBaselineAndComputesDeltas) {
  auto make = [](std::string name, double nme_value) {
    ExperimentResult r;
    r.config_name = name;
    r.label = name + " label";
    r.report = MetricsReport{};
    r.report->nme = nme_value;
    r.report->fr_count = 3;
    r.report->fr_fraction = 0.03;
    return r;
  };
  EXPECT_THROW(compare({make("A", 1.0)}), Error);
  const auto t = compare({make("Baseline", 8.0), make("B", 10.0)});
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[1].configuration, "B label");
  EXPECT_DOUBLE_EQ(*t.rows[1].delta_nme, 2.0);
  EXPECT_DOUBLE_EQ(*t.rows[1].degradation_pct, 25.0);
  EXPECT_DOUBLE_EQ(*t.rows[1].retention_pct, 80.0);
}

TEST(Experiment, StudyReportsBothModes) {
  TempDir dir;
  const auto root = small_root(dir);
  auto c = small_config("Study", {TrainTerm{}});
  c.kind = ExperimentKind::preprocessing_study;
  c.study_pairs = 4;
  c.backend = stub_backend("copy");
  const auto r = run(c, root, dir / "out");
  ASSERT_TRUE(r.study);
  ASSERT_EQ(r.study->modes.size(), 2u);
  EXPECT_EQ(r.study->modes[0].mode, "CF-ST");
  EXPECT_EQ(r.study->modes[1].mode, "FB-ST");
  for (const auto& m : r.study->modes) {
    EXPECT_EQ(m.pairs, 4u);
    EXPECT_NEAR(m.mean_loss_at.at(1000), 0.28, 1e-9);
    EXPECT_NEAR(m.mean_loss_at.at(4000), 0.08, 1e-9);
  }
  EXPECT_TRUE(fs::exists(dir / "out/plots/Study-loss.png"));
}

TEST(Experiment, LoadResultsReadsReportsBack) {
  TempDir dir;
  const auto root = small_root(dir);
  const auto r = run(small_config("Baseline", {TrainTerm{}}), root, dir / "out");
  const auto loaded = load_results(dir / "out");
  ASSERT_EQ(loaded.size(), 1u);
  EXPECT_EQ(loaded[0].report, r.report);
  EXPECT_EQ(loaded[0].provenance, r.provenance);
}
