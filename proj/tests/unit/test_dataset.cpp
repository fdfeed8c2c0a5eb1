#include <cmath>
#include <limits>
#include <set>

#include <gtest/gtest.h>

#include "stylemark/dataset.hpp"
#include "stylemark/error.hpp"
#include "support.hpp"

using namespace stylemark;
using namespace testing_support;

namespace {

LandmarkSet grid_shape(int n, double offset = 10.0) {
  std::vector<Point2> pts;
  for (int i = 0; i < n; ++i) pts.push_back({offset + i % 8, offset + i / 8});
  return LandmarkSet::from_points(pts);
}

DatasetManifest sample_manifest(std::size_t count) {
  DatasetManifest m;
  m.tag = "Root";
  m.seed = 3;
  for (std::size_t i = 0; i < count; ++i) {
    m.records.push_back(make_record("img" + std::to_string(1000 + i), grid_shape(48, 10.0 + i % 5)));
  }
  return m;
}

}  // namespace

TEST(Dataset, TwoRecordManifestRoundTrips) {
  TempDir dir;
  DatasetManifest m = sample_manifest(2);
  m.records[1].mask_path = "masks/img1001.png";
  m.records[1].lineage = Lineage{"img1000", "crop:margin=0.1", std::array<double, 6>{1, 0, -3, 0, 1, -4}};
  save_manifest(m, dir / "m.manifest");
  const DatasetManifest back = load_manifest(dir / "m.manifest");
  EXPECT_EQ(back.records.size(), 2u);
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.base_dir, dir.path());
}

TEST(Dataset, EmptyManifestRoundTrips) {
  TempDir dir;
  DatasetManifest m;
  m.tag = "Empty";
  save_manifest(m, dir / "e.manifest");
  EXPECT_EQ(load_manifest(dir / "e.manifest"), m);
}

TEST(Dataset, SaveIsByteDeterministic) {
  TempDir dir;
  const auto m = sample_manifest(5);
  save_manifest(m, dir / "a.manifest");
  save_manifest(load_manifest(dir / "a.manifest"), dir / "b.manifest");
  EXPECT_EQ(read_file(dir / "a.manifest"), read_file(dir / "b.manifest"));
}

TEST(Dataset, SaveIntoMissingDirectoryIsIoError) {
  TempDir dir;
  EXPECT_THROW(save_manifest(sample_manifest(1), dir / "no/such/dir/m.manifest"), IoError);
}

TEST(Dataset, SaveToReadOnlyLocationIsIoError) {
  if (::geteuid() == 0) GTEST_SKIP() << "root ignores file permissions";
  TempDir dir;
  fs::create_directories(dir / "ro");
  fs::permissions(dir / "ro", fs::perms::owner_read | fs::perms::owner_exec);
  EXPECT_THROW(save_manifest(sample_manifest(1), dir / "ro/m.manifest"), IoError);
  fs::permissions(dir / "ro", fs::perms::owner_all);
}

TEST(Dataset, RebasesPathsWhenSavedElsewhere) {
  TempDir dir;
  DatasetManifest m = sample_manifest(1);
  m.base_dir = dir / "data";
  fs::create_directories(dir / "out");
  save_manifest(m, dir / "out/m.manifest");
  const auto back = load_manifest(dir / "out/m.manifest");
  EXPECT_EQ(back.records[0].image_path, "../data/images/img1000.png");
  EXPECT_EQ(fs::weakly_canonical(back.resolve(back.records[0].image_path)),
            fs::weakly_canonical(m.resolve(m.records[0].image_path)));
}

TEST(Dataset, FortySevenPointRecordNamesTheRecord) {
  DatasetManifest m = sample_manifest(2);
  m.records[1].landmarks = grid_shape(47);
  try {
    parse_manifest(serialize_manifest(m));
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.record_id(), "img1001");
    EXPECT_NE(std::string(e.what()).find("expected 48 points, got 47"), std::string::npos);
  }
}

TEST(Dataset, OutOfBoundsLandmarkAgreesWithIndependentCheck) {
  ImageRecord r = make_record("a", grid_shape(48));
  auto pts = r.landmarks.points;
  pts[7].x = r.width + 5;
  r.landmarks = LandmarkSet(pts);
  // Independent bounds check over every point.
  std::size_t outside = 0;
  for (const auto& p : r.landmarks.points) outside += !(p.x >= 0 && p.y >= 0 && p.x < r.width && p.y < r.height);
  ASSERT_EQ(outside, 1u);
  const auto outcome = validate_record(r);
  ASSERT_EQ(outcome.violations.size(), 1u);
  EXPECT_EQ(outcome.violations[0].message, "out of bounds");
  EXPECT_EQ(outcome.violations[0].field, "landmarks[7]");

  DatasetManifest m = sample_manifest(0);
  m.records.push_back(r);
  try {
    parse_manifest(serialize_manifest(m));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("out of bounds"), std::string::npos);
  }
}

TEST(Dataset, ValidRecordIsOk) {
  EXPECT_TRUE(validate_record(make_record("a", grid_shape(48))).ok());
}

TEST(Dataset, DuplicateIndexIsReported) {
  ImageRecord r = make_record("a", grid_shape(48));
  auto pts = r.landmarks.points;
  pts[5].index = 4;
  r.landmarks = LandmarkSet(pts);
  const auto outcome = validate_record(r);
  ASSERT_FALSE(outcome.ok());
  EXPECT_EQ(outcome.violations.back().message, "index not unique");
}

TEST(Dataset, NanCoordinateIsReportedAndSurvivesSerialization) {
  ImageRecord r = make_record("a", grid_shape(48));
  auto pts = r.landmarks.points;
  pts[0].y = std::numeric_limits<double>::quiet_NaN();
  r.landmarks = LandmarkSet(pts);
  const auto outcome = validate_record(r);
  ASSERT_EQ(outcome.violations.size(), 1u);
  EXPECT_EQ(outcome.violations[0].message, "non-finite coordinate");

  DatasetManifest m = sample_manifest(0);
  m.records.push_back(r);
  EXPECT_THROW(parse_manifest(serialize_manifest(m)), ValidationError);
}

TEST(Dataset, DuplicateRecordIdRejected) {
  DatasetManifest m = sample_manifest(2);
  m.records[1].id = m.records[0].id;
  EXPECT_THROW(parse_manifest(serialize_manifest(m)), ValidationError);
}

TEST(Dataset, MalformedJsonIsParseError) {
  EXPECT_THROW(parse_manifest("{\"tag\": \"x\", \"seed\": 1}\n{not json}\n"), ParseError);
  EXPECT_THROW(parse_manifest(""), ParseError);
  EXPECT_THROW(load_manifest("/nonexistent/x.manifest"), IoError);
}

TEST(Dataset, SplitSixHundredIntoFiveHundredAndHundred) {
  const auto root = sample_manifest(600);
  const auto [train, test] = split_dataset(root, 500, 100, 7);
  EXPECT_EQ(train.records.size(), 500u);
  EXPECT_EQ(test.records.size(), 100u);
  std::set<std::string> ids;
  for (const auto& r : train.records) ids.insert(r.id);
  for (const auto& r : test.records) EXPECT_FALSE(ids.contains(r.id));
  for (const auto& r : test.records) ids.insert(r.id);
  EXPECT_EQ(ids.size(), 600u);
  EXPECT_EQ(train.parent, "Root");
  for (const auto& r : train.records) EXPECT_EQ(r.split, Split::train);
  for (const auto& r : test.records) EXPECT_EQ(r.split, Split::test);
}

TEST(Dataset, SplitEmptyAndDeterministic) {
  const auto root = sample_manifest(20);
  const auto [a, b] = split_dataset(root, 0, 0, 1);
  EXPECT_TRUE(a.records.empty());
  EXPECT_TRUE(b.records.empty());
  EXPECT_EQ(serialize_manifest(split_dataset(root, 12, 5, 9).first),
            serialize_manifest(split_dataset(root, 12, 5, 9).first));
  EXPECT_NE(serialize_manifest(split_dataset(root, 12, 5, 9).first),
            serialize_manifest(split_dataset(root, 12, 5, 10).first));
  EXPECT_THROW(split_dataset(root, 15, 6, 1), Error);
}

TEST(Dataset, SplitKeepsInputOrder) {
  const auto root = sample_manifest(50);
  const auto [train, test] = split_dataset(root, 30, 10, 4);
  EXPECT_TRUE(std::is_sorted(train.records.begin(), train.records.end(),
                             [](const auto& x, const auto& y) { return x.id < y.id; }));
}

TEST(Dataset, ConcatCountsAndCollisions) {
  auto a = sample_manifest(3);
  auto b = sample_manifest(2);
  for (auto& r : b.records) r.id += "x";
  b.tag = "B";
  const DatasetManifest* parts[] = {&a, &b};
  const auto u = concat_manifests("U", parts);
  EXPECT_EQ(u.records.size(), 5u);
  EXPECT_EQ(u.parent, "Root+B");
  const DatasetManifest* clash[] = {&a, &a};
  EXPECT_THROW(concat_manifests("U", clash), ValidationError);
}
