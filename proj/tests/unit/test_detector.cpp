#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "stylemark/detector.hpp"
#include "stylemark/error.hpp"
#include "stylemark/synthetic.hpp"
#include "support.hpp"

using namespace stylemark;
using namespace testing_support;

namespace {

DatasetManifest shapes_manifest(const std::vector<LandmarkSet>& shapes) {
  DatasetManifest m;
  m.tag = "Train";
  m.landmark_count = static_cast<int>(shapes.front().size());
  for (std::size_t i = 0; i < shapes.size(); ++i) m.records.push_back(make_record("s" + std::to_string(i), shapes[i]));
  return m;
}

// Independent normalization: centroid 0, RMS radius 1.
std::vector<Point2> hand_normalize(std::vector<Point2> p) {
  double cx = 0, cy = 0;
  for (auto& q : p) cx += q.x, cy += q.y;
  cx /= p.size();
  cy /= p.size();
  double ss = 0;
  for (auto& q : p) ss += (q.x - cx) * (q.x - cx) + (q.y - cy) * (q.y - cy);
  const double r = std::sqrt(ss / p.size());
  for (auto& q : p) q = {(q.x - cx) / r, (q.y - cy) / r};
  return p;
}

void expect_near(const LandmarkSet& a, const std::vector<Point2>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_NEAR(a[i].x, b[i].x, tol);
    EXPECT_NEAR(a[i].y, b[i].y, tol);
  }
}

}  // namespace

TEST(Detector, NormalizeShape) {
  const auto n = normalize_shape(std::vector<Point2>{{0, 0}, {2, 0}, {0, 2}, {2, 2}});
  double cx = 0, ss = 0;
  for (auto& p : n) cx += p.x, ss += p.x * p.x + p.y * p.y;
  EXPECT_NEAR(cx, 0, 1e-15);
  EXPECT_NEAR(ss / 4, 1, 1e-15);
  EXPECT_THROW(normalize_shape(std::vector<Point2>{{1, 1}, {1, 1}}), GeometryError);
}

TEST(Detector, SingleImageModel) {
  const auto s = make_set({{10, 10}, {30, 12}, {20, 40}});
  const auto model = fit_mean_shape(shapes_manifest({s}));
  expect_near(model.mean_shape, hand_normalize(s.xy()), 1e-12);
}

TEST(Detector, TranslatedShapesGiveTheSameModel) {
  const auto a = make_set({{10, 10}, {30, 12}, {20, 40}});
  const auto b = make_set({{110, 60}, {130, 62}, {120, 90}});
  const auto model = fit_mean_shape(shapes_manifest({a, b}));
  expect_near(model.mean_shape, hand_normalize(a.xy()), 1e-12);
}

TEST(Detector, ThreeShapesHandAverage) {
  const std::vector<LandmarkSet> shapes{make_set({{0, 0}, {4, 0}, {0, 4}, {4, 4}}),
                                        make_set({{1, 1}, {7, 1}, {1, 3}, {7, 3}}),
                                        make_set({{0, 0}, {2, 0}, {1, 5}, {2, 6}})};
  std::vector<Point2> mean(4);
  for (const auto& s : shapes) {
    const auto n = hand_normalize(s.xy());
    for (int i = 0; i < 4; ++i) mean[i].x += n[i].x / 3, mean[i].y += n[i].y / 3;
  }
  expect_near(fit_mean_shape(shapes_manifest(shapes)).mean_shape, hand_normalize(mean), 1e-12);
}

TEST(Detector, MeanIgnoresRecordOrder) {
  Rng rng(7);
  std::vector<LandmarkSet> shapes;
  for (int i = 0; i < 30; ++i) shapes.push_back(random_set(rng, 10, 0, 90));
  auto m = shapes_manifest(shapes);
  const auto a = fit_mean_shape(m);
  std::reverse(m.records.begin(), m.records.end());
  EXPECT_EQ(fit_mean_shape(m), a);
  EXPECT_EQ(fit_mean_shape(m, {true}), fit_mean_shape(shapes_manifest(shapes), {true}));
}

TEST(Detector, ScaledMeanIsAFixedPoint) {
  const auto model = fit_mean_shape(shapes_manifest({make_set({{10, 10}, {30, 12}, {20, 40}, {14, 25}})}));
  std::vector<Point2> gt;
  for (const auto& p : model.mean_shape.points) gt.push_back({50 + 17 * p.x, 40 + 17 * p.y});
  const auto rec = make_record("r", LandmarkSet::from_points(gt));
  EXPECT_NEAR(nme(predict(model, rec), rec.landmarks), 0.0, 1e-12);
  std::vector<Point2> moved;
  for (const auto& p : gt) moved.push_back({p.x + 9.5, p.y - 3.25});
  const auto rec2 = make_record("r2", LandmarkSet::from_points(moved));
  EXPECT_NEAR(nme(predict(model, rec2), rec2.landmarks), 0.0, 1e-12);
}

TEST(Detector, NonMeanShapeResidualByHand) {
  // Mean is the unit square; the record is a 2x1 rectangle (x scaled).
  const auto square = make_set({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
  const auto model = fit_mean_shape(shapes_manifest({square}));
  const auto rect = make_record("r", make_set({{0, 0}, {2, 0}, {2, 1}, {0, 1}}));
  // Placement: square of half-diagonal sqrt(5)/2 centered at (1, 0.5), i.e. side sqrt(5/2).
  const double side = std::sqrt(2.5);
  const Point2 c{1.0, 0.5};
  const std::vector<Point2> expected{{c.x - side / 2, c.y - side / 2}, {c.x + side / 2, c.y - side / 2},
                                     {c.x + side / 2, c.y + side / 2}, {c.x - side / 2, c.y + side / 2}};
  const auto pred = predict(model, rect);
  expect_near(pred, expected, 1e-12);
  double err = 0;
  for (int i = 0; i < 4; ++i) err += std::hypot(pred[i].x - rect.landmarks[i].x, pred[i].y - rect.landmarks[i].y);
  const double hand = 100.0 * (err / 4) / std::sqrt(5.0);
  EXPECT_GT(hand, 0);
  EXPECT_NEAR(nme(pred, rect.landmarks), hand, 1e-12);
}

TEST(Detector, ModelFileRoundTrip) {
  TempDir dir;
  Rng rng(9);
  const auto model = fit_mean_shape(shapes_manifest({random_set(rng, 6, 0, 50), random_set(rng, 6, 0, 50)}));
  save_model(model, dir / "m.json");
  EXPECT_EQ(load_model(dir / "m.json"), model);
}

TEST(Detector, BuiltinEvaluateTenRecords) {
  TempDir dir;
  SyntheticOptions o;
  o.count = 10;
  o.image_size = 48;
  const auto data = generate_synthetic_dataset(dir / "d", o);
  const auto preds = evaluate(DetectorBackend{}, fit_mean_shape(data), data, dir.path());
  EXPECT_EQ(preds.entries.size(), 10u);
}

TEST(Detector, ExternalEchoAndMissingRecord) {
  TempDir dir;
  SyntheticOptions o;
  o.count = 5;
  o.image_size = 48;
  const auto data = generate_synthetic_dataset(dir / "d", o);
  const auto model = fit_mean_shape(data);
  const auto echo = DetectorBackend::parse(std::string("external:") + STYLEMARK_STUB + " detect-echo");
  const auto preds = evaluate(echo, model, data, dir / "w");
  const auto report = score_predictions("echo", preds, data);
  for (const auto& [id, v] : report.per_image) EXPECT_EQ(v, 0.0);

  const auto drop = DetectorBackend::parse(std::string("external:") + STYLEMARK_STUB + " detect-drop");
  try {
    evaluate(drop, model, data, dir / "w");
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("'" + data.records.back().id + "'"), std::string::npos);
  }
}

TEST(Detector, BackendParsing) {
  EXPECT_EQ(DetectorBackend::parse("builtin").kind, DetectorBackend::Kind::builtin);
  EXPECT_EQ(DetectorBackend::parse("external:foo").command, "foo");
  EXPECT_THROW(DetectorBackend::parse("resnet"), Error);
}
