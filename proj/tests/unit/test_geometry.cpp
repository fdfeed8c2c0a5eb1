#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "stylemark/error.hpp"
#include "stylemark/geometry.hpp"
#include "support.hpp"

using namespace stylemark;
using namespace testing_support;

namespace {

Image ramp(int w, int h, int channels = 3) {
  Image img(w, h, channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) img.at(x, y, c) = static_cast<std::uint8_t>((x * 31 + y * 7 + c * 50) % 256);
  return img;
}

bool brute_in_triangle(Point2 p, Point2 a, Point2 b, Point2 c) {
  auto cross = [](Point2 o, Point2 u, Point2 v) { return (u.x - o.x) * (v.y - o.y) - (u.y - o.y) * (v.x - o.x); };
  const double d1 = cross(a, b, p), d2 = cross(b, c, p), d3 = cross(c, a, p);
  const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

}  // namespace

TEST(Geometry, BboxMarginZero) {
  const auto lm = make_set({{10, 10}, {50, 40}, {30, 20}});
  EXPECT_EQ(landmark_bbox(lm, 0.0), (CropBox{10, 5, 40}));
}

TEST(Geometry, BboxMarginTenPercent) {
  const auto lm = make_set({{10, 10}, {50, 40}, {30, 20}});
  const CropBox box = landmark_bbox(lm, 0.10);
  EXPECT_DOUBLE_EQ(box.side, 48.0);
  EXPECT_DOUBLE_EQ(box.x0, 6.0);
  EXPECT_DOUBLE_EQ(box.y0, 1.0);
}

TEST(Geometry, BboxOfRepeatedPointFails) {
  EXPECT_THROW(landmark_bbox(make_set({{3, 3}, {3, 3}, {3, 3}})), GeometryError);
}

TEST(Geometry, CropTranslatesLandmarks) {
  const Image img = ramp(200, 200);
  const CropResult c = crop_image(img, {100, 100, 64});
  EXPECT_EQ(c.image.width(), 64);
  const Point2 p = c.transform.apply({110, 120});
  EXPECT_EQ(p, (Point2{10, 20}));
  EXPECT_EQ(c.image.at(10, 20, 1), img.at(110, 120, 1));
}

TEST(Geometry, CropOfFullImageIsIdentity) {
  const Image img = ramp(16, 16);
  const CropResult c = crop_image(img, {0, 0, 16});
  EXPECT_EQ(c.transform, AffineTransform::identity());
  EXPECT_EQ(c.image, img);
}

TEST(Geometry, CropPastRightEdgeIsZeroPadded) {
  const Image img = ramp(8, 8);
  const CropResult c = crop_image(img, {4, 2, 6});
  ASSERT_EQ(c.image.width(), 6);
  EXPECT_EQ(c.transform, AffineTransform::translation(-4, -2));
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      const int sx = x + 4, sy = y + 2;
      for (int ch = 0; ch < 3; ++ch) {
        const std::uint8_t expected = (sx < 8 && sy < 8) ? img.at(sx, sy, ch) : 0;
        EXPECT_EQ(c.image.at(x, y, ch), expected) << x << "," << y;
      }
    }
  }
}

TEST(Geometry, CropFullyOutsideFails) {
  EXPECT_THROW(crop_image(ramp(8, 8), {20, 20, 4}), GeometryError);
}

TEST(Geometry, ApplyAndInvert) {
  const auto lm = make_set({{110, 120}, {5, 7}});
  EXPECT_EQ(apply_transform(lm, AffineTransform::identity()), lm);
  EXPECT_EQ(apply_transform(lm, AffineTransform::translation(-100, -100))[0].x, 10.0);
  EXPECT_EQ(apply_transform(lm, AffineTransform::translation(-100, -100))[0].y, 20.0);

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    AffineTransform t{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2),
                      rng.uniform(-50, 50), rng.uniform(-50, 50)};
    if (std::abs(t.determinant()) < 0.1) continue;
    const auto pts = random_set(rng, 10, -100, 100);
    const auto back = apply_transform(apply_transform(pts, t), invert_transform(t));
    for (std::size_t i = 0; i < pts.size(); ++i) {
      EXPECT_NEAR(back[i].x, pts[i].x, 1e-9);
      EXPECT_NEAR(back[i].y, pts[i].y, 1e-9);
    }
  }
}

TEST(Geometry, InvertSpecialCases) {
  EXPECT_EQ(invert_transform(AffineTransform::identity()), AffineTransform::identity());
  EXPECT_EQ(invert_transform(AffineTransform::rotation(90)), AffineTransform::rotation(-90));
  EXPECT_THROW(invert_transform({0, 0, 0, 0, 1, 1}), GeometryError);
}

TEST(Geometry, RotationZeroIsIdentity) {
  const Image img = ramp(12, 9);
  ImageRecord r = make_record("a", make_set({{1, 1}, {10, 2}, {5, 8}}), 12, 9);
  const RotatedRecord out = rotate_augment(r, img, 0.0);
  EXPECT_EQ(out.image, img);
  EXPECT_EQ(out.record.landmarks, r.landmarks);
  EXPECT_TRUE(out.valid);
  EXPECT_EQ(out.record.id, "a@rot");
  EXPECT_EQ(out.record.lineage->parent_id, "a");
}

TEST(Geometry, RotationNinetyMovesTopRightToTopLeft) {
  Image img(4, 4, 1, 0);
  img.at(3, 0) = 200;
  ImageRecord r = make_record("a", make_set({{3, 0}, {1, 1}, {2, 3}}), 4, 4);
  const RotatedRecord out = rotate_augment(r, img, 90.0);
  EXPECT_EQ(out.record.landmarks[0].x, 0.0);
  EXPECT_EQ(out.record.landmarks[0].y, 0.0);
  EXPECT_EQ(out.image.at(0, 0), 200);
  EXPECT_EQ(std::accumulate(out.image.data().begin(), out.image.data().end(), 0), 200);
}

TEST(Geometry, RotationRoundTripOnLandmarks) {
  Rng rng(8);
  const auto pts = random_set(rng, 48, 0, 127);
  const auto fwd = AffineTransform::rotation(30, {63.5, 63.5});
  const auto back = AffineTransform::rotation(-30, {63.5, 63.5});
  const auto out = apply_transform(apply_transform(pts, fwd), back);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_NEAR(out[i].x, pts[i].x, 1e-6);
    EXPECT_NEAR(out[i].y, pts[i].y, 1e-6);
  }
}

TEST(Geometry, RotationInvalidWhenLandmarkLeavesCanvas) {
  const Image img = ramp(10, 10);
  ImageRecord r = make_record("a", make_set({{0, 0}, {9, 9}, {5, 1}}), 10, 10);
  EXPECT_FALSE(rotate_augment(r, img, 45).valid);
  EXPECT_THROW(rotate_augment(r, img, 200), GeometryError);
  EXPECT_THROW(rotate_augment(r, ramp(11, 10), 10), GeometryError);
}

TEST(Geometry, TriangleHullMaskMatchesBruteForce) {
  const auto lm = make_set({{0, 0}, {4, 0}, {0, 4}});
  const BinaryMask mask = hull_mask(lm, 5, 5);
  EXPECT_EQ(mask.count(), 15u);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x)
      EXPECT_EQ(mask.at(x, y), brute_in_triangle({double(x), double(y)}, {0, 0}, {4, 0}, {0, 4}));
}

TEST(Geometry, HullOfIdenticalPointsFails) {
  EXPECT_THROW(hull_mask(make_set({{2, 2}, {2, 2}, {2, 2}}), 5, 5), GeometryError);
  EXPECT_THROW(hull_mask(make_set({{0, 0}, {1, 1}, {2, 2}}), 5, 5), GeometryError);
}

TEST(Geometry, HullMaskIgnoresPointOrder) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto lm = random_set(rng, 12, 0, 31);
    std::vector<Point2> pts = lm.xy();
    rng.shuffle(std::span<Point2>(pts));
    EXPECT_EQ(hull_mask(lm, 32, 32), hull_mask(LandmarkSet::from_points(pts), 32, 32));
  }
}

TEST(Geometry, ConvexHullIsCounterclockwise) {
  const auto hull = convex_hull(std::vector<Point2>{{0, 0}, {2, 0}, {1, 1}, {2, 2}, {0, 2}, {1, 0}});
  ASSERT_EQ(hull.size(), 4u);
  double area = 0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& p = hull[i];
    const auto& q = hull[(i + 1) % hull.size()];
    area += p.x * q.y - q.x * p.y;
  }
  EXPECT_GT(area, 0);
}

TEST(Geometry, MaskImageRoundTrip) {
  const BinaryMask m = hull_mask(make_set({{1, 1}, {8, 2}, {4, 9}}), 10, 10);
  EXPECT_EQ(mask_from_image(mask_to_image(m)), m);
}
