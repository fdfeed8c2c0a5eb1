#include "stylemark/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "stylemark/error.hpp"

namespace stylemark {

namespace {

// Exact values at multiples of 90 degrees so quarter turns map pixel centers
// onto pixel centers.
void cos_sin_degrees(double degrees, double& c, double& s) {
  const double quarter = degrees / 90.0;
  if (quarter == std::floor(quarter)) {
    const long q = ((static_cast<long>(quarter) % 4) + 4) % 4;
    static constexpr double kCos[4] = {1, 0, -1, 0};
    static constexpr double kSin[4] = {0, 1, 0, -1};
    c = kCos[q];
    s = kSin[q];
    return;
  }
  const double r = degrees * std::numbers::pi / 180.0;
  c = std::cos(r);
  s = std::sin(r);
}

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

double cross(Point2 o, Point2 a, Point2 b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

AffineTransform AffineTransform::rotation(double degrees, Point2 center) {
  double c = 1, s = 0;
  cos_sin_degrees(degrees, c, s);
  AffineTransform t{c, s, -s, c, 0, 0};
  t.tx = center.x - (c * center.x + s * center.y);
  t.ty = center.y - (-s * center.x + c * center.y);
  return t;
}

AffineTransform AffineTransform::after(const AffineTransform& o) const noexcept {
  return {a * o.a + b * o.c,  a * o.b + b * o.d,  c * o.a + d * o.c,
          c * o.b + d * o.d,  a * o.tx + b * o.ty + tx, c * o.tx + d * o.ty + ty};
}

AffineTransform invert_transform(const AffineTransform& t) {
  const double det = t.determinant();
  if (det == 0.0 || !std::isfinite(det)) throw GeometryError("singular transform");
  const double ia = t.d / det;
  const double ib = -t.b / det;
  const double ic = -t.c / det;
  const double id = t.a / det;
  return {ia, ib, ic, id, -(ia * t.tx + ib * t.ty), -(ic * t.tx + id * t.ty)};
}

LandmarkSet apply_transform(const LandmarkSet& landmarks, const AffineTransform& t) {
  LandmarkSet out = landmarks;
  for (auto& p : out.points) {
    const Point2 q = t.apply({p.x, p.y});
    p.x = q.x;
    p.y = q.y;
  }
  return out;
}

CropBox landmark_bbox(const LandmarkSet& landmarks, double margin) {
  if (margin < 0.0) throw GeometryError("negative crop margin");
  if (landmarks.points.empty()) throw GeometryError("zero-extent bbox");
  double x0 = landmarks[0].x, x1 = x0, y0 = landmarks[0].y, y1 = y0;
  for (const auto& p : landmarks.points) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double extent = std::max(x1 - x0, y1 - y0);
  if (!(extent > 0.0)) throw GeometryError("zero-extent bbox");
  const double side = extent * (1.0 + 2.0 * margin);
  const double cx = 0.5 * (x0 + x1);
  const double cy = 0.5 * (y0 + y1);
  return {cx - 0.5 * side, cy - 0.5 * side, side};
}

PixelWindow pixel_window(const CropBox& box) {
  if (!(box.side > 0.0)) throw GeometryError("crop box side must be positive");
  const int x0 = static_cast<int>(std::floor(box.x0));
  const int y0 = static_cast<int>(std::floor(box.y0));
  const int wx = static_cast<int>(std::ceil(box.x0 + box.side)) - x0;
  const int wy = static_cast<int>(std::ceil(box.y0 + box.side)) - y0;
  return {x0, y0, std::max(wx, wy)};
}

CropResult crop_image(const Image& image, const CropBox& box) {
  const PixelWindow w = pixel_window(box);
  if (w.x0 >= image.width() || w.y0 >= image.height() || w.x0 + w.side <= 0 ||
      w.y0 + w.side <= 0) {
    throw GeometryError("crop box lies fully outside the image");
  }
  CropResult out{Image(w.side, w.side, image.channels(), 0),
                 AffineTransform::translation(-w.x0, -w.y0)};
  const int sx0 = std::max(0, w.x0);
  const int sy0 = std::max(0, w.y0);
  const int sx1 = std::min(image.width(), w.x0 + w.side);
  const int sy1 = std::min(image.height(), w.y0 + w.side);
  for (int y = sy0; y < sy1; ++y) {
    for (int x = sx0; x < sx1; ++x) {
      for (int c = 0; c < image.channels(); ++c) {
        out.image.at(x - w.x0, y - w.y0, c) = image.at(x, y, c);
      }
    }
  }
  return out;
}

RotateResult rotate_image(const Image& image, double degrees, std::uint8_t fill) {
  const Point2 center{(image.width() - 1) * 0.5, (image.height() - 1) * 0.5};
  const AffineTransform fwd = AffineTransform::rotation(degrees, center);
  const AffineTransform inv = invert_transform(fwd);
  RotateResult out{Image(image.width(), image.height(), image.channels(), fill), fwd};
  const int w = image.width();
  const int h = image.height();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Point2 src = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      const double sx = snap(src.x);
      const double sy = snap(src.y);
      if (sx < 0.0 || sy < 0.0 || sx > w - 1 || sy > h - 1) continue;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - x0;
      const double fy = sy - y0;
      for (int c = 0; c < image.channels(); ++c) {
        const double top = image.at(x0, y0, c) * (1.0 - fx) + image.at(x1, y0, c) * fx;
        const double bottom = image.at(x0, y1, c) * (1.0 - fx) + image.at(x1, y1, c) * fx;
        const double v = top * (1.0 - fy) + bottom * fy;
        out.image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

RotatedRecord rotate_augment(const ImageRecord& record, const Image& image, double degrees,
                             std::uint8_t fill) {
  if (std::abs(degrees) > 180.0) throw GeometryError("rotation angle outside [-180, 180]");
  if (image.width() != record.width || image.height() != record.height) {
    throw GeometryError("record '" + record.id + "': image size does not match record");
  }
  RotateResult rotated = rotate_image(image, degrees, fill);
  RotatedRecord out;
  out.image = std::move(rotated.image);
  out.record = record;
  out.record.id = record.id + "@rot";
  out.record.split = Split::derived;
  out.record.mask_path.reset();
  out.record.landmarks = apply_transform(record.landmarks, rotated.transform);
  out.record.lineage = Lineage{record.id, fmt::format("rotate:{}", degrees),
                               rotated.transform.row_major()};
  for (const auto& p : out.record.landmarks.points) {
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x < record.width && p.y < record.height)) {
      out.valid = false;
      break;
    }
  }
  return out;
}

std::size_t BinaryMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::vector<Point2> convex_hull(std::span<const Point2> points) {
  std::vector<Point2> pts(points.begin(), points.end());
  std::sort(pts.begin(), pts.end(), [](Point2 p, Point2 q) {
    return p.x < q.x || (p.x == q.x && p.y < q.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) throw GeometryError("hull needs at least three distinct points");

  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  if (hull.size() < 3) throw GeometryError("hull points are collinear");
  return hull;
}

BinaryMask hull_mask(const LandmarkSet& landmarks, int width, int height) {
  const auto xy = landmarks.xy();
  const auto hull = convex_hull(xy);
  BinaryMask mask(width, height);

  double scale = 0.0;
  for (const auto& p : hull) scale = std::max({scale, std::abs(p.x), std::abs(p.y)});
  const double eps = 1e-9 * std::max(1.0, scale * scale);

  double min_y = hull[0].y, max_y = hull[0].y;
  for (const auto& p : hull) {
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const int y_lo = std::max(0, static_cast<int>(std::ceil(min_y - 1e-9)));
  const int y_hi = std::min(height - 1, static_cast<int>(std::floor(max_y + 1e-9)));
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = 0; x < width; ++x) {
      const Point2 c{static_cast<double>(x), static_cast<double>(y)};
      bool inside = true;
      for (std::size_t i = 0; i < hull.size() && inside; ++i) {
        inside = cross(hull[i], hull[(i + 1) % hull.size()], c) >= -eps;
      }
      if (inside) mask.set(x, y);
    }
  }
  return mask;
}

Image mask_to_image(const BinaryMask& mask) {
  Image img(mask.width, mask.height, 1);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) img.data()[i] = mask.bits[i] ? 255 : 0;
  return img;
}

BinaryMask mask_from_image(const Image& image) {
  BinaryMask mask(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) mask.set(x, y, image.at(x, y, 0) >= 128);
  }
  return mask;
}

}  // namespace stylemark
