#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "stylemark/dataset.hpp"
#include "stylemark/image.hpp"

namespace stylemark {

// (x, y) -> (a*x + b*y + tx, c*x + d*y + ty)
struct AffineTransform {
  double a = 1.0, b = 0.0, c = 0.0, d = 1.0, tx = 0.0, ty = 0.0;

  static AffineTransform identity() { return {}; }
  static AffineTransform translation(double dx, double dy) { return {1, 0, 0, 1, dx, dy}; }
  // Counterclockwise as displayed (image y axis points down) about `center`.
  static AffineTransform rotation(double degrees, Point2 center = {});

  double determinant() const noexcept { return a * d - b * c; }
  Point2 apply(Point2 p) const noexcept { return {a * p.x + b * p.y + tx, c * p.x + d * p.y + ty}; }

  // (*this)(other(p))
  AffineTransform after(const AffineTransform& other) const noexcept;

  // Row-major 2x3: [a, b, tx, c, d, ty].
  std::array<double, 6> row_major() const noexcept { return {a, b, tx, c, d, ty}; }
  static AffineTransform from_row_major(const std::array<double, 6>& m) {
    return {m[0], m[1], m[3], m[4], m[2], m[5]};
  }

  friend bool operator==(const AffineTransform&, const AffineTransform&) = default;
};

// Throws GeometryError for a singular transform.
AffineTransform invert_transform(const AffineTransform& t);

LandmarkSet apply_transform(const LandmarkSet& landmarks, const AffineTransform& t);

// Square region; pixel (i, j) has its center at integer coordinates (i, j).
struct CropBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double side = 0.0;
  friend bool operator==(const CropBox&, const CropBox&) = default;
};

inline constexpr double kDefaultCropMargin = 0.10;

// Smallest square containing the landmark bounding box grown by `margin` of
// its extent on every side, centered on the box.
CropBox landmark_bbox(const LandmarkSet& landmarks, double margin = kDefaultCropMargin);

// Integer pixel window covering a CropBox: origin floored, and wide enough to
// include the pixel that contains the box's far edge.
struct PixelWindow {
  int x0 = 0;
  int y0 = 0;
  int side = 0;
};
PixelWindow pixel_window(const CropBox& box);

struct CropResult {
  Image image;
  AffineTransform transform;  // original frame -> crop frame, pure translation
};

// Zero-padded where the window leaves the image. Throws GeometryError if the
// window does not intersect the image.
CropResult crop_image(const Image& image, const CropBox& box);

struct RotateResult {
  Image image;
  AffineTransform transform;  // original frame -> rotated frame
};

// Rotation about the canvas center ((w-1)/2, (h-1)/2) with bilinear sampling;
// samples falling outside the source take `fill`. Canvas size is kept.
RotateResult rotate_image(const Image& image, double degrees, std::uint8_t fill = 0);

struct RotatedRecord {
  ImageRecord record;
  Image image;
  bool valid = true;  // false when a landmark left the canvas
};

// `image` holds the pixels of `record`. The output record id is
// "<id>@rot", lineage carries the parent id, the angle, and the transform.
// Image path and mask path are left for the caller to assign.
RotatedRecord rotate_augment(const ImageRecord& record, const Image& image, double degrees,
                             std::uint8_t fill = 0);

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major 0/1

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v = true) {
    bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }
  std::size_t count() const noexcept;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// Convex hull in counterclockwise order (math orientation), no collinear
// points. Throws GeometryError when fewer than three non-collinear points exist.
std::vector<Point2> convex_hull(std::span<const Point2> points);

// Filled convex hull; a pixel is set when its center lies inside or on the hull.
BinaryMask hull_mask(const LandmarkSet& landmarks, int width, int height);

// 8-bit single channel, 0/255.
Image mask_to_image(const BinaryMask& mask);
BinaryMask mask_from_image(const Image& image);

}  // namespace stylemark
