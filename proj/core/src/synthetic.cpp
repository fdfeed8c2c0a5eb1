#include "stylemark/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "stylemark/error.hpp"
#include "stylemark/geometry.hpp"
#include "stylemark/image.hpp"
#include "stylemark/random.hpp"
#include "stylemark/raster.hpp"

namespace stylemark {

std::vector<Point2> template_shape() {
  std::vector<Point2> pts;
  pts.reserve(48);
  for (int k = 0; k < 12; ++k) {
    const double theta = (-15.0 + k * (210.0 / 11.0)) * std::numbers::pi / 180.0;
    pts.push_back({std::cos(theta), 0.1 + 0.85 * std::sin(theta)});
  }
  for (double side : {-1.0, 1.0}) {
    pts.push_back({side * 0.95, -0.35});
    pts.push_back({side * 0.88, -0.80});
    pts.push_back({side * 0.75, -1.25});
    pts.push_back({side * 0.35, -0.75});
  }
  for (double side : {-1.0, 1.0}) {
    for (int k = 0; k < 6; ++k) {
      const double theta = k * std::numbers::pi / 3.0;
      pts.push_back({side * 0.4 + 0.18 * std::cos(theta), -0.15 + 0.10 * std::sin(theta)});
    }
  }
  pts.insert(pts.end(), {{0.0, 0.20}, {-0.08, 0.12}, {0.08, 0.12}, {0.0, 0.28}});
  pts.insert(pts.end(), {{0.0, 0.38}, {-0.15, 0.45}, {0.15, 0.45}, {0.0, 0.50}});
  for (double side : {-1.0, 1.0}) {
    pts.push_back({side * 0.25, 0.32});
    pts.push_back({side * 0.40, 0.30});
    pts.push_back({side * 0.35, 0.42});
    pts.push_back({side * 0.20, 0.45});
  }
  return pts;
}

namespace {

using raster::Color;

Color random_color(Rng& rng, int lo, int hi) {
  auto channel = [&] { return static_cast<std::uint8_t>(lo + rng.uniform_index(hi - lo + 1)); };
  const auto r = channel();
  const auto g = channel();
  const auto b = channel();
  return {r, g, b};
}

Color shade(Color c, double f) {
  Color out{};
  for (int i = 0; i < 3; ++i) out[i] = static_cast<std::uint8_t>(std::clamp(c[i] * f, 0.0, 255.0));
  return out;
}

struct Face {
  std::vector<Point2> landmarks;  // pixels
  Point2 center;
  double radius = 0.0;
  double angle = 0.0;  // degrees
};

Face sample_face(Rng& rng, int size) {
  const auto base = template_shape();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<Point2> shape = base;
    // Region-level variation: eye spacing, ear spread, muzzle drop.
    const double eye_spread = rng.uniform(-0.06, 0.06);
    const double ear_spread = rng.uniform(-0.10, 0.10);
    const double muzzle = rng.uniform(-0.05, 0.05);
    const double aspect = rng.uniform(0.92, 1.08);
    for (std::size_t i = 0; i < shape.size(); ++i) {
      auto& p = shape[i];
      const double side = p.x < 0 ? -1.0 : 1.0;
      if (i >= 12 && i < 20) p.x += side * ear_spread;
      if (i >= 20 && i < 32) p.x += side * eye_spread;
      if (i >= 32) p.y += muzzle;
      p.y *= aspect;
      p.x += rng.uniform(-0.03, 0.03);
      p.y += rng.uniform(-0.03, 0.03);
    }
    Face face;
    face.radius = size * rng.uniform(0.22, 0.30);
    face.angle = rng.uniform(-12.0, 12.0);
    face.center = {size * 0.5 + size * rng.uniform(-0.06, 0.06),
                   size * 0.55 + size * rng.uniform(-0.05, 0.05)};
    const auto rot = AffineTransform::rotation(face.angle);
    bool inside = true;
    for (const auto& p : shape) {
      const Point2 q = rot.apply({p.x * face.radius, p.y * face.radius});
      const Point2 px{face.center.x + q.x, face.center.y + q.y};
      if (px.x < 1.0 || px.y < 1.0 || px.x > size - 2.0 || px.y > size - 2.0) inside = false;
      face.landmarks.push_back(px);
    }
    if (inside) return face;
  }
  throw Error("synthetic face generation failed to fit the canvas");
}

void render(Rng& rng, const Face& face, Image& img, Image* mask) {
  const int size = img.width();
  const Color top = random_color(rng, 20, 235);
  const Color bottom = random_color(rng, 20, 235);
  for (int y = 0; y < size; ++y) {
    const double t = static_cast<double>(y) / (size - 1);
    for (int x = 0; x < size; ++x) {
      const double noise = static_cast<double>(rng.uniform_index(21)) - 10.0;
      for (int c = 0; c < 3; ++c) {
        const double v = top[c] * (1 - t) + bottom[c] * t + noise;
        img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }

  const auto& lm = face.landmarks;
  const Color fur = random_color(rng, 60, 220);
  const Color dark = shade(fur, 0.55);
  const Color mask_on{255, 255, 255};
  const std::vector<Point2> left_ear{lm[12], lm[13], lm[14], lm[15]};
  const std::vector<Point2> right_ear{lm[16], lm[17], lm[18], lm[19]};
  const Point2 face_center{face.center.x, face.center.y + 0.05 * face.radius};
  for (Image* target : {&img, mask}) {
    if (!target) continue;
    const bool is_mask = target == mask;
    raster::fill_polygon(*target, left_ear, is_mask ? mask_on : dark);
    raster::fill_polygon(*target, right_ear, is_mask ? mask_on : dark);
    raster::fill_ellipse(*target, face_center, face.radius * 1.0, face.radius * 0.92, face.angle,
                         is_mask ? mask_on : fur);
  }

  // Stripes for texture.
  const int stripes = 2 + static_cast<int>(rng.uniform_index(4));
  for (int s = 0; s < stripes; ++s) {
    const double dx = rng.uniform(-0.5, 0.5) * face.radius;
    raster::draw_line(img, {face.center.x + dx, face.center.y - 0.9 * face.radius},
                      {face.center.x + dx * 0.6, face.center.y - 0.45 * face.radius}, 2, dark);
  }

  const Color iris = random_color(rng, 40, 200);
  for (int eye = 0; eye < 2; ++eye) {
    const int base = 20 + eye * 6;
    double cx = 0, cy = 0;
    for (int k = 0; k < 6; ++k) {
      cx += lm[base + k].x / 6.0;
      cy += lm[base + k].y / 6.0;
    }
    const double rx = 0.5 * std::hypot(lm[base].x - lm[base + 3].x, lm[base].y - lm[base + 3].y);
    raster::fill_ellipse(img, {cx, cy}, rx, rx * 0.6, face.angle, iris);
    raster::fill_ellipse(img, {cx, cy}, rx * 0.25, rx * 0.55, face.angle, {10, 10, 10});
  }
  const std::vector<Point2> nose{lm[33], lm[34], lm[35]};
  raster::fill_polygon(img, nose, {220, 130, 140});
  raster::draw_line(img, lm[35], lm[36], 1, {30, 20, 20});
  raster::draw_line(img, lm[36], lm[37], 1, {30, 20, 20});
  raster::draw_line(img, lm[36], lm[38], 1, {30, 20, 20});
  const Color whisker{235, 235, 225};
  for (int k = 40; k < 48; ++k) {
    const double dir = lm[k].x < face.center.x ? -1.0 : 1.0;
    raster::draw_line(img, lm[k], {lm[k].x + dir * 0.7 * face.radius, lm[k].y + rng.uniform(-4, 4)},
                      1, whisker);
  }
}

}  // namespace

DatasetManifest generate_synthetic_dataset(const std::filesystem::path& dir,
                                           const SyntheticOptions& options) {
  if (options.image_size < 32) throw Error("synthetic image size must be at least 32");
  std::filesystem::create_directories(dir / "images");
  if (options.write_masks) std::filesystem::create_directories(dir / "masks");

  DatasetManifest manifest;
  manifest.tag = "Root";
  manifest.seed = options.seed;
  manifest.landmark_count = kDefaultLandmarkCount;
  manifest.base_dir = dir;
  for (std::size_t i = 0; i < options.count; ++i) {
    const std::string id = fmt::format("cat{:04d}", i);
    Rng rng(derive_seed(options.seed, "synthetic", id));
    const Face face = sample_face(rng, options.image_size);
    Image img(options.image_size, options.image_size, 3);
    Image mask;
    if (options.write_masks) mask = Image(options.image_size, options.image_size, 1, 0);
    render(rng, face, img, options.write_masks ? &mask : nullptr);

    ImageRecord rec;
    rec.id = id;
    rec.image_path = "images/" + id + ".png";
    save_png(img, dir / rec.image_path);
    if (options.write_masks) {
      rec.mask_path = "masks/" + id + ".png";
      save_png(mask, dir / *rec.mask_path);
    }
    rec.width = options.image_size;
    rec.height = options.image_size;
    rec.landmarks = LandmarkSet::from_points(face.landmarks);
    rec.split = Split::train;
    manifest.records.push_back(std::move(rec));
  }
  save_manifest(manifest, dir / "root.manifest");
  return manifest;
}

}  // namespace stylemark
