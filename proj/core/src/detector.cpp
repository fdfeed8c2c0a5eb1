#include "stylemark/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "stylemark/error.hpp"
#include "stylemark/process.hpp"

namespace stylemark {

std::vector<Point2> normalize_shape(std::span<const Point2> shape) {
  if (shape.empty()) throw GeometryError("empty shape");
  double cx = 0.0, cy = 0.0;
  for (const auto& p : shape) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(shape.size());
  cy /= static_cast<double>(shape.size());
  double sq = 0.0;
  for (const auto& p : shape) sq += (p.x - cx) * (p.x - cx) + (p.y - cy) * (p.y - cy);
  const double rms = std::sqrt(sq / static_cast<double>(shape.size()));
  if (!(rms > 0.0)) throw GeometryError("degenerate shape: all points coincide");
  std::vector<Point2> out;
  out.reserve(shape.size());
  for (const auto& p : shape) out.push_back({(p.x - cx) / rms, (p.y - cy) / rms});
  return out;
}

namespace {

using Shape = std::vector<Point2>;

bool shape_less(const Shape& a, const Shape& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].x != b[i].x) return a[i].x < b[i].x;
    if (a[i].y != b[i].y) return a[i].y < b[i].y;
  }
  return false;
}

// Sums in a canonical (sorted) order so the mean is independent of input order.
Shape pointwise_mean(std::vector<Shape> shapes) {
  std::sort(shapes.begin(), shapes.end(), shape_less);
  Shape mean(shapes.front().size());
  for (const auto& s : shapes) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      mean[i].x += s[i].x;
      mean[i].y += s[i].y;
    }
  }
  const auto n = static_cast<double>(shapes.size());
  for (auto& p : mean) {
    p.x /= n;
    p.y /= n;
  }
  return mean;
}

// Rotation of a centered `shape` that best aligns it with centered `ref`.
Shape rotate_onto(const Shape& shape, const Shape& ref) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    num += shape[i].x * ref[i].y - shape[i].y * ref[i].x;
    den += shape[i].x * ref[i].x + shape[i].y * ref[i].y;
  }
  const double theta = std::atan2(num, den);
  const double c = std::cos(theta), s = std::sin(theta);
  Shape out(shape.size());
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out[i] = {c * shape[i].x - s * shape[i].y, s * shape[i].x + c * shape[i].y};
  }
  return out;
}

struct Box {
  Point2 center;
  double half_diagonal = 0.0;
};

template <typename Points>
Box bounding_box(const Points& pts) {
  double x0 = pts[0].x, x1 = x0, y0 = pts[0].y, y1 = y0;
  for (const auto& p : pts) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return {{0.5 * (x0 + x1), 0.5 * (y0 + y1)}, 0.5 * std::hypot(x1 - x0, y1 - y0)};
}

}  // namespace

MeanShapeModel fit_mean_shape(const DatasetManifest& train, FitOptions options) {
  if (train.records.empty()) throw Error("fit_mean_shape: empty training manifest");
  std::vector<Shape> shapes;
  shapes.reserve(train.records.size());
  const auto n_points = train.records.front().landmarks.size();
  for (const auto& rec : train.records) {
    if (rec.landmarks.size() != n_points) {
      throw ValidationError(rec.id, "landmark count differs from the rest of the training set");
    }
    try {
      shapes.push_back(normalize_shape(rec.landmarks.xy()));
    } catch (const GeometryError& e) {
      throw ValidationError(rec.id, e.what());
    }
  }

  Shape mean = normalize_shape(pointwise_mean(shapes));
  if (options.procrustes) {
    for (int iter = 0; iter < 100; ++iter) {
      std::vector<Shape> aligned;
      aligned.reserve(shapes.size());
      for (const auto& s : shapes) aligned.push_back(rotate_onto(s, mean));
      Shape next = normalize_shape(pointwise_mean(std::move(aligned)));
      double change = 0.0;
      for (std::size_t i = 0; i < next.size(); ++i) {
        change = std::max(change, std::hypot(next[i].x - mean[i].x, next[i].y - mean[i].y));
      }
      mean = std::move(next);
      if (change < 1e-12) break;
    }
  }

  MeanShapeModel model;
  model.procrustes = options.procrustes;
  model.mean_shape = LandmarkSet::from_points(mean);
  const Box box = bounding_box(mean);
  model.bbox_center = box.center;
  model.bbox_half_diagonal = box.half_diagonal;
  return model;
}

LandmarkSet predict(const MeanShapeModel& model, const ImageRecord& record) {
  if (record.landmarks.points.empty()) throw GeometryError("record '" + record.id + "' has no landmarks");
  if (record.landmarks.size() != model.mean_shape.size()) {
    throw ValidationError(record.id, "landmark count differs from the model");
  }
  const Box box = bounding_box(record.landmarks.points);
  if (!(box.half_diagonal > 0.0) || !(model.bbox_half_diagonal > 0.0)) {
    throw GeometryError("record '" + record.id + "': degenerate landmark bbox");
  }
  const double scale = box.half_diagonal / model.bbox_half_diagonal;
  LandmarkSet out = model.mean_shape;
  for (auto& p : out.points) {
    p.x = box.center.x + scale * (p.x - model.bbox_center.x);
    p.y = box.center.y + scale * (p.y - model.bbox_center.y);
  }
  return out;
}

void save_model(const MeanShapeModel& model, const std::filesystem::path& path) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : model.mean_shape.points) pts.push_back({p.x, p.y});
  nlohmann::json j = {{"kind", "mean_shape"},
                      {"procrustes", model.procrustes},
                      {"mean_shape", pts},
                      {"bbox_center", {model.bbox_center.x, model.bbox_center.y}},
                      {"bbox_half_diagonal", model.bbox_half_diagonal}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write model '" + path.string() + "'");
  out << j.dump() << '\n';
  if (!out.flush()) throw IoError("write failed for '" + path.string() + "'");
}

MeanShapeModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model '" + path.string() + "'");
  try {
    const auto j = nlohmann::json::parse(in);
    MeanShapeModel m;
    m.procrustes = j.at("procrustes").get<bool>();
    std::vector<Point2> xy;
    for (const auto& p : j.at("mean_shape")) xy.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    m.mean_shape = LandmarkSet::from_points(xy);
    m.bbox_center = {j.at("bbox_center").at(0).get<double>(), j.at("bbox_center").at(1).get<double>()};
    m.bbox_half_diagonal = j.at("bbox_half_diagonal").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("model '" + path.string() + "': " + e.what());
  }
}

DetectorBackend DetectorBackend::parse(const std::string& text) {
  DetectorBackend b;
  if (text == "builtin" || text == "mean-shape") {
    b.kind = Kind::builtin;
  } else if (text.rfind("external:", 0) == 0 && text.size() > 9) {
    b.kind = Kind::external;
    b.command = text.substr(9);
  } else {
    throw Error("unknown detector backend '" + text + "' (expected builtin or external:<cmd>)");
  }
  return b;
}

std::string DetectorBackend::id() const { return kind == Kind::builtin ? "builtin" : "external"; }

PredictionSet evaluate(const DetectorBackend& backend, const MeanShapeModel& model,
                       const DatasetManifest& manifest, const std::filesystem::path& work_dir) {
  if (backend.kind == DetectorBackend::Kind::builtin) {
    PredictionSet out;
    out.tag = manifest.tag;
    out.landmark_count = manifest.landmark_count;
    for (const auto& rec : manifest.records) out.entries.emplace(rec.id, predict(model, rec));
    return out;
  }

  const std::string name = "detect-" + manifest.tag;
  const auto dir = work_dir / "detector";
  std::filesystem::create_directories(dir);
  const auto manifest_path = std::filesystem::absolute(dir / (name + ".manifest"));
  const auto output_path = std::filesystem::absolute(dir / (name + ".predictions"));
  save_manifest(manifest, manifest_path);
  std::filesystem::remove(output_path);
  const auto proc = run_process(backend.command, {manifest_path.string(), output_path.string()},
                                work_dir, dir / (name + ".stdout.log"),
                                dir / (name + ".stderr.log"), backend.timeout);
  if (proc.timed_out) throw BackendError(name, "detector timed out", proc.diagnostics);
  if (proc.exit_code != 0) {
    throw BackendError(name, fmt::format("detector exited with status {}: {}", proc.exit_code,
                                         proc.diagnostics),
                       proc.diagnostics);
  }
  if (!std::filesystem::exists(output_path)) {
    throw ProtocolError(name, "detector did not write " + output_path.string());
  }
  PredictionSet predictions;
  try {
    predictions = load_predictions(output_path);
  } catch (const Error& e) {
    throw ProtocolError(name, std::string("unreadable predictions: ") + e.what());
  }
  for (const auto& rec : manifest.records) {
    if (!predictions.entries.contains(rec.id)) {
      throw ProtocolError(name, "no prediction for record '" + rec.id + "'");
    }
  }
  if (predictions.tag.empty()) predictions.tag = manifest.tag;
  return predictions;
}

}  // namespace stylemark
