#pragma once

#include <chrono>
#include <filesystem>
#include <string>

#include "stylemark/dataset.hpp"
#include "stylemark/metrics.hpp"

namespace stylemark {

// Pointwise mean of training shapes normalized to centroid 0 and RMS radius 1.
//
// This is a geometric baseline that exercises the evaluation pipeline. It
// places the mean shape inside each record's ground-truth bounding box, so it
// never looks at pixels and its accuracy says nothing about a real detector.
struct MeanShapeModel {
  LandmarkSet mean_shape;  // canonical frame
  bool procrustes = false;
  // Bounding box of mean_shape in the canonical frame, used for placement.
  Point2 bbox_center;
  double bbox_half_diagonal = 0.0;

  friend bool operator==(const MeanShapeModel&, const MeanShapeModel&) = default;
};

struct FitOptions {
  // Rotation-align shapes (generalized Procrustes) before averaging.
  bool procrustes = false;
};

// Translates to centroid 0 and scales to RMS radius 1. Throws GeometryError for
// a shape whose points all coincide.
std::vector<Point2> normalize_shape(std::span<const Point2> shape);

// Result does not depend on record order. Throws Error for an empty manifest.
MeanShapeModel fit_mean_shape(const DatasetManifest& train, FitOptions options = {});

// Maps the mean shape into the record's landmark bounding box: the mean's own
// box center goes to the record's box center and its box half-diagonal is
// scaled to the record's. Throws GeometryError for a degenerate box.
LandmarkSet predict(const MeanShapeModel& model, const ImageRecord& record);

void save_model(const MeanShapeModel& model, const std::filesystem::path& path);
MeanShapeModel load_model(const std::filesystem::path& path);

struct DetectorBackend {
  enum class Kind { builtin, external };
  Kind kind = Kind::builtin;
  std::string command;
  std::chrono::seconds timeout{0};

  // "builtin" or "external:<cmd>".
  static DetectorBackend parse(const std::string& text);
  std::string id() const;
};

// One prediction per record. External detectors are invoked once per manifest
// as `cmd <manifest_path> <output_predictions_path>` with files placed under
// `work_dir`; a missing record is a ProtocolError naming its id.
PredictionSet evaluate(const DetectorBackend& backend, const MeanShapeModel& model,
                       const DatasetManifest& manifest, const std::filesystem::path& work_dir);

}  // namespace stylemark
