#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace stylemark {

inline constexpr int kDefaultLandmarkCount = 48;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

struct Landmark {
  double x = 0.0;
  double y = 0.0;
  int index = 0;
  friend bool operator==(const Landmark&, const Landmark&) = default;
};

// Ordered landmark annotation of one face. A valid set holds exactly the
// manifest's landmark count with indices 0..n-1 in order.
struct LandmarkSet {
  std::vector<Landmark> points;

  LandmarkSet() = default;
  explicit LandmarkSet(std::vector<Landmark> pts) : points(std::move(pts)) {}

  // Indices are assigned from position.
  static LandmarkSet from_points(std::span<const Point2> xy);

  std::size_t size() const noexcept { return points.size(); }
  const Landmark& operator[](std::size_t i) const { return points[i]; }
  std::vector<Point2> xy() const;

  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;
};

enum class Split { train, test, derived };

std::string_view to_string(Split split) noexcept;
std::optional<Split> parse_split(std::string_view text) noexcept;

// Where a derived record came from. `affine` holds the coordinate map from the
// parent's landmark frame to this record's frame as [a, b, tx, c, d, ty].
struct Lineage {
  std::string parent_id;
  std::string transform_id;
  std::optional<std::array<double, 6>> affine;
  friend bool operator==(const Lineage&, const Lineage&) = default;
};

struct ImageRecord {
  std::string id;
  std::string image_path;  // relative to the manifest's directory
  LandmarkSet landmarks;
  std::optional<std::string> mask_path;
  int width = 0;
  int height = 0;
  Split split = Split::train;
  std::optional<Lineage> lineage;
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct DatasetManifest {
  std::string tag;
  std::uint64_t seed = 0;
  int landmark_count = kDefaultLandmarkCount;
  std::optional<std::string> parent;
  std::vector<ImageRecord> records;
  // Directory that relative record paths resolve against. Not serialized and
  // not part of equality.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(std::string_view relative) const;
  const ImageRecord* find(std::string_view id) const;

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.tag == b.tag && a.seed == b.seed && a.landmark_count == b.landmark_count &&
           a.parent == b.parent && a.records == b.records;
  }
};

struct Violation {
  std::string field;
  std::string message;
};

struct ValidationOutcome {
  std::vector<Violation> violations;
  bool ok() const noexcept { return violations.empty(); }
};

ValidationOutcome validate_record(const ImageRecord& record,
                                  int landmark_count = kDefaultLandmarkCount);

// One JSON header line, then one JSON record per line.
std::string serialize_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir = {});

// Throws ParseError on malformed input and ValidationError naming the first
// offending record; nothing is skipped.
DatasetManifest load_manifest(const std::filesystem::path& path);

// Record paths are rewritten relative to the destination directory when the
// manifest's base_dir differs from it.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Seeded uniform selection of disjoint train/test subsets. Each subset keeps
// the input order of its records.
std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          std::size_t n_train,
                                                          std::size_t n_test,
                                                          std::uint64_t seed);

// Union of manifests with disjoint ids; throws ValidationError on a collision.
DatasetManifest concat_manifests(std::string tag, std::span<const DatasetManifest* const> parts);

}  // namespace stylemark
