#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "stylemark/dataset.hpp"
#include "stylemark/geometry.hpp"

namespace stylemark {

// Per-image normalization constant d for NME, evaluated on ground truth.
struct BboxDiagonal {};
struct InterLandmark {
  int i = 0;
  int j = 1;
};
struct FixedNormalizer {
  double value = 1.0;
};

class Normalizer {
 public:
  Normalizer() = default;  // bbox diagonal
  Normalizer(BboxDiagonal) {}
  Normalizer(InterLandmark pair);
  Normalizer(FixedNormalizer fixed);

  // Throws MetricError when d is not positive.
  double resolve(const LandmarkSet& gt) const;

  // "bbox_diagonal", "inter_landmark:i,j" or "fixed:v".
  std::string describe() const;
  static Normalizer parse(const std::string& text);

 private:
  std::variant<BboxDiagonal, InterLandmark, FixedNormalizer> kind_;
};

// Named disjoint groups of landmark indices. The union may leave indices out.
class RegionMap {
 public:
  RegionMap() = default;
  // Throws MetricError on overlap, negative index, or an empty region.
  explicit RegionMap(std::vector<std::pair<std::string, std::vector<int>>> regions);

  static RegionMap whole_face(int landmark_count);
  // JSON object {"regions": {"name": [indices...], ...}}; region order follows the file.
  static RegionMap load(const std::filesystem::path& path);

  const std::vector<std::pair<std::string, std::vector<int>>>& regions() const noexcept {
    return regions_;
  }
  bool empty() const noexcept { return regions_.empty(); }
  // Throws MetricError if any index is >= landmark_count.
  void check_against(int landmark_count) const;

 private:
  std::vector<std::pair<std::string, std::vector<int>>> regions_;
};

// Predicted landmark sets keyed by image id.
struct PredictionSet {
  std::string tag;
  std::string ground_truth;  // path of the ground-truth manifest, as written in the file
  int landmark_count = kDefaultLandmarkCount;
  std::map<std::string, LandmarkSet> entries;

  friend bool operator==(const PredictionSet&, const PredictionSet&) = default;
};

// Header {"tag", "landmark_count", "ground_truth"} then {"id", "landmarks"} per line.
std::string serialize_predictions(const PredictionSet& predictions);
PredictionSet parse_predictions(std::string_view text);
PredictionSet load_predictions(const std::filesystem::path& path);
void save_predictions(const PredictionSet& predictions, const std::filesystem::path& path);

// 100 * mean_i |pred_i - gt_i| / d, in percent.
double nme(const LandmarkSet& pred, const LandmarkSet& gt, const Normalizer& norm = {});

struct FailureRate {
  std::size_t count = 0;
  double fraction = 0.0;
};

inline constexpr double kDefaultFailureThreshold = 10.0;

// Failures are entries strictly above `threshold`.
FailureRate failure_rate(std::span<const double> per_image,
                         double threshold = kDefaultFailureThreshold);

// NME restricted to each region; d is always computed on the full gt set.
std::map<std::string, double> per_region_nme(const LandmarkSet& pred, const LandmarkSet& gt,
                                             const RegionMap& regions,
                                             const Normalizer& norm = {});

double mask_iou(const BinaryMask& a, const BinaryMask& b);

struct MetricsReport {
  std::string config_tag;
  std::map<std::string, double> per_image;  // id -> NME percent
  double nme = 0.0;
  std::size_t fr_count = 0;
  double fr_fraction = 0.0;
  double threshold = kDefaultFailureThreshold;
  std::map<std::string, double> per_region;  // region -> macro mean over images
  std::optional<double> iou;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// Per-image region values, keyed by image id, then region name.
using RegionValues = std::map<std::string, std::map<std::string, double>>;

// Macro averages over images, summed in id order.
MetricsReport aggregate(const std::string& tag, const std::map<std::string, double>& per_image,
                        double threshold = kDefaultFailureThreshold,
                        const RegionValues* regions = nullptr,
                        std::span<const double> ious = {});

// Scores every ground-truth record. Throws MetricError naming the first id
// with no prediction.
MetricsReport score_predictions(const std::string& tag, const PredictionSet& predictions,
                                const DatasetManifest& gt, const Normalizer& norm = {},
                                const RegionMap* regions = nullptr,
                                double threshold = kDefaultFailureThreshold);

}  // namespace stylemark
