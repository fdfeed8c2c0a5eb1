#include "stylemark/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "stylemark/error.hpp"

namespace stylemark {

using nlohmann::json;

Normalizer::Normalizer(InterLandmark pair) : kind_(pair) {
  if (pair.i == pair.j || pair.i < 0 || pair.j < 0) {
    throw MetricError("inter_landmark normalizer needs two distinct indices");
  }
}

Normalizer::Normalizer(FixedNormalizer fixed) : kind_(fixed) {
  if (!(fixed.value > 0.0)) throw MetricError("fixed normalizer must be positive");
}

double Normalizer::resolve(const LandmarkSet& gt) const {
  double d = 0.0;
  if (std::holds_alternative<BboxDiagonal>(kind_)) {
    if (gt.points.empty()) throw MetricError("zero normalizer");
    double x0 = gt[0].x, x1 = x0, y0 = gt[0].y, y1 = y0;
    for (const auto& p : gt.points) {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
    d = std::hypot(x1 - x0, y1 - y0);
  } else if (const auto* pair = std::get_if<InterLandmark>(&kind_)) {
    const auto n = static_cast<int>(gt.size());
    if (pair->i >= n || pair->j >= n) throw MetricError("inter_landmark index out of range");
    d = std::hypot(gt[pair->i].x - gt[pair->j].x, gt[pair->i].y - gt[pair->j].y);
  } else {
    d = std::get<FixedNormalizer>(kind_).value;
  }
  if (!(d > 0.0) || !std::isfinite(d)) throw MetricError("zero normalizer");
  return d;
}

std::string Normalizer::describe() const {
  if (std::holds_alternative<BboxDiagonal>(kind_)) return "bbox_diagonal";
  if (const auto* pair = std::get_if<InterLandmark>(&kind_)) {
    return fmt::format("inter_landmark:{},{}", pair->i, pair->j);
  }
  return fmt::format("fixed:{}", std::get<FixedNormalizer>(kind_).value);
}

Normalizer Normalizer::parse(const std::string& text) {
  if (text.empty() || text == "bbox_diagonal") return Normalizer{};
  try {
    if (text.rfind("inter_landmark:", 0) == 0) {
      const auto rest = text.substr(15);
      const auto comma = rest.find(',');
      if (comma == std::string::npos) throw MetricError("bad normalizer '" + text + "'");
      return Normalizer(InterLandmark{std::stoi(rest.substr(0, comma)),
                                      std::stoi(rest.substr(comma + 1))});
    }
    if (text.rfind("fixed:", 0) == 0) return Normalizer(FixedNormalizer{std::stod(text.substr(6))});
  } catch (const std::logic_error&) {
    throw MetricError("bad normalizer '" + text + "'");
  }
  throw MetricError("unknown normalizer '" + text + "'");
}

RegionMap::RegionMap(std::vector<std::pair<std::string, std::vector<int>>> regions)
    : regions_(std::move(regions)) {
  std::set<int> seen;
  std::set<std::string> names;
  for (const auto& [name, indices] : regions_) {
    if (indices.empty()) throw MetricError("region '" + name + "' is empty");
    if (!names.insert(name).second) throw MetricError("region '" + name + "' listed twice");
    for (int i : indices) {
      if (i < 0) throw MetricError("region '" + name + "' has a negative index");
      if (!seen.insert(i).second) {
        throw MetricError(fmt::format("landmark {} appears in more than one region", i));
      }
    }
  }
}

RegionMap RegionMap::whole_face(int landmark_count) {
  std::vector<int> all(static_cast<std::size_t>(landmark_count));
  for (int i = 0; i < landmark_count; ++i) all[i] = i;
  return RegionMap({{"face", std::move(all)}});
}

RegionMap RegionMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open region map '" + path.string() + "'");
  try {
    // ordered_json keeps file order for the regions object.
    const auto doc = nlohmann::ordered_json::parse(in);
    std::vector<std::pair<std::string, std::vector<int>>> regions;
    for (const auto& [name, indices] : doc.at("regions").items()) {
      regions.emplace_back(name, indices.get<std::vector<int>>());
    }
    return RegionMap(std::move(regions));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("region map '" + path.string() + "': " + e.what());
  }
}

void RegionMap::check_against(int landmark_count) const {
  for (const auto& [name, indices] : regions_) {
    for (int i : indices) {
      if (i >= landmark_count) {
        throw MetricError(fmt::format("region '{}' index {} exceeds landmark count {}", name, i,
                                      landmark_count));
      }
    }
  }
}

std::string serialize_predictions(const PredictionSet& p) {
  json header = json::object();
  header["tag"] = p.tag;
  header["landmark_count"] = p.landmark_count;
  header["ground_truth"] = p.ground_truth;
  std::string out = header.dump();
  out += '\n';
  for (const auto& [id, set] : p.entries) {
    json pts = json::array();
    for (const auto& lm : set.points) pts.push_back({lm.x, lm.y});
    json row = json::object();
    row["id"] = id;
    row["landmarks"] = std::move(pts);
    out += row.dump();
    out += '\n';
  }
  return out;
}

PredictionSet parse_predictions(std::string_view text) {
  PredictionSet p;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!have_header) {
        p.tag = j.value("tag", std::string{});
        p.landmark_count = j.value("landmark_count", kDefaultLandmarkCount);
        p.ground_truth = j.value("ground_truth", std::string{});
        have_header = true;
        continue;
      }
      const auto id = j.at("id").get<std::string>();
      std::vector<Point2> xy;
      for (const auto& pt : j.at("landmarks")) {
        xy.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
      }
      if (static_cast<int>(xy.size()) != p.landmark_count) {
        throw ValidationError(id, fmt::format("prediction has {} points, expected {}", xy.size(),
                                              p.landmark_count));
      }
      if (!p.entries.emplace(id, LandmarkSet::from_points(xy)).second) {
        throw ValidationError(id, "duplicate prediction");
      }
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("predictions line {}: {}", line_no, e.what()));
    }
  }
  if (!have_header) throw ParseError("prediction file has no header line");
  return p;
}

PredictionSet load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open predictions '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_predictions(buf.str());
}

void save_predictions(const PredictionSet& predictions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write predictions '" + path.string() + "'");
  out << serialize_predictions(predictions);
  if (!out.flush()) throw IoError("write failed for '" + path.string() + "'");
}

namespace {

double point_error(const Landmark& p, const Landmark& q) { return std::hypot(p.x - q.x, p.y - q.y); }

void check_counts(const LandmarkSet& pred, const LandmarkSet& gt) {
  if (pred.size() != gt.size()) {
    throw MetricError(fmt::format("landmark count mismatch: {} predicted vs {} ground truth",
                                  pred.size(), gt.size()));
  }
  if (gt.points.empty()) throw MetricError("empty landmark set");
}

}  // namespace

double nme(const LandmarkSet& pred, const LandmarkSet& gt, const Normalizer& norm) {
  check_counts(pred, gt);
  const double d = norm.resolve(gt);
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) sum += point_error(pred[i], gt[i]);
  return 100.0 * (sum / static_cast<double>(gt.size())) / d;
}

FailureRate failure_rate(std::span<const double> per_image, double threshold) {
  if (!(threshold > 0.0)) throw MetricError("failure threshold must be positive");
  if (per_image.empty()) throw MetricError("failure rate of an empty list");
  const auto count = static_cast<std::size_t>(
      std::count_if(per_image.begin(), per_image.end(), [&](double v) { return v > threshold; }));
  return {count, static_cast<double>(count) / static_cast<double>(per_image.size())};
}

std::map<std::string, double> per_region_nme(const LandmarkSet& pred, const LandmarkSet& gt,
                                             const RegionMap& regions, const Normalizer& norm) {
  check_counts(pred, gt);
  regions.check_against(static_cast<int>(gt.size()));
  const double d = norm.resolve(gt);
  std::map<std::string, double> out;
  for (const auto& [name, indices] : regions.regions()) {
    double sum = 0.0;
    for (int i : indices) sum += point_error(pred[i], gt[i]);
    out[name] = 100.0 * (sum / static_cast<double>(indices.size())) / d;
  }
  return out;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.width != b.width || a.height != b.height || a.bits.size() != b.bits.size()) {
    throw MetricError("mask dimension mismatch");
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0;
    const bool y = b.bits[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  if (uni == 0) throw MetricError("IoU of two empty masks");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

MetricsReport aggregate(const std::string& tag, const std::map<std::string, double>& per_image,
                        double threshold, const RegionValues* regions,
                        std::span<const double> ious) {
  if (per_image.empty()) throw MetricError("cannot aggregate an empty result set");
  MetricsReport r;
  r.config_tag = tag;
  r.per_image = per_image;
  r.threshold = threshold;
  std::vector<double> values;
  values.reserve(per_image.size());
  double sum = 0.0;
  for (const auto& [id, v] : per_image) {
    values.push_back(v);
    sum += v;
  }
  r.nme = sum / static_cast<double>(values.size());
  const auto fr = failure_rate(values, threshold);
  r.fr_count = fr.count;
  r.fr_fraction = fr.fraction;

  if (regions && !regions->empty()) {
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (const auto& [id, by_region] : *regions) {
      for (const auto& [name, v] : by_region) {
        auto& slot = acc[name];
        slot.first += v;
        slot.second += 1;
      }
    }
    for (const auto& [name, slot] : acc) {
      r.per_region[name] = slot.first / static_cast<double>(slot.second);
    }
  }
  if (!ious.empty()) {
    double s = 0.0;
    for (double v : ious) s += v;
    r.iou = s / static_cast<double>(ious.size());
  }
  return r;
}

MetricsReport score_predictions(const std::string& tag, const PredictionSet& predictions,
                                const DatasetManifest& gt, const Normalizer& norm,
                                const RegionMap* regions, double threshold) {
  std::map<std::string, double> per_image;
  RegionValues region_values;
  for (const auto& rec : gt.records) {
    const auto it = predictions.entries.find(rec.id);
    if (it == predictions.entries.end()) {
      throw MetricError("no prediction for record '" + rec.id + "'");
    }
    per_image[rec.id] = nme(it->second, rec.landmarks, norm);
    if (regions && !regions->empty()) {
      region_values[rec.id] = per_region_nme(it->second, rec.landmarks, *regions, norm);
    }
  }
  return aggregate(tag, per_image, threshold, regions ? &region_values : nullptr);
}

}  // namespace stylemark
