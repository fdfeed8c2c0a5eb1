#include "stylemark/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stylemark/error.hpp"
#include "stylemark/random.hpp"

namespace stylemark {

using nlohmann::json;

LandmarkSet LandmarkSet::from_points(std::span<const Point2> xy) {
  LandmarkSet set;
  set.points.reserve(xy.size());
  for (std::size_t i = 0; i < xy.size(); ++i) {
    set.points.push_back({xy[i].x, xy[i].y, static_cast<int>(i)});
  }
  return set;
}

std::vector<Point2> LandmarkSet::xy() const {
  std::vector<Point2> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back({p.x, p.y});
  return out;
}

std::string_view to_string(Split split) noexcept {
  switch (split) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::derived: return "derived";
  }
  return "train";
}

std::optional<Split> parse_split(std::string_view text) noexcept {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  if (text == "derived") return Split::derived;
  return std::nullopt;
}

namespace {

std::filesystem::path absolute_dir(const std::filesystem::path& dir) {
  if (dir.empty()) return std::filesystem::current_path();
  return std::filesystem::absolute(dir).lexically_normal();
}

std::string rebase(const std::string& relative, const std::filesystem::path& from,
                   const std::filesystem::path& to) {
  const std::filesystem::path p(relative);
  if (p.is_absolute()) return relative;
  const auto full = (absolute_dir(from) / p).lexically_normal();
  return full.lexically_relative(absolute_dir(to)).generic_string();
}

json record_to_json(const ImageRecord& r) {
  json landmarks = json::array();
  for (const auto& p : r.landmarks.points) landmarks.push_back({p.x, p.y});
  json j = json::object();
  j["id"] = r.id;
  j["image_path"] = r.image_path;
  j["width"] = r.width;
  j["height"] = r.height;
  j["split"] = std::string(to_string(r.split));
  j["landmarks"] = std::move(landmarks);
  if (r.mask_path) j["mask_path"] = *r.mask_path;
  if (r.lineage) {
    json lin = json::object();
    lin["parent"] = r.lineage->parent_id;
    lin["transform_id"] = r.lineage->transform_id;
    if (r.lineage->affine) lin["affine"] = *r.lineage->affine;
    j["lineage"] = std::move(lin);
  }
  return j;
}

double finite_or_nan(const json& v) {
  // JSON has no NaN literal; null is how a non-finite coordinate round-trips.
  if (v.is_null()) return std::nan("");
  return v.get<double>();
}

ImageRecord record_from_json(const json& j) {
  ImageRecord r;
  r.id = j.at("id").get<std::string>();
  r.image_path = j.at("image_path").get<std::string>();
  r.width = j.at("width").get<int>();
  r.height = j.at("height").get<int>();
  const auto split = parse_split(j.at("split").get<std::string>());
  if (!split) throw ParseError("record '" + r.id + "': unknown split");
  r.split = *split;
  const auto& pts = j.at("landmarks");
  if (!pts.is_array()) throw ParseError("record '" + r.id + "': landmarks must be an array");
  int index = 0;
  for (const auto& p : pts) {
    if (!p.is_array() || p.size() != 2) {
      throw ParseError("record '" + r.id + "': landmark " + std::to_string(index) +
                       " must be [x, y]");
    }
    r.landmarks.points.push_back({finite_or_nan(p[0]), finite_or_nan(p[1]), index++});
  }
  if (auto it = j.find("mask_path"); it != j.end() && !it->is_null()) {
    r.mask_path = it->get<std::string>();
  }
  if (auto it = j.find("lineage"); it != j.end() && !it->is_null()) {
    Lineage lin;
    lin.parent_id = it->at("parent").get<std::string>();
    lin.transform_id = it->at("transform_id").get<std::string>();
    if (auto a = it->find("affine"); a != it->end() && !a->is_null()) {
      lin.affine = a->get<std::array<double, 6>>();
    }
    r.lineage = std::move(lin);
  }
  return r;
}

}  // namespace

std::filesystem::path DatasetManifest::resolve(std::string_view relative) const {
  const std::filesystem::path p(relative);
  if (p.is_absolute() || base_dir.empty()) return p;
  return (base_dir / p).lexically_normal();
}

const ImageRecord* DatasetManifest::find(std::string_view id) const {
  for (const auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

ValidationOutcome validate_record(const ImageRecord& record, int landmark_count) {
  ValidationOutcome out;
  auto fail = [&](std::string field, std::string message) {
    out.violations.push_back({std::move(field), std::move(message)});
  };
  if (record.id.empty()) fail("id", "empty id");
  if (record.image_path.empty()) fail("image_path", "empty image path");
  if (record.width <= 0 || record.height <= 0) fail("width/height", "non-positive image size");

  const auto& pts = record.landmarks.points;
  if (static_cast<int>(pts.size()) != landmark_count) {
    fail("landmarks", "expected " + std::to_string(landmark_count) + " points, got " +
                          std::to_string(pts.size()));
  }
  std::set<int> seen;
  bool duplicate = false;
  bool out_of_order = false;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    if (!seen.insert(p.index).second) duplicate = true;
    if (p.index != static_cast<int>(i)) out_of_order = true;
    const std::string field = "landmarks[" + std::to_string(i) + "]";
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      fail(field, "non-finite coordinate");
    } else if (p.x < 0.0 || p.y < 0.0 || p.x >= record.width || p.y >= record.height) {
      fail(field, "out of bounds");
    }
  }
  if (duplicate) {
    fail("landmarks", "index not unique");
  } else if (out_of_order) {
    fail("landmarks", "indices not in order 0..n-1");
  }
  return out;
}

std::string serialize_manifest(const DatasetManifest& m) {
  json header = json::object();
  header["tag"] = m.tag;
  header["seed"] = m.seed;
  header["landmark_count"] = m.landmark_count;
  if (m.parent) header["parent"] = *m.parent;
  std::string out = header.dump();
  out += '\n';
  for (const auto& r : m.records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        m.tag = j.at("tag").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.landmark_count = j.value("landmark_count", kDefaultLandmarkCount);
        if (auto it = j.find("parent"); it != j.end() && !it->is_null()) {
          m.parent = it->get<std::string>();
        }
        if (m.tag.empty()) throw ParseError("line 1: empty manifest tag");
        if (m.landmark_count <= 0) throw ParseError("line 1: landmark_count must be positive");
        have_header = true;
        continue;
      }
      ImageRecord r = record_from_json(j);
      const auto outcome = validate_record(r, m.landmark_count);
      if (!outcome.ok()) {
        const auto& v = outcome.violations.front();
        throw ValidationError(r.id, v.field + ": " + v.message);
      }
      if (!ids.insert(r.id).second) throw ValidationError(r.id, "id: duplicate record id");
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw ParseError("manifest has no header line");
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str(), path.parent_path());
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  const auto dest_dir = path.parent_path();
  const DatasetManifest* to_write = &manifest;
  DatasetManifest rebased;
  if (!manifest.base_dir.empty() && absolute_dir(manifest.base_dir) != absolute_dir(dest_dir)) {
    rebased = manifest;
    for (auto& r : rebased.records) {
      r.image_path = rebase(r.image_path, manifest.base_dir, dest_dir);
      if (r.mask_path) r.mask_path = rebase(*r.mask_path, manifest.base_dir, dest_dir);
    }
    to_write = &rebased;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  out << serialize_manifest(*to_write);
  out.flush();
  if (!out) throw IoError("write failed for manifest '" + path.string() + "'");
}

std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          std::size_t n_train,
                                                          std::size_t n_test,
                                                          std::uint64_t seed) {
  const std::size_t n = manifest.records.size();
  if (n_train + n_test > n) {
    throw Error("split: requested " + std::to_string(n_train) + "+" + std::to_string(n_test) +
                " records but manifest '" + manifest.tag + "' has " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<std::size_t> train_idx(order.begin(), order.begin() + n_train);
  std::vector<std::size_t> test_idx(order.begin() + n_train, order.begin() + n_train + n_test);
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  auto make = [&](std::string tag, const std::vector<std::size_t>& idx, Split split) {
    DatasetManifest out;
    out.tag = std::move(tag);
    out.seed = seed;
    out.landmark_count = manifest.landmark_count;
    out.parent = manifest.tag;
    out.base_dir = manifest.base_dir;
    out.records.reserve(idx.size());
    for (auto i : idx) {
      out.records.push_back(manifest.records[i]);
      out.records.back().split = split;
    }
    return out;
  };
  return {make("Train", train_idx, Split::train), make("Test", test_idx, Split::test)};
}

DatasetManifest concat_manifests(std::string tag, std::span<const DatasetManifest* const> parts) {
  DatasetManifest out;
  out.tag = std::move(tag);
  if (parts.empty()) return out;
  out.seed = parts.front()->seed;
  out.landmark_count = parts.front()->landmark_count;
  out.base_dir = parts.front()->base_dir;
  std::string parent;
  std::set<std::string> ids;
  for (const auto* part : parts) {
    if (part->landmark_count != out.landmark_count) {
      throw Error("concat: manifests disagree on landmark count");
    }
    if (!parent.empty()) parent += '+';
    parent += part->tag;
    for (const auto& r : part->records) {
      if (!ids.insert(r.id).second) throw ValidationError(r.id, "id: duplicate across union");
      ImageRecord copy = r;
      if (part->base_dir != out.base_dir) {
        copy.image_path = rebase(r.image_path, part->base_dir, out.base_dir);
        if (r.mask_path) copy.mask_path = rebase(*r.mask_path, part->base_dir, out.base_dir);
      }
      out.records.push_back(std::move(copy));
    }
  }
  out.parent = parent;
  return out;
}

}  // namespace stylemark
