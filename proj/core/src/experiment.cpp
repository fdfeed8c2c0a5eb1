#include "stylemark/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "stylemark/detector.hpp"
#include "stylemark/error.hpp"
#include "stylemark/geometry.hpp"
#include "stylemark/image.hpp"
#include "stylemark/random.hpp"
#include "stylemark/selection.hpp"
#include "stylemark/style.hpp"

namespace stylemark {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

std::string TrainTerm::name() const {
  switch (kind) {
    case Kind::train: return "Train";
    case Kind::train_st: return "TrainST";
    case Kind::train_sst: return fmt::format("TrainSST({})", n);
    case Kind::train_rotated: return "TrainRotated";
  }
  return {};
}

TrainTerm TrainTerm::parse(const std::string& text) {
  if (text == "Train") return {Kind::train, 0};
  if (text == "TrainST") return {Kind::train_st, 0};
  if (text == "TrainRotated") return {Kind::train_rotated, 0};
  if (text.starts_with("TrainSST(") && text.ends_with(")")) {
    const std::string digits = text.substr(9, text.size() - 10);
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), ::isdigit)) {
      const auto n = std::stoull(digits);
      if (n == 0) throw ParseError("TrainSST pool size must be positive");
      return {Kind::train_sst, static_cast<std::size_t>(n)};
    }
  }
  throw ParseError("unknown training term '" + text + "'");
}

namespace {

std::string to_string(TestSource s) { return s == TestSource::test ? "Test" : "TestST"; }
std::string to_string(Preprocessing p) { return p == Preprocessing::cf_st ? "CF-ST" : "FB-ST"; }
std::string to_string(ExperimentKind k) {
  return k == ExperimentKind::evaluation ? "evaluation" : "preprocessing_study";
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

}  // namespace

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["label"] = c.label;
  j["kind"] = to_string(c.kind);
  json terms = json::array();
  for (const auto& t : c.train_source) terms.push_back(t.name());
  j["train_source"] = terms;
  j["test_source"] = to_string(c.test_source);
  j["backend"] = c.backend;
  j["backend_timeout"] = c.backend_timeout;
  j["backend_params"] = c.backend_params;
  j["detector"] = c.detector;
  j["procrustes"] = c.procrustes;
  j["seeds"] = {{"split", c.seeds.split}, {"pairing", c.seeds.pairing}, {"rotation", c.seeds.rotation}};
  j["preprocessing"] = to_string(c.preprocessing);
  j["normalizer"] = c.normalizer;
  j["region_map"] = c.region_map;
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["crop_margin"] = c.crop_margin;
  j["fr_threshold"] = c.fr_threshold;
  j["rotation_max_degrees"] = c.rotation_max_degrees;
  j["forbid_self"] = c.forbid_self;
  j["study_pairs"] = c.study_pairs;
  j["loss_checkpoints"] = c.loss_checkpoints;
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("config: expected a JSON object");
  static const std::vector<std::string> known{
      "name", "label", "kind", "train_source", "test_source", "backend", "backend_timeout",
      "backend_params", "detector", "procrustes", "seeds", "preprocessing", "normalizer",
      "region_map", "n_train", "n_test", "crop_margin", "fr_threshold", "rotation_max_degrees",
      "forbid_self", "study_pairs", "loss_checkpoints"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ParseError("config: unknown field '" + key + "'");
    }
  }
  ExperimentConfig c;
  try {
    c.name = j.at("name").get<std::string>();
    c.label = get_or<std::string>(j, "label", c.name);
    const auto kind = get_or<std::string>(j, "kind", "evaluation");
    if (kind == "evaluation") {
      c.kind = ExperimentKind::evaluation;
    } else if (kind == "preprocessing_study") {
      c.kind = ExperimentKind::preprocessing_study;
    } else {
      throw ParseError("config: unknown kind '" + kind + "'");
    }
    if (j.contains("train_source")) {
      c.train_source.clear();
      for (const auto& t : j.at("train_source")) c.train_source.push_back(TrainTerm::parse(t.get<std::string>()));
    }
    const auto test = get_or<std::string>(j, "test_source", "Test");
    if (test == "Test") {
      c.test_source = TestSource::test;
    } else if (test == "TestST") {
      c.test_source = TestSource::test_st;
    } else {
      throw ParseError("config: unknown test_source '" + test + "'");
    }
    c.backend = get_or<std::string>(j, "backend", c.backend);
    c.backend_timeout = get_or<std::uint64_t>(j, "backend_timeout", c.backend_timeout);
    c.backend_params = get_or<std::map<std::string, std::string>>(j, "backend_params", {});
    c.detector = get_or<std::string>(j, "detector", c.detector);
    c.procrustes = get_or<bool>(j, "procrustes", c.procrustes);
    if (j.contains("seeds")) {
      const auto& s = j.at("seeds");
      c.seeds.split = get_or<std::uint64_t>(s, "split", c.seeds.split);
      c.seeds.pairing = get_or<std::uint64_t>(s, "pairing", c.seeds.pairing);
      c.seeds.rotation = get_or<std::uint64_t>(s, "rotation", c.seeds.rotation);
    }
    const auto pre = get_or<std::string>(j, "preprocessing", "CF-ST");
    if (pre == "CF-ST") {
      c.preprocessing = Preprocessing::cf_st;
    } else if (pre == "FB-ST") {
      c.preprocessing = Preprocessing::fb_st;
    } else {
      throw ParseError("config: unknown preprocessing '" + pre + "'");
    }
    c.normalizer = get_or<std::string>(j, "normalizer", c.normalizer);
    c.region_map = get_or<std::string>(j, "region_map", c.region_map);
    c.n_train = get_or<std::size_t>(j, "n_train", c.n_train);
    c.n_test = get_or<std::size_t>(j, "n_test", c.n_test);
    c.crop_margin = get_or<double>(j, "crop_margin", c.crop_margin);
    c.fr_threshold = get_or<double>(j, "fr_threshold", c.fr_threshold);
    c.rotation_max_degrees = get_or<double>(j, "rotation_max_degrees", c.rotation_max_degrees);
    c.forbid_self = get_or<bool>(j, "forbid_self", c.forbid_self);
    c.study_pairs = get_or<std::size_t>(j, "study_pairs", c.study_pairs);
    c.loss_checkpoints = get_or<std::vector<int>>(j, "loss_checkpoints", c.loss_checkpoints);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (c.name.empty() || c.name.find_first_of("/\\") != std::string::npos) {
    throw ParseError("config: name must be non-empty and contain no path separators");
  }
  if (c.kind == ExperimentKind::evaluation && c.train_source.empty()) {
    throw ParseError("config: train_source is empty");
  }
  if (c.crop_margin < 0.0) throw ParseError("config: crop_margin must be non-negative");
  if (c.rotation_max_degrees < 0.0 || c.rotation_max_degrees > 180.0) {
    throw ParseError("config: rotation_max_degrees must lie in [0, 180]");
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

void save_config(const ExperimentConfig& config, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write config " + path.string());
  out << config_to_json(config);
}

std::vector<ExperimentConfig> builtin_configs(std::size_t n_train, std::size_t n_test) {
  using K = TrainTerm::Kind;
  const TrainTerm train{K::train, 0};
  const TrainTerm st{K::train_st, 0};
  const TrainTerm rot{K::train_rotated, 0};
  auto sst = [](std::size_t n) { return TrainTerm{K::train_sst, n}; };

  std::vector<ExperimentConfig> out;
  auto add = [&](std::string name, std::string label, std::vector<TrainTerm> terms,
                 TestSource test = TestSource::test) {
    ExperimentConfig c;
    c.name = std::move(name);
    c.label = std::move(label);
    c.train_source = std::move(terms);
    c.test_source = test;
    c.n_train = n_train;
    c.n_test = n_test;
    out.push_back(std::move(c));
  };
  add("Baseline", "Baseline (Original Only)", {train});
  add("Baseline-TestST", "Baseline on TestST", {train}, TestSource::test_st);
  add("TrainST", "TrainST (Random Style)", {st});
  add("TrainSST(1)", "TrainSST (N=1)", {sst(1)});
  add("TrainSST(10)", "TrainSST (N=10)", {sst(10)});
  add("TrainSST(250)", "TrainSST (N=250)", {sst(250)});
  add("Train+TrainRotated", "Train + TrainRotated", {train, rot});
  add("Train+TrainST", "Train + TrainST (Random)", {train, st});
  add("Train+TrainSST(1)", "Train + TrainSST (N=1)", {train, sst(1)});
  add("Train+TrainSST(10)", "Train + TrainSST (N=10)", {train, sst(10)});
  add("Train+TrainSST(250)", "Train + TrainSST (N=250)", {train, sst(250)});

  ExperimentConfig study;
  study.name = "CF-ST-vs-FB-ST";
  study.label = "CF-ST vs FB-ST";
  study.kind = ExperimentKind::preprocessing_study;
  study.train_source.clear();
  study.n_train = n_train;
  study.n_test = n_test;
  out.push_back(std::move(study));
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

namespace {

std::string short_hash(const std::string& key) {
  return fmt::format("{:08x}", hash_string(key) & 0xffffffffULL);
}

std::string file_safe(std::string s) {
  for (char& ch : s) {
    if (ch == '(' || ch == ')' || ch == '+' || ch == ' ') ch = '-';
  }
  while (!s.empty() && s.back() == '-') s.pop_back();
  return s;
}

struct StoredSet {
  DatasetManifest manifest;  // as reloaded from disk
  std::string file;          // relative to <out>/manifests
  std::size_t failures = 0;
};

BinaryMask record_mask(const DatasetManifest& m, const ImageRecord& r) {
  if (r.mask_path) {
    BinaryMask mask = mask_from_image(load_png(m.resolve(*r.mask_path)));
    if (mask.width == r.width && mask.height == r.height) return mask;
    spdlog::warn("mask of '{}' has the wrong size; using the landmark hull", r.id);
  }
  return hull_mask(r.landmarks, r.width, r.height);
}

class Pipeline {
 public:
  Pipeline(const DatasetManifest& root, fs::path out, RunOptions options)
      : root_(root), out_(std::move(out)), options_(options) {
    for (const char* sub : {"manifests", "reports", "plots", "images", "pairings", "rankings", "logs"}) {
      fs::create_directories(out_ / sub);
    }
  }

  ExperimentResult run(const ExperimentConfig& config);

 private:
  template <typename Fn>
  decltype(auto) stage(const std::string& name, Fn&& fn) {
    try {
      return fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
  }

  std::string base_key(const ExperimentConfig& c, Preprocessing pre) const {
    return fmt::format("root={}:{}|split={}:{}:{}|pre={}|margin={}", root_.tag, root_.records.size(),
                       c.seeds.split, c.n_train, c.n_test, to_string(pre), c.crop_margin);
  }

  const StoredSet& memo(const std::string& key, const std::string& name,
                        const std::function<std::pair<DatasetManifest, std::size_t>()>& build) {
    if (auto it = sets_.find(key); it != sets_.end()) return it->second;
    auto [manifest, failures] = build();
    const std::string file = file_safe(name) + "_" + short_hash(key) + ".manifest";
    save_manifest(manifest, out_ / "manifests" / file);
    StoredSet stored{load_manifest(out_ / "manifests" / file), file, failures};
    spdlog::info("set {} ({} records) -> manifests/{}", name, stored.manifest.records.size(), file);
    return sets_.emplace(key, std::move(stored)).first->second;
  }

  void split(const ExperimentConfig& c);
  const StoredSet& prepared(const ExperimentConfig& c, Preprocessing pre, bool train);
  DatasetManifest crop_set(const DatasetManifest& src, double margin, const std::string& tag,
                           const std::string& image_dir);
  const std::vector<RankedImage>& ranking(const ExperimentConfig& c);
  const StoredSet& stylized(const ExperimentConfig& c, const TrainTerm& term);
  const StoredSet& rotated(const ExperimentConfig& c);
  const StoredSet& test_st(const ExperimentConfig& c);
  const StoredSet& term_set(const ExperimentConfig& c, const TrainTerm& term);
  StyleBackend backend(const ExperimentConfig& c) const;

  ExperimentResult evaluate_config(const ExperimentConfig& c);
  ExperimentResult study_config(const ExperimentConfig& c);

  const DatasetManifest& root_;
  fs::path out_;
  RunOptions options_;
  std::map<std::string, StoredSet> sets_;
  std::map<std::string, std::vector<RankedImage>> rankings_;
};

StyleBackend Pipeline::backend(const ExperimentConfig& c) const {
  StyleBackend b = StyleBackend::parse(c.backend);
  b.timeout = std::chrono::seconds(c.backend_timeout);
  return b;
}

void Pipeline::split(const ExperimentConfig& c) {
  const std::string key = base_key(c, Preprocessing::fb_st);
  if (sets_.contains("train|" + key)) return;
  auto [train, test] = stage("split", [&] {
    return split_dataset(root_, c.n_train, c.n_test, c.seeds.split);
  });
  memo("train|" + key, "Train", [&] { return std::pair{train, std::size_t{0}}; });
  memo("test|" + key, "Test", [&] { return std::pair{test, std::size_t{0}}; });
}

DatasetManifest Pipeline::crop_set(const DatasetManifest& src, double margin, const std::string& tag,
                                   const std::string& image_dir) {
  fs::create_directories(out_ / "images" / image_dir);
  DatasetManifest m;
  m.tag = tag;
  m.seed = src.seed;
  m.landmark_count = src.landmark_count;
  m.parent = src.tag;
  m.base_dir = out_ / "images";
  for (const auto& r : src.records) {
    const CropBox box = landmark_bbox(r.landmarks, margin);
    const CropResult crop = crop_image(load_png(src.resolve(r.image_path)), box);
    ImageRecord out = r;
    out.image_path = image_dir + "/" + r.id + ".png";
    save_png(crop.image, m.resolve(out.image_path));
    out.width = crop.image.width();
    out.height = crop.image.height();
    out.landmarks = apply_transform(r.landmarks, crop.transform);
    if (r.mask_path) {
      const CropResult mask = crop_image(load_png(src.resolve(*r.mask_path)), box);
      out.mask_path = image_dir + "/" + r.id + ".mask.png";
      save_png(mask.image, m.resolve(*out.mask_path));
    }
    out.lineage = Lineage{r.id, fmt::format("crop:margin={}", margin), crop.transform.row_major()};
    const auto outcome = validate_record(out, m.landmark_count);
    if (!outcome.ok()) {
      throw ValidationError(out.id, outcome.violations.front().field + ": " +
                                        outcome.violations.front().message);
    }
    m.records.push_back(std::move(out));
  }
  return m;
}

const StoredSet& Pipeline::prepared(const ExperimentConfig& c, Preprocessing pre, bool train) {
  split(c);
  const std::string raw_key = (train ? "train|" : "test|") + base_key(c, Preprocessing::fb_st);
  if (pre == Preprocessing::fb_st) return sets_.at(raw_key);
  const std::string key = (train ? "train|" : "test|") + base_key(c, pre);
  const std::string name = train ? "Train" : "Test";
  const DatasetManifest& src = sets_.at(raw_key).manifest;
  return memo(key, name + "-crop", [&] {
    return stage("crop:" + name, [&] {
      return std::pair{crop_set(src, c.crop_margin, name, "crop_" + short_hash(key)), std::size_t{0}};
    });
  });
}

const std::vector<RankedImage>& Pipeline::ranking(const ExperimentConfig& c) {
  const std::string key = fmt::format("rank|{}|det={}|gpa={}|norm={}", base_key(c, c.preprocessing),
                                      c.detector, c.procrustes, c.normalizer);
  if (auto it = rankings_.find(key); it != rankings_.end()) return it->second;
  const DatasetManifest& train = prepared(c, c.preprocessing, true).manifest;
  auto ranked = stage("rank", [&] {
    const MeanShapeModel model = fit_mean_shape(train, {c.procrustes});
    DetectorBackend det = DetectorBackend::parse(c.detector);
    det.timeout = std::chrono::seconds(c.backend_timeout);
    const PredictionSet preds = evaluate(det, model, train, out_);
    return rank_by_nme(preds, train, Normalizer::parse(c.normalizer));
  });
  save_ranking(ranked, out_ / "rankings" / ("train_" + short_hash(key) + ".ranking"));
  return rankings_.emplace(key, std::move(ranked)).first->second;
}

const StoredSet& Pipeline::stylized(const ExperimentConfig& c, const TrainTerm& term) {
  const std::string pool_key = term.kind == TrainTerm::Kind::train_sst
                                   ? fmt::format("sst:{}|det={}|gpa={}|norm={}", term.n, c.detector,
                                                 c.procrustes, c.normalizer)
                                   : std::string("all");
  std::string params;
  for (const auto& [k, v] : c.backend_params) params += k + "=" + v + ";";
  const std::string key =
      fmt::format("st|{}|pool={}|backend={}|params={}|pairing={}|forbid_self={}",
                  base_key(c, c.preprocessing), pool_key, c.backend, params, c.seeds.pairing,
                  c.forbid_self);
  if (auto it = sets_.find(key); it != sets_.end()) return it->second;

  const DatasetManifest& train = prepared(c, c.preprocessing, true).manifest;
  const std::string name = term.name();
  const StylePool pool = stage("select:" + name, [&] {
    return term.kind == TrainTerm::Kind::train_sst ? sst_select(ranking(c), term.n) : full_pool(train);
  });
  const Pairing pairing = stage("pair:" + name, [&] {
    Pairing p = assign_styles(train, pool, derive_seed(c.seeds.pairing, name), c.forbid_self);
    if (term.kind != TrainTerm::Kind::train_sst) p.pool = fmt::format("all:{}", pool.members.size());
    return p;
  });
  const std::string stem = file_safe(name) + "_" + short_hash(key);
  save_pairing(pairing, out_ / "pairings" / (stem + ".pairing"));

  return memo(key, name, [&] {
    return stage("style:" + name, [&] {
      const auto jobs = make_style_jobs(pairing.pairs, train, train, c.seeds.pairing, stem + ".",
                                        c.backend_params, !c.forbid_self || pool.members.size() == 1);
      StyleRun run = run_jobs(jobs, backend(c), options_.parallelism, out_, name, c.seeds.pairing);
      run.manifest.parent = train.tag;
      return std::pair{std::move(run.manifest), run.failures.size()};
    });
  });
}

const StoredSet& Pipeline::rotated(const ExperimentConfig& c) {
  const std::string key = fmt::format("rot|{}|seed={}|max={}", base_key(c, c.preprocessing),
                                      c.seeds.rotation, c.rotation_max_degrees);
  if (auto it = sets_.find(key); it != sets_.end()) return it->second;
  const DatasetManifest& train = prepared(c, c.preprocessing, true).manifest;
  return memo(key, "TrainRotated", [&] {
    return stage("rotate", [&] {
      const std::string dir = "rot_" + short_hash(key);
      fs::create_directories(out_ / "images" / dir);
      DatasetManifest m;
      m.tag = "TrainRotated";
      m.seed = c.seeds.rotation;
      m.landmark_count = train.landmark_count;
      m.parent = train.tag;
      m.base_dir = out_ / "images";
      std::size_t dropped = 0;
      for (const auto& r : train.records) {
        Rng rng(derive_seed(c.seeds.rotation, r.id));
        const double angle = rng.uniform(-c.rotation_max_degrees, c.rotation_max_degrees);
        RotatedRecord rot = rotate_augment(r, load_png(train.resolve(r.image_path)), angle);
        if (!rot.valid) {
          spdlog::warn("rotation of '{}' by {:.3f} degrees moves a landmark off the canvas; dropped",
                       r.id, angle);
          ++dropped;
          continue;
        }
        rot.record.image_path = dir + "/" + rot.record.id + ".png";
        save_png(rot.image, m.resolve(rot.record.image_path));
        if (r.mask_path) {
          const RotateResult mask = rotate_image(load_png(train.resolve(*r.mask_path)), angle, 0);
          rot.record.mask_path = dir + "/" + rot.record.id + ".mask.png";
          save_png(mask_to_image(mask_from_image(mask.image)), m.resolve(*rot.record.mask_path));
        }
        m.records.push_back(std::move(rot.record));
      }
      return std::pair{std::move(m), dropped};
    });
  });
}

const StoredSet& Pipeline::test_st(const ExperimentConfig& c) {
  std::string params;
  for (const auto& [k, v] : c.backend_params) params += k + "=" + v + ";";
  const std::string key = fmt::format("testst|{}|backend={}|params={}|pairing={}",
                                      base_key(c, c.preprocessing), c.backend, params,
                                      c.seeds.pairing);
  if (auto it = sets_.find(key); it != sets_.end()) return it->second;
  const DatasetManifest& train = prepared(c, c.preprocessing, true).manifest;
  const DatasetManifest& test = prepared(c, c.preprocessing, false).manifest;
  const Pairing pairing = stage("pair:TestST", [&] {
    return make_test_st(test, train, derive_seed(c.seeds.pairing, "TestST"));
  });
  const std::string stem = "TestST_" + short_hash(key);
  save_pairing(pairing, out_ / "pairings" / (stem + ".pairing"));
  return memo(key, "TestST", [&] {
    return stage("style:TestST", [&] {
      const auto jobs = make_style_jobs(pairing.pairs, test, train, c.seeds.pairing, stem + ".",
                                        c.backend_params, true);
      StyleRun run = run_jobs(jobs, backend(c), options_.parallelism, out_, "TestST", c.seeds.pairing);
      run.manifest.parent = test.tag;
      return std::pair{std::move(run.manifest), run.failures.size()};
    });
  });
}

const StoredSet& Pipeline::term_set(const ExperimentConfig& c, const TrainTerm& term) {
  switch (term.kind) {
    case TrainTerm::Kind::train: return prepared(c, c.preprocessing, true);
    case TrainTerm::Kind::train_rotated: return rotated(c);
    default: return stylized(c, term);
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

json result_envelope(const ExperimentResult& r) {
  json j;
  j["config"] = r.config_name;
  j["label"] = r.label;
  j["provenance"] = r.provenance;
  j["set_sizes"] = r.set_sizes;
  j["style_failures"] = r.style_failures;
  if (r.report) j["metrics"] = json::parse(report_to_json(*r.report));
  if (r.study) {
    json modes = json::array();
    for (const auto& m : r.study->modes) {
      json jm;
      jm["mode"] = m.mode;
      jm["pairs"] = m.pairs;
      jm["failed"] = m.failed;
      jm["mean_iou"] = m.mean_iou ? json(*m.mean_iou) : json(nullptr);
      json loss = json::object();
      for (const auto& [epoch, v] : m.mean_loss_at) loss[std::to_string(epoch)] = v;
      jm["mean_loss_at"] = loss;
      modes.push_back(jm);
    }
    j["study"] = {{"modes", modes}};
  }
  return j;
}

ExperimentResult Pipeline::evaluate_config(const ExperimentConfig& c) {
  ExperimentResult result;
  result.config_name = c.name;
  result.label = c.label.empty() ? c.name : c.label;

  std::vector<const DatasetManifest*> parts;
  std::string union_tag;
  for (const auto& term : c.train_source) {
    const StoredSet& s = term_set(c, term);
    parts.push_back(&s.manifest);
    union_tag += (union_tag.empty() ? "" : "+") + term.name();
    result.provenance.push_back(s.file);
    result.set_sizes[term.name()] = s.manifest.records.size();
    // Rotation drops show up in the set size, not here.
    if (term.kind == TrainTerm::Kind::train_st || term.kind == TrainTerm::Kind::train_sst) {
      result.style_failures += s.failures;
    }
  }
  const StoredSet& test = c.test_source == TestSource::test ? prepared(c, c.preprocessing, false)
                                                            : test_st(c);
  result.provenance.push_back(test.file);
  if (c.test_source == TestSource::test_st) result.style_failures += test.failures;

  const DatasetManifest train = stage("union", [&] { return concat_manifests(union_tag, parts); });
  std::size_t expected = 0;
  for (const auto* p : parts) expected += p->records.size();
  if (train.records.size() != expected) {
    throw StageError("union", fmt::format("union holds {} records, expected {}", train.records.size(), expected));
  }
  result.set_sizes["train"] = train.records.size();
  result.set_sizes["test"] = test.manifest.records.size();

  const MeanShapeModel model = stage("train", [&] { return fit_mean_shape(train, {c.procrustes}); });
  save_model(model, out_ / "logs" / (c.name + ".model.json"));

  const Normalizer norm = stage("evaluate", [&] { return Normalizer::parse(c.normalizer); });
  std::optional<RegionMap> regions;
  if (!c.region_map.empty()) {
    regions = stage("evaluate", [&] {
      RegionMap rm = RegionMap::load(c.region_map);
      rm.check_against(test.manifest.landmark_count);
      return rm;
    });
  }
  PredictionSet preds = stage("evaluate", [&] {
    DetectorBackend det = DetectorBackend::parse(c.detector);
    det.timeout = std::chrono::seconds(c.backend_timeout);
    return evaluate(det, model, test.manifest, out_);
  });
  preds.tag = c.name;
  preds.ground_truth = "../manifests/" + test.file;
  save_predictions(preds, out_ / "reports" / (c.name + ".predictions"));

  MetricsReport report = stage("evaluate", [&] {
    return score_predictions(c.name, preds, test.manifest, norm, regions ? &*regions : nullptr,
                             c.fr_threshold);
  });
  if (c.test_source == TestSource::test_st) {
    // Mask agreement between each stylized test image and its content image.
    const DatasetManifest& content = prepared(c, c.preprocessing, false).manifest;
    report.iou = stage("evaluate", [&] {
      double sum = 0.0;
      for (const auto& r : test.manifest.records) {
        const ImageRecord* src = content.find(r.lineage->parent_id);
        if (!src) throw Error("stylized record '" + r.id + "' has no content record");
        sum += mask_iou(record_mask(content, *src), record_mask(test.manifest, r));
      }
      return sum / static_cast<double>(test.manifest.records.size());
    });
  }
  result.report = std::move(report);
  return result;
}

ExperimentResult Pipeline::study_config(const ExperimentConfig& c) {
  ExperimentResult result;
  result.config_name = c.name;
  result.label = c.label.empty() ? c.name : c.label;
  result.study.emplace();

  const DatasetManifest& full = prepared(c, Preprocessing::fb_st, true).manifest;
  const DatasetManifest& cropped = prepared(c, Preprocessing::cf_st, true).manifest;
  if (full.records.size() < 2) throw StageError("study", "need at least two training images");

  // Same content/style pairs for both modes.
  Pairing pairing;
  pairing.seed = c.seeds.pairing;
  pairing.pool = fmt::format("study:{}", c.study_pairs);
  {
    Rng rng(derive_seed(c.seeds.pairing, "study", c.name));
    std::vector<std::size_t> order(full.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    const std::size_t n = std::min(c.study_pairs, order.size());
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t ci = order[k];
      std::size_t si = rng.uniform_index(order.size() - 1);
      if (si >= ci) ++si;
      pairing.pairs.emplace_back(full.records[ci].id, full.records[si].id);
    }
    std::sort(pairing.pairs.begin(), pairing.pairs.end());
  }
  const std::string hash = short_hash(fmt::format("study|{}|{}|{}|{}", base_key(c, Preprocessing::cf_st),
                                                  c.backend, c.seeds.pairing, c.study_pairs));
  save_pairing(pairing, out_ / "pairings" / (file_safe(c.name) + "_" + hash + ".pairing"));

  std::vector<std::pair<std::string, LossCurve>> curves;
  for (const auto& [mode, source] : {std::pair{std::string("CF-ST"), &cropped},
                                     std::pair{std::string("FB-ST"), &full}}) {
    const std::string tag = "Study-" + mode;
    const std::string key = fmt::format("study|{}|{}", mode, hash);
    const StoredSet& set = memo(key, tag, [&] {
      return stage("style:" + tag, [&] {
        const auto jobs = make_style_jobs(pairing.pairs, *source, *source, c.seeds.pairing,
                                          tag + "_" + hash + ".", c.backend_params, false);
        StyleRun run = run_jobs(jobs, backend(c), options_.parallelism, out_, tag, c.seeds.pairing);
        run.manifest.parent = source->tag;
        for (const auto& res : run.results) {
          if (res.loss_curve) write_loss_curve(*res.loss_curve, out_ / "logs" / (res.job_id + ".loss.csv"));
        }
        return std::pair{std::move(run.manifest), run.failures.size()};
      });
    });
    result.provenance.push_back(set.file);

    StudyMode m;
    m.mode = mode;
    m.pairs = pairing.pairs.size();
    m.failed = set.failures;
    stage("study:" + mode, [&] {
      double iou_sum = 0.0;
      std::vector<LossCurve> job_curves;
      for (const auto& r : set.manifest.records) {
        const ImageRecord* src = source->find(r.lineage->parent_id);
        if (!src) throw Error("stylized record '" + r.id + "' has no content record");
        iou_sum += mask_iou(record_mask(*source, *src), record_mask(set.manifest, r));
        const fs::path loss = out_ / "logs" / (r.id + ".loss.csv");
        if (fs::exists(loss)) job_curves.push_back(parse_loss_curve(loss));
      }
      if (!set.manifest.records.empty()) {
        m.mean_iou = iou_sum / static_cast<double>(set.manifest.records.size());
      }
      for (int epoch : c.loss_checkpoints) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& curve : job_curves) {
          if (auto v = curve.total_at(epoch)) {
            sum += *v;
            ++n;
          }
        }
        if (n > 0) m.mean_loss_at[epoch] = sum / static_cast<double>(n);
      }
      if (!job_curves.empty()) {
        LossCurve mean = job_curves.front();
        bool aligned = true;
        for (std::size_t k = 1; k < job_curves.size() && aligned; ++k) {
          const auto& other = job_curves[k];
          if (other.rows.size() != mean.rows.size()) {
            aligned = false;
            break;
          }
          for (std::size_t i = 0; i < mean.rows.size(); ++i) {
            if (other.rows[i].epoch != mean.rows[i].epoch) {
              aligned = false;
              break;
            }
            mean.rows[i].total += other.rows[i].total;
            mean.rows[i].appearance += other.rows[i].appearance;
            mean.rows[i].structure += other.rows[i].structure;
            mean.rows[i].identity += other.rows[i].identity;
          }
        }
        if (aligned) {
          const double n = static_cast<double>(job_curves.size());
          for (auto& row : mean.rows) {
            row.total /= n;
            row.appearance /= n;
            row.structure /= n;
            row.identity /= n;
          }
          m.mean_curve = mean;
          curves.emplace_back(mode, mean);
        } else {
          spdlog::warn("{}: loss curves use different epochs; no mean curve", mode);
        }
      }
      return 0;
    });
    result.set_sizes[mode] = set.manifest.records.size();
    result.style_failures += set.failures;
    result.study->modes.push_back(std::move(m));
  }
  if (!curves.empty()) {
    emit_plot(loss_plot(curves, out_ / "plots" / (file_safe(c.name) + "-loss.png")));
  }
  return result;
}

ExperimentResult Pipeline::run(const ExperimentConfig& c) {
  const auto start = std::chrono::steady_clock::now();
  spdlog::info("experiment {}: {}", c.name, json::parse(config_to_json(c)).dump());
  save_config(c, out_ / "logs" / (c.name + ".config.json"));
  ExperimentResult result =
      c.kind == ExperimentKind::evaluation ? evaluate_config(c) : study_config(c);

  const json envelope = result_envelope(result);
  write_text(out_ / "reports" / (c.name + ".json"), envelope.dump(2) + "\n");
  if (result.report) {
    write_text(out_ / "reports" / (c.name + ".txt"), format_report_text(*result.report));
    write_text(out_ / "reports" / (c.name + ".csv"), format_report_csv(*result.report));
  }
  if (result.study) {
    std::string text = fmt::format("{}\n", result.label);
    for (const auto& m : result.study->modes) {
      text += fmt::format("{:<6} pairs {} failed {} iou {}", m.mode, m.pairs, m.failed,
                          m.mean_iou ? fmt::format("{:.4f}", *m.mean_iou) : std::string("n/a"));
      for (const auto& [epoch, v] : m.mean_loss_at) text += fmt::format(" loss@{} {:.4f}", epoch, v);
      text += "\n";
    }
    write_text(out_ / "reports" / (c.name + ".txt"), text);
  }
  result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  spdlog::info("experiment {} finished in {:.2f}s", c.name, result.wall_time);
  return result;
}

}  // namespace

std::vector<ExperimentResult> run_experiments(const std::vector<ExperimentConfig>& configs,
                                              const DatasetManifest& root, const fs::path& out_dir,
                                              const RunOptions& options) {
  if (options.parallelism == 0) throw Error("parallelism must be at least 1");
  std::vector<std::string> names;
  for (const auto& c : configs) {
    if (std::find(names.begin(), names.end(), c.name) != names.end()) {
      throw Error("duplicate experiment name '" + c.name + "'");
    }
    names.push_back(c.name);
  }
  Pipeline pipeline(root, out_dir, options);
  std::vector<ExperimentResult> results;
  json timing = json::object();
  for (const auto& c : configs) {
    results.push_back(pipeline.run(c));
    timing[c.name] = results.back().wall_time;
  }
  write_text(out_dir / "logs" / "timing.json", timing.dump(2) + "\n");
  return results;
}

ExperimentResult run(const ExperimentConfig& config, const DatasetManifest& root,
                     const fs::path& out_dir, const RunOptions& options) {
  return run_experiments({config}, root, out_dir, options).front();
}

double degradation_pct(double baseline_nme, double config_nme) {
  if (!(baseline_nme > 0.0)) throw MetricError("baseline NME must be positive");
  return 100.0 * (config_nme - baseline_nme) / baseline_nme;
}

double retention_pct(double baseline_nme, double config_nme) {
  if (!(baseline_nme > 0.0) || !(config_nme > 0.0)) throw MetricError("NME must be positive");
  return 100.0 * std::min(1.0, baseline_nme / config_nme);
}

ComparisonTable compare(const std::vector<ExperimentResult>& results) {
  const auto base = std::find_if(results.begin(), results.end(), [](const ExperimentResult& r) {
    return r.config_name == "Baseline" && r.report;
  });
  if (base == results.end()) throw Error("comparison needs a result named 'Baseline'");
  const double b = base->report->nme;
  ComparisonTable table;
  for (const auto& r : results) {
    if (!r.report) continue;
    ComparisonRow row;
    row.configuration = r.label.empty() ? r.config_name : r.label;
    row.nme = r.report->nme;
    row.fr_count = r.report->fr_count;
    row.fr_fraction = r.report->fr_fraction;
    row.delta_nme = row.nme - b;
    if (b > 0.0) {
      row.degradation_pct = degradation_pct(b, row.nme);
      if (row.nme > 0.0) row.retention_pct = retention_pct(b, row.nme);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::vector<ExperimentResult> load_results(const fs::path& results_dir) {
  const fs::path reports = results_dir / "reports";
  if (!fs::is_directory(reports)) throw IoError("no reports directory under " + results_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(reports)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  // Keep the order the sweep ran in when the timing log is available.
  std::vector<std::string> order;
  if (fs::exists(results_dir / "logs" / "timing.json")) {
    std::ifstream in(results_dir / "logs" / "timing.json");
    try {
      const json timing = json::parse(in);
      for (const auto& [name, v] : timing.items()) order.push_back(name);
    } catch (const json::exception&) {
      order.clear();
    }
  }

  std::vector<ExperimentResult> results;
  for (const auto& file : files) {
    std::ifstream in(file, std::ios::binary);
    json j;
    try {
      j = json::parse(in);
      ExperimentResult r;
      r.config_name = j.at("config").get<std::string>();
      r.label = j.value("label", r.config_name);
      r.provenance = j.value("provenance", std::vector<std::string>{});
      r.set_sizes = j.value("set_sizes", std::map<std::string, std::size_t>{});
      r.style_failures = j.value("style_failures", std::size_t{0});
      if (j.contains("metrics")) r.report = report_from_json(j.at("metrics").dump());
      if (j.contains("study")) {
        r.study.emplace();
        for (const auto& jm : j.at("study").at("modes")) {
          StudyMode m;
          m.mode = jm.at("mode").get<std::string>();
          m.pairs = jm.at("pairs").get<std::size_t>();
          m.failed = jm.at("failed").get<std::size_t>();
          if (!jm.at("mean_iou").is_null()) m.mean_iou = jm.at("mean_iou").get<double>();
          for (const auto& [epoch, v] : jm.at("mean_loss_at").items()) {
            m.mean_loss_at[std::stoi(epoch)] = v.get<double>();
          }
          r.study->modes.push_back(std::move(m));
        }
      }
      results.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(file.string() + ": " + e.what());
    }
  }
  auto position = [&](const std::string& name) {
    const auto it = std::find(order.begin(), order.end(), name);
    return static_cast<std::size_t>(it - order.begin());
  };
  std::stable_sort(results.begin(), results.end(), [&](const auto& a, const auto& b) {
    return position(a.config_name) < position(b.config_name);
  });
  return results;
}

void write_summary(const std::vector<ExperimentResult>& results, const fs::path& out_dir) {
  fs::create_directories(out_dir / "plots");
  std::vector<const ExperimentResult*> evals;
  for (const auto& r : results) {
    if (r.report) evals.push_back(&r);
  }
  const bool has_baseline = std::any_of(evals.begin(), evals.end(), [](const auto* r) {
    return r->config_name == "Baseline";
  });
  ComparisonTable table;
  if (has_baseline) {
    table = compare(results);
  } else {
    for (const auto* r : evals) {
      table.rows.push_back({r->label, r->report->nme, r->report->fr_count, r->report->fr_fraction,
                            std::nullopt, std::nullopt, std::nullopt});
    }
  }
  if (!table.rows.empty()) emit_table(table, out_dir / "comparison");

  if (!evals.empty()) {
    PlotSpec bars;
    bars.kind = PlotKind::bar_nme_fr;
    bars.title = "NME AND FAILURES";
    bars.width = std::max(640, 70 * static_cast<int>(evals.size()) + 120);
    PlotSeries nme_series{"NME %", {}, {}};
    PlotSeries fr_series{"FR %", {}, {}};
    for (const auto* r : evals) {
      bars.categories.push_back(r->config_name);
      nme_series.y.push_back(r->report->nme);
      fr_series.y.push_back(100.0 * r->report->fr_fraction);
    }
    bars.series = {nme_series, fr_series};
    bars.output_path = out_dir / "plots" / "nme_fr.png";
    emit_plot(bars);

    std::vector<std::string> region_names;
    for (const auto& [name, v] : evals.front()->report->per_region) region_names.push_back(name);
    const bool regions_consistent =
        !region_names.empty() && std::all_of(evals.begin(), evals.end(), [&](const auto* r) {
          return r->report->per_region.size() == region_names.size() &&
                 std::all_of(region_names.begin(), region_names.end(),
                             [&](const auto& n) { return r->report->per_region.contains(n); });
        });
    if (regions_consistent) {
      PlotSpec regions;
      regions.kind = PlotKind::bar_per_region;
      regions.title = "PER-REGION NME";
      regions.categories = region_names;
      regions.width = std::max(640, 40 * static_cast<int>(region_names.size() * evals.size()) + 120);
      for (const auto* r : evals) {
        PlotSeries s{r->config_name, {}, {}};
        for (const auto& n : region_names) s.y.push_back(r->report->per_region.at(n));
        regions.series.push_back(std::move(s));
      }
      regions.output_path = out_dir / "plots" / "per_region.png";
      emit_plot(regions);
    }
  }
}

}  // namespace stylemark
