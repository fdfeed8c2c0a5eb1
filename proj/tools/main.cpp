// stylemark command line. Exit codes: 0 success, 1 usage error, 2 pipeline error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "stylemark/dataset.hpp"
#include "stylemark/detector.hpp"
#include "stylemark/error.hpp"
#include "stylemark/experiment.hpp"
#include "stylemark/geometry.hpp"
#include "stylemark/image.hpp"
#include "stylemark/metrics.hpp"
#include "stylemark/random.hpp"
#include "stylemark/report.hpp"
#include "stylemark/selection.hpp"
#include "stylemark/style.hpp"
#include "stylemark/synthetic.hpp"

namespace fs = std::filesystem;
using namespace stylemark;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string workdir;
  std::string log_level = "info";
};

std::string default_region_map() {
  for (const char* candidate : {STYLEMARK_INSTALLED_REGIONS, STYLEMARK_SOURCE_REGIONS}) {
    if (fs::exists(candidate)) return candidate;
  }
  return {};
}

void log_resolved(const CLI::App& app) {
  spdlog::info("resolved options for '{}':", app.get_name());
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_name() == "--help" || opt->get_name().empty()) continue;
    const auto values = opt->reduced_results();
    std::string joined;
    for (const auto& v : values) joined += (joined.empty() ? "" : " ") + v;
    if (joined.empty()) joined = opt->get_default_str();
    spdlog::info("  {} = {}", opt->get_name(), joined);
  }
}

std::map<std::string, std::string> parse_params(const std::vector<std::string>& items) {
  std::map<std::string, std::string> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--param", "expected key=value, got '" + item + "'");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

void write_pool(const StylePool& pool, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "{\"n\": " << pool.n << ", \"members\": [";
  for (std::size_t i = 0; i < pool.members.size(); ++i) {
    out << (i ? ", " : "") << '"' << pool.members[i] << '"';
  }
  out << "]}\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Style-transfer augmentation toolkit for facial landmark datasets"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Global seed")->envname("STYLEMARK_SEED")->capture_default_str();
  app.add_option("--workdir", g.workdir, "Directory that relative paths resolve against");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->capture_default_str();

  std::function<void()> action;
  auto bind = [&](CLI::App* sub, std::function<void()> fn) {
    sub->callback([&action, sub, fn = std::move(fn)] {
      action = [sub, fn] {
        log_resolved(*sub);
        fn();
      };
    });
  };

  // synth
  SyntheticOptions synth_opts;
  std::string synth_out;
  bool synth_no_masks = false;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic annotated dataset");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--count", synth_opts.count, "Number of images")->capture_default_str();
  synth->add_option("--size", synth_opts.image_size, "Square image side in pixels")->capture_default_str();
  synth->add_flag("--no-masks", synth_no_masks, "Skip segmentation masks");
  bind(synth, [&] {
    synth_opts.seed = g.seed;
    synth_opts.write_masks = !synth_no_masks;
    const auto m = generate_synthetic_dataset(synth_out, synth_opts);
    fmt::print("{} records -> {}\n", m.records.size(), (fs::path(synth_out) / "root.manifest").string());
  });

  // ingest
  std::string ingest_in, ingest_out, ingest_tag;
  int ingest_count = kDefaultLandmarkCount;
  auto* ingest = app.add_subcommand("ingest", "Validate a manifest and optionally re-save it");
  ingest->add_option("--manifest", ingest_in, "Input manifest")->required();
  ingest->add_option("--out", ingest_out, "Write the validated manifest here");
  ingest->add_option("--tag", ingest_tag, "Replace the manifest tag");
  ingest->add_option("--landmarks", ingest_count, "Expected landmarks per record")->capture_default_str();
  bind(ingest, [&] {
    DatasetManifest m = load_manifest(ingest_in);
    if (m.landmark_count != ingest_count) {
      throw ValidationError(m.tag, fmt::format("manifest declares {} landmarks, expected {}",
                                               m.landmark_count, ingest_count));
    }
    if (!ingest_tag.empty()) m.tag = ingest_tag;
    std::size_t missing = 0;
    for (const auto& r : m.records) {
      if (!fs::exists(m.resolve(r.image_path))) {
        spdlog::error("record '{}': image {} not found", r.id, m.resolve(r.image_path).string());
        ++missing;
      }
    }
    if (missing) throw IoError(fmt::format("{} image files missing", missing));
    if (!ingest_out.empty()) save_manifest(m, ingest_out);
    fmt::print("{}: {} records, {} landmarks each, ok\n", m.tag, m.records.size(), m.landmark_count);
  });

  // split
  std::string split_in, split_out;
  std::size_t n_train = 500, n_test = 100;
  auto* split = app.add_subcommand("split", "Seeded disjoint train/test split");
  split->add_option("--manifest", split_in, "Root manifest")->required();
  split->add_option("--train", n_train, "Train size")->capture_default_str();
  split->add_option("--test", n_test, "Test size")->capture_default_str();
  split->add_option("--out", split_out, "Output directory for train.manifest and test.manifest")->required();
  bind(split, [&] {
    const auto [train, test] = split_dataset(load_manifest(split_in), n_train, n_test, g.seed);
    fs::create_directories(split_out);
    save_manifest(train, fs::path(split_out) / "train.manifest");
    save_manifest(test, fs::path(split_out) / "test.manifest");
    fmt::print("train {} / test {}\n", train.records.size(), test.records.size());
  });

  // crop
  std::string crop_in, crop_out;
  double crop_margin = kDefaultCropMargin;
  auto* crop = app.add_subcommand("crop", "Crop each record to its landmark box (face-only preprocessing)");
  crop->add_option("--manifest", crop_in, "Input manifest")->required();
  crop->add_option("--out", crop_out, "Output directory")->required();
  crop->add_option("--margin", crop_margin, "Margin as a fraction of the box extent")->capture_default_str();
  bind(crop, [&] {
    const DatasetManifest src = load_manifest(crop_in);
    const fs::path dir = crop_out;
    fs::create_directories(dir / "images");
    DatasetManifest m;
    m.tag = src.tag + "-crop";
    m.seed = src.seed;
    m.landmark_count = src.landmark_count;
    m.parent = src.tag;
    m.base_dir = dir;
    for (const auto& r : src.records) {
      const CropBox box = landmark_bbox(r.landmarks, crop_margin);
      const CropResult c = crop_image(load_png(src.resolve(r.image_path)), box);
      ImageRecord out = r;
      out.image_path = "images/" + r.id + ".png";
      save_png(c.image, dir / out.image_path);
      out.width = c.image.width();
      out.height = c.image.height();
      out.landmarks = apply_transform(r.landmarks, c.transform);
      if (r.mask_path) {
        out.mask_path = "images/" + r.id + ".mask.png";
        save_png(crop_image(load_png(src.resolve(*r.mask_path)), box).image, dir / *out.mask_path);
      }
      out.lineage = Lineage{r.id, fmt::format("crop:margin={}", crop_margin), c.transform.row_major()};
      m.records.push_back(std::move(out));
    }
    save_manifest(m, dir / "crop.manifest");
    fmt::print("{} crops -> {}\n", m.records.size(), (dir / "crop.manifest").string());
  });

  // rank
  std::string rank_in, rank_out, rank_detector = "builtin", rank_norm = "bbox_diagonal", rank_preds;
  auto* rank = app.add_subcommand("rank", "Rank training images by detector NME");
  rank->add_option("--manifest", rank_in, "Training manifest")->required();
  rank->add_option("--out", rank_out, "Ranking file")->required();
  rank->add_option("--predictions", rank_preds, "Use an existing prediction file instead of a detector");
  rank->add_option("--detector", rank_detector, "builtin or external:<cmd>")->capture_default_str();
  rank->add_option("--normalizer", rank_norm, "bbox_diagonal, inter_landmark:i,j or fixed:v")->capture_default_str();
  bind(rank, [&] {
    const DatasetManifest train = load_manifest(rank_in);
    PredictionSet preds;
    if (!rank_preds.empty()) {
      preds = load_predictions(rank_preds);
    } else {
      const MeanShapeModel model = fit_mean_shape(train);
      preds = evaluate(DetectorBackend::parse(rank_detector), model, train, fs::absolute(rank_out).parent_path());
    }
    const auto ranked = rank_by_nme(preds, train, Normalizer::parse(rank_norm));
    save_ranking(ranked, rank_out);
    fmt::print("{} ranked; best {} ({:.3f}), worst {} ({:.3f})\n", ranked.size(), ranked.front().id,
               ranked.front().nme, ranked.back().id, ranked.back().nme);
  });

  // select
  std::string select_in, select_out;
  std::size_t select_n = 10;
  auto* select = app.add_subcommand("select", "Top-N style pool from a ranking");
  select->add_option("--ranking", select_in, "Ranking file")->required();
  select->add_option("--n", select_n, "Pool size")->capture_default_str();
  select->add_option("--out", select_out, "Pool file (JSON)")->required();
  bind(select, [&] {
    const auto ranked = load_ranking(select_in);
    const StylePool pool = sst_select(ranked, select_n);
    write_pool(pool, select_out);
    fmt::print("pool of {}\n", pool.members.size());
  });

  // pair
  std::string pair_train, pair_test, pair_ranking, pair_out;
  std::size_t pair_n = 0;
  bool pair_allow_self = false;
  auto* pair = app.add_subcommand("pair", "Assign a style image to every content image");
  pair->add_option("--train", pair_train, "Training manifest")->required();
  pair->add_option("--test", pair_test, "Pair test images with training styles instead");
  pair->add_option("--ranking", pair_ranking, "Ranking file (with --n)");
  pair->add_option("--n", pair_n, "Draw styles from the top-N of --ranking; 0 uses every training image")
      ->capture_default_str();
  pair->add_flag("--allow-self", pair_allow_self, "Keep self-pairings");
  pair->add_option("--out", pair_out, "Pairing file")->required();
  bind(pair, [&] {
    const DatasetManifest train = load_manifest(pair_train);
    Pairing p;
    if (!pair_test.empty()) {
      p = make_test_st(load_manifest(pair_test), train, g.seed);
    } else if (pair_n > 0) {
      if (pair_ranking.empty()) throw CLI::ValidationError("--n", "requires --ranking");
      p = assign_styles(train, sst_select(load_ranking(pair_ranking), pair_n), g.seed, !pair_allow_self);
    } else {
      p = assign_styles(train, full_pool(train), g.seed, !pair_allow_self);
      p.pool = fmt::format("all:{}", train.records.size());
    }
    save_pairing(p, pair_out);
    fmt::print("{} pairs ({})\n", p.pairs.size(), p.pool);
  });

  // style
  std::string style_pairing, style_content, style_styles, style_backend = "color-stat", style_tag = "Stylized",
              style_out, style_prefix;
  std::size_t parallelism = 1;
  std::uint64_t timeout = 0;
  std::vector<std::string> style_params;
  auto* style = app.add_subcommand("style", "Run style-transfer jobs for a pairing");
  style->add_option("--pairing", style_pairing, "Pairing file")->required();
  style->add_option("--content", style_content, "Manifest holding the content images")->required();
  style->add_option("--styles", style_styles, "Manifest holding the style images (defaults to --content)");
  style->add_option("--backend", style_backend, "color-stat, hist-match or external:<cmd>")->capture_default_str();
  style->add_option("--parallelism", parallelism, "Jobs in flight")->capture_default_str()->check(CLI::PositiveNumber);
  style->add_option("--timeout", timeout, "Per-job timeout in seconds, 0 for none")->capture_default_str();
  style->add_option("--param", style_params, "Backend parameter key=value (repeatable)");
  style->add_option("--tag", style_tag, "Tag of the derived manifest")->capture_default_str();
  style->add_option("--prefix", style_prefix, "Job id prefix (defaults to '<tag>.')");
  style->add_option("--out", style_out, "Work directory (jobs/ and the derived manifest)")->required();
  bind(style, [&] {
    const DatasetManifest content = load_manifest(style_content);
    const DatasetManifest styles = style_styles.empty() ? content : load_manifest(style_styles);
    const Pairing p = load_pairing(style_pairing);
    StyleBackend backend = StyleBackend::parse(style_backend);
    backend.timeout = std::chrono::seconds(timeout);
    const auto jobs = make_style_jobs(p.pairs, content, styles, g.seed,
                                      style_prefix.empty() ? style_tag + "." : style_prefix,
                                      parse_params(style_params));
    StyleRun run = run_jobs(jobs, backend, parallelism, style_out, style_tag, g.seed);
    run.manifest.parent = content.tag;
    const fs::path out = fs::path(style_out) / (style_tag + ".manifest");
    save_manifest(run.manifest, out);
    fmt::print("{} of {} jobs succeeded -> {}\n", run.results.size(), jobs.size(), out.string());
    for (const auto& f : run.failures) fmt::print(stderr, "failed {}: {}\n", f.job_id, f.message);
  });

  // augment
  std::string aug_in, aug_out;
  double aug_max = 30.0;
  auto* augment = app.add_subcommand("augment", "Random-rotation control set");
  augment->add_option("--manifest", aug_in, "Training manifest")->required();
  augment->add_option("--max-degrees", aug_max, "Angles drawn uniformly from [-max, max]")
      ->capture_default_str()->check(CLI::Range(0.0, 180.0));
  augment->add_option("--out", aug_out, "Output directory")->required();
  bind(augment, [&] {
    const DatasetManifest src = load_manifest(aug_in);
    const fs::path dir = aug_out;
    fs::create_directories(dir / "images");
    DatasetManifest m;
    m.tag = "TrainRotated";
    m.seed = g.seed;
    m.landmark_count = src.landmark_count;
    m.parent = src.tag;
    m.base_dir = dir;
    for (const auto& r : src.records) {
      Rng rng(derive_seed(g.seed, r.id));
      const double angle = rng.uniform(-aug_max, aug_max);
      RotatedRecord rot = rotate_augment(r, load_png(src.resolve(r.image_path)), angle);
      if (!rot.valid) {
        spdlog::warn("'{}' rotated by {:.2f} leaves the canvas; dropped", r.id, angle);
        continue;
      }
      rot.record.image_path = "images/" + rot.record.id + ".png";
      save_png(rot.image, dir / rot.record.image_path);
      m.records.push_back(std::move(rot.record));
    }
    save_manifest(m, dir / "rotated.manifest");
    fmt::print("{} rotated records -> {}\n", m.records.size(), (dir / "rotated.manifest").string());
  });

  // train-eval
  std::vector<std::string> te_train;
  std::string te_test, te_out, te_detector = "builtin", te_norm = "bbox_diagonal", te_regions, te_tag = "run";
  double te_threshold = kDefaultFailureThreshold;
  bool te_procrustes = false;
  auto* train_eval = app.add_subcommand("train-eval", "Fit the detector on a training union and score a test set");
  train_eval->add_option("--train", te_train, "Training manifests (their union is used)")->required();
  train_eval->add_option("--test", te_test, "Test manifest")->required();
  train_eval->add_option("--out", te_out, "Output directory")->required();
  train_eval->add_option("--tag", te_tag, "Report tag")->capture_default_str();
  train_eval->add_option("--detector", te_detector, "builtin or external:<cmd>")->capture_default_str();
  train_eval->add_flag("--procrustes", te_procrustes, "Rotation-align shapes before averaging");
  train_eval->add_option("--normalizer", te_norm, "bbox_diagonal, inter_landmark:i,j or fixed:v")->capture_default_str();
  train_eval->add_option("--regions", te_regions, "Region map file (default: bundled map when present)");
  train_eval->add_option("--threshold", te_threshold, "Failure threshold in NME percent")->capture_default_str();
  bind(train_eval, [&] {
    std::vector<DatasetManifest> parts;
    for (const auto& p : te_train) parts.push_back(load_manifest(p));
    std::vector<const DatasetManifest*> ptrs;
    std::string tag;
    for (const auto& p : parts) {
      ptrs.push_back(&p);
      tag += (tag.empty() ? "" : "+") + p.tag;
    }
    const DatasetManifest train = concat_manifests(tag, ptrs);
    const DatasetManifest test = load_manifest(te_test);
    const fs::path dir = te_out;
    fs::create_directories(dir);
    const MeanShapeModel model = fit_mean_shape(train, {te_procrustes});
    save_model(model, dir / (te_tag + ".model.json"));
    PredictionSet preds = evaluate(DetectorBackend::parse(te_detector), model, test, dir);
    preds.tag = te_tag;
    preds.ground_truth = te_test;
    save_predictions(preds, dir / (te_tag + ".predictions"));
    const std::string regions_path = te_regions.empty() ? default_region_map() : te_regions;
    std::optional<RegionMap> regions;
    if (!regions_path.empty()) {
      regions = RegionMap::load(regions_path);
      regions->check_against(test.landmark_count);
    }
    const MetricsReport r = score_predictions(te_tag, preds, test, Normalizer::parse(te_norm),
                                              regions ? &*regions : nullptr, te_threshold);
    std::ofstream(dir / (te_tag + ".json")) << report_to_json(r);
    std::ofstream(dir / (te_tag + ".csv")) << format_report_csv(r);
    const std::string text = format_report_text(r);
    std::ofstream(dir / (te_tag + ".txt")) << text;
    fmt::print("{}", text);
  });

  // experiment
  auto* experiment = app.add_subcommand("experiment", "Run configured experiments");
  experiment->require_subcommand(1);
  experiment->fallthrough();
  std::vector<std::string> exp_configs;
  std::string exp_root, exp_out, exp_regions;
  std::size_t exp_parallelism = 1;
  auto* exp_run = experiment->add_subcommand("run", "Run one or more config files against a root manifest");
  exp_run->add_option("--config", exp_configs, "Config file (repeatable)")->required();
  exp_run->add_option("--root", exp_root, "Root manifest")->required();
  exp_run->add_option("--out", exp_out, "Results directory")->required();
  exp_run->add_option("--parallelism", exp_parallelism, "Style jobs in flight")
      ->capture_default_str()->check(CLI::PositiveNumber);
  bind(exp_run, [&] {
    std::vector<ExperimentConfig> configs;
    for (const auto& path : exp_configs) configs.push_back(load_config(path));
    const auto results = run_experiments(configs, load_manifest(exp_root), exp_out, {exp_parallelism});
    write_summary(results, exp_out);
    for (const auto& r : results) {
      if (r.report) fmt::print("{:<28} NME {:.3f}  FR {}\n", r.label, r.report->nme, r.report->fr_count);
    }
  });

  std::size_t sweep_train = 500, sweep_test = 100;
  bool sweep_no_regions = false;
  std::string sweep_backend = "color-stat";
  auto* exp_sweep = experiment->add_subcommand("sweep", "Run the built-in comparison sweep");
  exp_sweep->add_option("--root", exp_root, "Root manifest")->required();
  exp_sweep->add_option("--out", exp_out, "Results directory")->required();
  exp_sweep->add_option("--train", sweep_train, "Train split size")->capture_default_str();
  exp_sweep->add_option("--test", sweep_test, "Test split size")->capture_default_str();
  exp_sweep->add_option("--backend", sweep_backend, "Style backend")->capture_default_str();
  exp_sweep->add_option("--regions", exp_regions, "Region map file (default: bundled map when present)");
  exp_sweep->add_flag("--no-regions", sweep_no_regions, "Skip per-region NME");
  exp_sweep->add_option("--parallelism", exp_parallelism, "Style jobs in flight")
      ->capture_default_str()->check(CLI::PositiveNumber);
  bind(exp_sweep, [&] {
    auto configs = builtin_configs(sweep_train, sweep_test);
    const std::string regions = sweep_no_regions ? "" : (exp_regions.empty() ? default_region_map() : exp_regions);
    for (auto& c : configs) {
      c.backend = sweep_backend;
      c.region_map = regions;
    }
    const auto results = run_experiments(configs, load_manifest(exp_root), exp_out, {exp_parallelism});
    write_summary(results, exp_out);
    std::ifstream table(fs::path(exp_out) / "comparison.txt");
    std::cout << table.rdbuf();
  });

  std::string configs_out;
  auto* exp_configs_cmd = experiment->add_subcommand("configs", "Write the built-in configs as JSON files");
  exp_configs_cmd->add_option("--out", configs_out, "Output directory")->required();
  exp_configs_cmd->add_option("--train", sweep_train, "Train split size")->capture_default_str();
  exp_configs_cmd->add_option("--test", sweep_test, "Test split size")->capture_default_str();
  bind(exp_configs_cmd, [&] {
    for (const auto& c : builtin_configs(sweep_train, sweep_test)) {
      save_config(c, fs::path(configs_out) / (c.name + ".json"));
    }
    fmt::print("wrote {} configs to {}\n", builtin_configs().size(), configs_out);
  });

  // report
  std::string report_results, report_out;
  auto* report = app.add_subcommand("report", "Comparison table and plots from a results directory");
  report->add_option("--results", report_results, "Results directory")->required();
  report->add_option("--out", report_out, "Output directory (defaults to --results)");
  bind(report, [&] {
    const auto results = load_results(report_results);
    const fs::path out = report_out.empty() ? fs::path(report_results) : fs::path(report_out);
    write_summary(results, out);
    std::ifstream table(out / "comparison.txt");
    std::cout << table.rdbuf();
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const auto level = spdlog::level::from_str(g.log_level);
  if (level == spdlog::level::off && g.log_level != "off") {
    std::cerr << "error: unknown log level '" << g.log_level << "'\n";
    return 1;
  }
  spdlog::set_level(level);
  spdlog::set_default_logger(spdlog::default_logger()->clone("stylemark"));

  try {
    if (!g.workdir.empty()) {
      fs::create_directories(g.workdir);
      fs::current_path(g.workdir);
    }
    spdlog::info("seed = {}", g.seed);
    action();
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return 2;
  }
  return 0;
}
