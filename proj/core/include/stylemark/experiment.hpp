#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stylemark/dataset.hpp"
#include "stylemark/metrics.hpp"
#include "stylemark/report.hpp"

namespace stylemark {

// One operand of a training-set union.
struct TrainTerm {
  enum class Kind { train, train_st, train_sst, train_rotated };
  Kind kind = Kind::train;
  std::size_t n = 0;  // pool size for train_sst

  // "Train", "TrainST", "TrainSST(<n>)", "TrainRotated"
  std::string name() const;
  static TrainTerm parse(const std::string& text);
  friend bool operator==(const TrainTerm&, const TrainTerm&) = default;
};

enum class TestSource { test, test_st };
enum class Preprocessing { cf_st, fb_st };
enum class ExperimentKind { evaluation, preprocessing_study };

struct ExperimentSeeds {
  std::uint64_t split = 7;
  std::uint64_t pairing = 11;
  std::uint64_t rotation = 13;
  friend bool operator==(const ExperimentSeeds&, const ExperimentSeeds&) = default;
};

struct ExperimentConfig {
  std::string name;   // file-safe identifier; "Baseline" is the comparison anchor
  std::string label;  // display name in tables
  ExperimentKind kind = ExperimentKind::evaluation;
  std::vector<TrainTerm> train_source{TrainTerm{}};
  TestSource test_source = TestSource::test;
  std::string backend = "color-stat";
  std::uint64_t backend_timeout = 0;  // seconds, external backends only
  std::map<std::string, std::string> backend_params;
  std::string detector = "builtin";
  bool procrustes = false;
  ExperimentSeeds seeds;
  Preprocessing preprocessing = Preprocessing::cf_st;
  std::string normalizer = "bbox_diagonal";
  std::string region_map;  // path to a region map file; empty disables per-region NME
  std::size_t n_train = 500;
  std::size_t n_test = 100;
  double crop_margin = 0.10;
  double fr_threshold = 10.0;
  double rotation_max_degrees = 30.0;
  bool forbid_self = true;
  std::size_t study_pairs = 30;
  std::vector<int> loss_checkpoints{1000, 4000};

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

// The ten training configurations of the comparison table plus Baseline on
// TestST and the cropped-vs-full-body preprocessing study, all sharing seeds.
std::vector<ExperimentConfig> builtin_configs(std::size_t n_train = 500, std::size_t n_test = 100);

// Preprocessing study, one block per mode.
struct StudyMode {
  std::string mode;  // "CF-ST" or "FB-ST"
  std::size_t pairs = 0;
  std::size_t failed = 0;
  std::optional<double> mean_iou;
  std::map<int, double> mean_loss_at;  // checkpoint epoch -> mean total loss over jobs
  std::optional<LossCurve> mean_curve;  // pointwise mean over jobs sharing epochs
  friend bool operator==(const StudyMode&, const StudyMode&) = default;
};

struct StudyReport {
  std::vector<StudyMode> modes;
  friend bool operator==(const StudyReport&, const StudyReport&) = default;
};

struct ExperimentResult {
  std::string config_name;
  std::string label;
  std::optional<MetricsReport> report;  // evaluation configs
  std::optional<StudyReport> study;     // preprocessing study
  // Manifest file names (relative to <out>/manifests) this result depends on.
  std::vector<std::string> provenance;
  std::map<std::string, std::size_t> set_sizes;  // term name -> records, plus "train", "test"
  std::size_t style_failures = 0;
  double wall_time = 0.0;
};

struct RunOptions {
  std::size_t parallelism = 1;
};

// Runs every config against one results directory, sharing derived sets
// (splits, crops, rankings, stylized sets) between configs with identical
// inputs. Layout: manifests/, jobs/, reports/, plots/, images/, pairings/,
// rankings/, logs/. Errors are StageError tagged with the failing stage.
std::vector<ExperimentResult> run_experiments(const std::vector<ExperimentConfig>& configs,
                                              const DatasetManifest& root,
                                              const std::filesystem::path& out_dir,
                                              const RunOptions& options = {});

ExperimentResult run(const ExperimentConfig& config, const DatasetManifest& root,
                     const std::filesystem::path& out_dir, const RunOptions& options = {});

// 100 * (config - baseline) / baseline.
double degradation_pct(double baseline_nme, double config_nme);
// 100 * min(1, baseline / config).
double retention_pct(double baseline_nme, double config_nme);

// Rows for evaluation results in input order, relative to the result named
// "Baseline". Throws Error when no baseline is present.
ComparisonTable compare(const std::vector<ExperimentResult>& results);

// Reads reports/<name>.json back as results (no study data).
std::vector<ExperimentResult> load_results(const std::filesystem::path& results_dir);

// Writes <out>/comparison.{txt,csv} and the NME/FR, per-region and loss plots.
void write_summary(const std::vector<ExperimentResult>& results, const std::filesystem::path& out_dir);

}  // namespace stylemark
