#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stylemark/dataset.hpp"
#include "stylemark/image.hpp"

namespace stylemark {

// ---------------------------------------------------------------------------
// Loss curves written by neural backends as loss.csv
// ---------------------------------------------------------------------------

struct LossRow {
  int epoch = 0;
  double total = 0.0;
  double appearance = 0.0;
  double structure = 0.0;
  double identity = 0.0;
  friend bool operator==(const LossRow&, const LossRow&) = default;
};

struct LossCurve {
  std::vector<LossRow> rows;

  double final_total() const { return rows.back().total; }
  // Total at exactly `epoch`, if recorded.
  std::optional<double> total_at(int epoch) const;

  friend bool operator==(const LossCurve&, const LossCurve&) = default;
};

inline constexpr const char* kLossCsvHeader = "epoch,total,appearance,structure,identity";

// Header line required; '#' lines are comments. Epochs must be strictly
// increasing and values finite and non-negative.
LossCurve parse_loss_curve_text(std::string_view text);
LossCurve parse_loss_curve(const std::filesystem::path& path);
void write_loss_curve(const LossCurve& curve, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Classical backends
// ---------------------------------------------------------------------------

// Opponent log-colour space (l, alpha, beta) per pixel, row-major.
struct LabImage {
  int width = 0;
  int height = 0;
  std::vector<std::array<double, 3>> pixels;
};

LabImage rgb_to_lab(const Image& rgb);
// Rounded and clamped to [0, 255].
Image lab_to_rgb(const LabImage& lab);

// Per-channel mean/std transfer. A content channel with zero spread maps to
// the style mean; a style channel with zero spread gets a mean shift only.
LabImage match_lab_statistics(const LabImage& content, const LabImage& style);

// Colour statistics transfer in the decorrelated space. Geometry untouched.
Image color_stat_transfer(const Image& content, const Image& style);

// Exact per-channel quantile mapping of content ranks onto the sorted style
// values. Ties in content are ranked by pixel position.
Image histogram_match(const Image& content, const Image& style);

// ---------------------------------------------------------------------------
// Jobs and backends
// ---------------------------------------------------------------------------

struct StyleJob {
  std::string job_id;
  ImageRecord content;
  ImageRecord style;
  std::filesystem::path content_path;  // resolved image paths
  std::filesystem::path style_path;
  std::optional<std::filesystem::path> content_mask_path;
  std::map<std::string, std::string> params;
  std::uint64_t seed = 0;
  bool allow_self = false;
};

struct StyleResult {
  std::string job_id;
  std::filesystem::path output_image_path;
  LandmarkSet landmarks;
  std::optional<LossCurve> loss_curve;
  std::string backend_id;
  double wall_time = 0.0;  // seconds
};

enum class BackendKind { color_stat, hist_match, external };

struct StyleBackend {
  BackendKind kind = BackendKind::color_stat;
  std::string command;  // external only
  std::chrono::seconds timeout{0};

  // "color-stat", "hist-match" or "external:<cmd>".
  static StyleBackend parse(const std::string& text);
  std::string id() const;
};

// Layout of one job under `work_dir`: jobs/<job_id>/{job.manifest, output.png, loss.csv, stderr.log}.
std::filesystem::path job_dir(const std::filesystem::path& work_dir, const std::string& job_id);

// Writes jobs/<job_id>/job.manifest and returns its path.
std::filesystem::path write_job_manifest(const StyleJob& job, const std::filesystem::path& work_dir);

// Invokes `command jobs/<job_id>/job.manifest` with `work_dir` as the current
// directory. Throws BackendError on nonzero exit or timeout, ProtocolError when
// output.png is missing or unreadable or loss.csv is malformed.
StyleResult run_external(const StyleJob& job, const std::string& command,
                         std::chrono::seconds timeout, const std::filesystem::path& work_dir);

// Runs one job with any backend.
StyleResult run_job(const StyleJob& job, const StyleBackend& backend,
                    const std::filesystem::path& work_dir);

struct JobFailure {
  std::string job_id;
  std::string message;
};

struct StyleRun {
  std::vector<StyleResult> results;  // successful jobs, job-id order
  DatasetManifest manifest;          // one derived record per success, job-id order
  std::vector<JobFailure> failures;  // job-id order
};

// Executes all jobs with up to `parallelism` in flight. Output does not depend
// on parallelism or completion order. Throws BackendError when every job
// fails. The manifest's base_dir is `work_dir`.
StyleRun run_jobs(std::span<const StyleJob> jobs, const StyleBackend& backend,
                  std::size_t parallelism, const std::filesystem::path& work_dir,
                  const std::string& tag, std::uint64_t global_seed);

// Stable per-job seed from (global seed, content id, style id).
std::uint64_t job_seed(std::uint64_t global_seed, const std::string& content_id,
                       const std::string& style_id);

// One job per (content id, style id) pair. Job ids are "<prefix><content id>".
// Throws SelectionError when an id is missing from its manifest or when a pair
// is a self-pairing and `allow_self` is false.
std::vector<StyleJob> make_style_jobs(std::span<const std::pair<std::string, std::string>> pairs,
                                      const DatasetManifest& content,
                                      const DatasetManifest& styles, std::uint64_t global_seed,
                                      const std::string& prefix,
                                      const std::map<std::string, std::string>& params = {},
                                      bool allow_self = true);

}  // namespace stylemark
