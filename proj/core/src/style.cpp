#include "stylemark/style.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "stylemark/error.hpp"
#include "stylemark/process.hpp"
#include "stylemark/random.hpp"

namespace stylemark {

// ---------------------------------------------------------------------------
// Loss curves
// ---------------------------------------------------------------------------

std::optional<double> LossCurve::total_at(int epoch) const {
  for (const auto& r : rows) {
    if (r.epoch == epoch) return r.total;
  }
  return std::nullopt;
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& text, std::size_t line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::logic_error&) {
    throw ParseError(fmt::format("loss curve line {}: '{}' is not a number", line_no, text));
  }
  if (used != text.size()) {
    throw ParseError(fmt::format("loss curve line {}: '{}' is not a number", line_no, text));
  }
  return v;
}

}  // namespace

LossCurve parse_loss_curve_text(std::string_view text) {
  LossCurve curve;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    if (!have_header) {
      if (line != kLossCsvHeader) {
        throw ParseError(fmt::format("loss curve line {}: expected header '{}'", line_no,
                                     kLossCsvHeader));
      }
      have_header = true;
      continue;
    }
    const auto fields = split_csv(line);
    if (fields.size() != 5) {
      throw ParseError(fmt::format("loss curve line {}: malformed row, expected 5 fields", line_no));
    }
    const double epoch = parse_number(fields[0], line_no);
    if (epoch != std::floor(epoch) || epoch < 0) {
      throw ParseError(fmt::format("loss curve line {}: epoch must be a non-negative integer", line_no));
    }
    LossRow row{static_cast<int>(epoch), parse_number(fields[1], line_no),
                parse_number(fields[2], line_no), parse_number(fields[3], line_no),
                parse_number(fields[4], line_no)};
    for (double v : {row.total, row.appearance, row.structure, row.identity}) {
      if (!std::isfinite(v)) throw ParseError(fmt::format("loss curve line {}: non-finite loss", line_no));
      if (v < 0.0) throw ParseError(fmt::format("loss curve line {}: negative loss", line_no));
    }
    if (!curve.rows.empty() && row.epoch <= curve.rows.back().epoch) {
      throw ParseError(fmt::format("loss curve line {}: non-monotone epochs ({} after {})", line_no,
                                   row.epoch, curve.rows.back().epoch));
    }
    curve.rows.push_back(row);
  }
  if (curve.rows.empty()) throw ParseError("loss curve has no rows");
  return curve;
}

LossCurve parse_loss_curve(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open loss curve '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_loss_curve_text(buf.str());
}

void write_loss_curve(const LossCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write loss curve '" + path.string() + "'");
  out << kLossCsvHeader << '\n';
  for (const auto& r : curve.rows) {
    out << fmt::format("{},{},{},{},{}\n", r.epoch, r.total, r.appearance, r.structure, r.identity);
  }
  if (!out.flush()) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Colour statistics transfer
// ---------------------------------------------------------------------------

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;
using Vec3 = std::array<double, 3>;

constexpr Mat3 kRgbToLms{{{0.3811, 0.5783, 0.0402},
                          {0.1967, 0.7244, 0.0782},
                          {0.0241, 0.1288, 0.8444}}};

Vec3 mul(const Mat3& m, const Vec3& v) {
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
          m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

Mat3 inverse(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  Mat3 r{};
  r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return r;
}

const Mat3& lms_to_rgb() {
  static const Mat3 m = inverse(kRgbToLms);
  return m;
}

// log-LMS -> l, alpha, beta
Vec3 to_opponent(const Vec3& v) {
  static const double s3 = 1.0 / std::sqrt(3.0);
  static const double s6 = 1.0 / std::sqrt(6.0);
  static const double s2 = 1.0 / std::sqrt(2.0);
  return {s3 * (v[0] + v[1] + v[2]), s6 * (v[0] + v[1] - 2.0 * v[2]), s2 * (v[0] - v[1])};
}

Vec3 from_opponent(const Vec3& lab) {
  static const double s3 = std::sqrt(3.0) / 3.0;
  static const double s6 = std::sqrt(6.0) / 6.0;
  static const double s2 = std::sqrt(2.0) / 2.0;
  const double l = s3 * lab[0];
  const double a = s6 * lab[1];
  const double b = s2 * lab[2];
  return {l + a + b, l + a - b, l - 2.0 * a};
}

// Pixel values are offset by one before the log so black stays finite.
constexpr double kOffset = 1.0;
constexpr double kScale = 256.0;

void require_rgb(const Image& img, const char* role) {
  if (img.empty() || img.channels() != 3) {
    throw Error(fmt::format("{} image must be a nonempty RGB image", role));
  }
}

struct ChannelStats {
  double mean = 0.0;
  double stddev = 0.0;
};

std::array<ChannelStats, 3> lab_stats(const LabImage& lab) {
  std::array<ChannelStats, 3> s{};
  const auto n = static_cast<double>(lab.pixels.size());
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (const auto& p : lab.pixels) sum += p[c];
    const double mean = sum / n;
    double sq = 0.0;
    for (const auto& p : lab.pixels) sq += (p[c] - mean) * (p[c] - mean);
    s[c] = {mean, std::sqrt(sq / n)};
  }
  return s;
}

constexpr double kZeroSpread = 1e-12;

}  // namespace

LabImage rgb_to_lab(const Image& rgb) {
  require_rgb(rgb, "input");
  LabImage lab{rgb.width(), rgb.height(), {}};
  lab.pixels.resize(rgb.pixel_count());
  const auto data = rgb.data();
  for (std::size_t i = 0; i < lab.pixels.size(); ++i) {
    const Vec3 v{(data[3 * i] + kOffset) / kScale, (data[3 * i + 1] + kOffset) / kScale,
                 (data[3 * i + 2] + kOffset) / kScale};
    const Vec3 lms = mul(kRgbToLms, v);
    lab.pixels[i] = to_opponent({std::log10(lms[0]), std::log10(lms[1]), std::log10(lms[2])});
  }
  return lab;
}

Image lab_to_rgb(const LabImage& lab) {
  Image out(lab.width, lab.height, 3);
  auto data = out.data();
  for (std::size_t i = 0; i < lab.pixels.size(); ++i) {
    const Vec3 log_lms = from_opponent(lab.pixels[i]);
    const Vec3 lms{std::pow(10.0, log_lms[0]), std::pow(10.0, log_lms[1]),
                   std::pow(10.0, log_lms[2])};
    const Vec3 rgb = mul(lms_to_rgb(), lms);
    for (int c = 0; c < 3; ++c) {
      const double v = rgb[c] * kScale - kOffset;
      data[3 * i + c] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
    }
  }
  return out;
}

LabImage match_lab_statistics(const LabImage& content, const LabImage& style) {
  if (content.pixels.empty() || style.pixels.empty()) throw Error("empty image in statistics transfer");
  const auto cs = lab_stats(content);
  const auto ss = lab_stats(style);
  LabImage out = content;
  for (int c = 0; c < 3; ++c) {
    double gain = 1.0;
    if (cs[c].stddev > kZeroSpread && ss[c].stddev > kZeroSpread) gain = ss[c].stddev / cs[c].stddev;
    for (auto& p : out.pixels) p[c] = (p[c] - cs[c].mean) * gain + ss[c].mean;
  }
  return out;
}

Image color_stat_transfer(const Image& content, const Image& style) {
  require_rgb(content, "content");
  require_rgb(style, "style");
  return lab_to_rgb(match_lab_statistics(rgb_to_lab(content), rgb_to_lab(style)));
}

Image histogram_match(const Image& content, const Image& style) {
  if (content.empty() || style.empty()) throw Error("histogram_match: empty input");
  if (content.channels() != style.channels()) {
    throw Error("histogram_match: channel count mismatch");
  }
  const int channels = content.channels();
  const std::size_t nc = content.pixel_count();
  const std::size_t ns = style.pixel_count();
  Image out(content.width(), content.height(), channels);
  std::vector<std::size_t> order(nc);
  std::vector<std::uint8_t> sorted_style(ns);
  const auto cdata = content.data();
  const auto sdata = style.data();
  auto odata = out.data();
  for (int c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < ns; ++i) sorted_style[i] = sdata[i * channels + c];
    std::sort(sorted_style.begin(), sorted_style.end());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return cdata[a * channels + c] < cdata[b * channels + c];
    });
    for (std::size_t rank = 0; rank < nc; ++rank) {
      // Quantile of the rank's midpoint, so equal sizes map rank k to style rank k.
      const std::size_t q = std::min(ns - 1, ((2 * rank + 1) * ns) / (2 * nc));
      odata[order[rank] * channels + c] = sorted_style[q];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backends and scheduling
// ---------------------------------------------------------------------------

StyleBackend StyleBackend::parse(const std::string& text) {
  StyleBackend b;
  if (text == "color-stat") {
    b.kind = BackendKind::color_stat;
  } else if (text == "hist-match") {
    b.kind = BackendKind::hist_match;
  } else if (text.rfind("external:", 0) == 0 && text.size() > 9) {
    b.kind = BackendKind::external;
    b.command = text.substr(9);
  } else {
    throw Error("unknown style backend '" + text + "' (expected color-stat, hist-match or external:<cmd>)");
  }
  return b;
}

std::string StyleBackend::id() const {
  switch (kind) {
    case BackendKind::color_stat: return "color-stat";
    case BackendKind::hist_match: return "hist-match";
    case BackendKind::external: return "external";
  }
  return "unknown";
}

std::filesystem::path job_dir(const std::filesystem::path& work_dir, const std::string& job_id) {
  return work_dir / "jobs" / job_id;
}

std::filesystem::path write_job_manifest(const StyleJob& job, const std::filesystem::path& work_dir) {
  const auto dir = job_dir(work_dir, job.job_id);
  std::filesystem::create_directories(dir);
  nlohmann::json j = nlohmann::json::object();
  j["job_id"] = job.job_id;
  j["content_path"] = std::filesystem::absolute(job.content_path).lexically_normal().string();
  j["style_path"] = std::filesystem::absolute(job.style_path).lexically_normal().string();
  j["output_path"] = std::filesystem::absolute(dir / "output.png").lexically_normal().string();
  j["params"] = job.params;
  j["seed"] = job.seed;
  const auto path = dir / "job.manifest";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write job manifest '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out.flush()) throw IoError("write failed for '" + path.string() + "'");
  return path;
}

namespace {

void check_self(const StyleJob& job) {
  if (job.content.id == job.style.id && !job.allow_self) {
    throw Error("job '" + job.job_id + "': content and style are the same image");
  }
}

}  // namespace

StyleResult run_external(const StyleJob& job, const std::string& command,
                         std::chrono::seconds timeout, const std::filesystem::path& work_dir) {
  check_self(job);
  write_job_manifest(job, work_dir);
  const auto dir = job_dir(work_dir, job.job_id);
  const auto output = dir / "output.png";
  const auto loss = dir / "loss.csv";
  std::filesystem::remove(output);
  std::filesystem::remove(loss);

  const std::string relative_manifest = "jobs/" + job.job_id + "/job.manifest";
  const auto proc = run_process(command, {relative_manifest}, work_dir, dir / "stdout.log",
                                dir / "stderr.log", timeout);
  if (proc.timed_out) {
    throw BackendError(job.job_id, fmt::format("timed out after {} s", timeout.count()),
                       proc.diagnostics);
  }
  if (proc.exit_code != 0) {
    throw BackendError(job.job_id,
                       fmt::format("backend exited with status {}: {}", proc.exit_code,
                                   proc.diagnostics),
                       proc.diagnostics);
  }
  if (!std::filesystem::exists(output)) {
    throw ProtocolError(job.job_id, "backend did not write " + output.string());
  }
  ImageSize size;
  try {
    size = probe_png(output);
  } catch (const Error& e) {
    throw ProtocolError(job.job_id, std::string("unreadable output image: ") + e.what());
  }
  if (size.width <= 0 || size.height <= 0) {
    throw ProtocolError(job.job_id, "output image has zero size");
  }
  if (job.content.width > 0 && (size.width != job.content.width || size.height != job.content.height)) {
    throw ProtocolError(job.job_id, fmt::format("output is {}x{}, content is {}x{}", size.width,
                                                size.height, job.content.width, job.content.height));
  }

  StyleResult result;
  result.job_id = job.job_id;
  result.output_image_path = output;
  result.landmarks = job.content.landmarks;
  result.backend_id = "external";
  result.wall_time = proc.wall_time.count();
  if (std::filesystem::exists(loss)) {
    try {
      result.loss_curve = parse_loss_curve(loss);
    } catch (const ParseError& e) {
      throw ProtocolError(job.job_id, std::string("loss.csv: ") + e.what());
    }
  }
  return result;
}

StyleResult run_job(const StyleJob& job, const StyleBackend& backend,
                    const std::filesystem::path& work_dir) {
  if (backend.kind == BackendKind::external) {
    return run_external(job, backend.command, backend.timeout, work_dir);
  }
  check_self(job);
  const auto start = std::chrono::steady_clock::now();
  write_job_manifest(job, work_dir);
  const Image content = load_png(job.content_path);
  const Image style = load_png(job.style_path);
  const Image out = backend.kind == BackendKind::color_stat ? color_stat_transfer(content, style)
                                                            : histogram_match(content, style);
  const auto output = job_dir(work_dir, job.job_id) / "output.png";
  save_png(out, output);
  StyleResult result;
  result.job_id = job.job_id;
  result.output_image_path = output;
  result.landmarks = job.content.landmarks;
  result.backend_id = backend.id();
  result.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::uint64_t job_seed(std::uint64_t global_seed, const std::string& content_id,
                       const std::string& style_id) {
  return derive_seed(global_seed, content_id, style_id);
}

StyleRun run_jobs(std::span<const StyleJob> jobs, const StyleBackend& backend,
                  std::size_t parallelism, const std::filesystem::path& work_dir,
                  const std::string& tag, std::uint64_t global_seed) {
  if (parallelism == 0) throw Error("parallelism must be at least 1");
  std::filesystem::create_directories(work_dir / "jobs");

  std::vector<std::size_t> order(jobs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return jobs[a].job_id < jobs[b].job_id; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (jobs[order[i]].job_id == jobs[order[i - 1]].job_id) {
      throw Error("duplicate job id '" + jobs[order[i]].job_id + "'");
    }
  }

  std::vector<std::optional<StyleResult>> slots(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next.fetch_add(1); k < order.size(); k = next.fetch_add(1)) {
      const std::size_t i = order[k];
      try {
        slots[i] = run_job(jobs[i], backend, work_dir);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const std::size_t n_threads = std::min(parallelism, std::max<std::size_t>(jobs.size(), 1));
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
  }

  StyleRun run;
  run.manifest.tag = tag;
  run.manifest.seed = global_seed;
  run.manifest.base_dir = work_dir;
  if (!jobs.empty()) run.manifest.landmark_count = static_cast<int>(jobs.front().content.landmarks.size());
  for (std::size_t i : order) {
    const StyleJob& job = jobs[i];
    if (!slots[i]) {
      spdlog::warn("style job '{}' failed: {}", job.job_id, errors[i]);
      run.failures.push_back({job.job_id, errors[i]});
      continue;
    }
    StyleResult& res = *slots[i];
    ImageRecord rec;
    rec.id = job.job_id;
    rec.image_path = res.output_image_path.lexically_relative(work_dir).generic_string();
    if (rec.image_path.empty()) rec.image_path = res.output_image_path.generic_string();
    rec.landmarks = res.landmarks;
    const ImageSize size = probe_png(res.output_image_path);
    rec.width = size.width;
    rec.height = size.height;
    if (job.content_mask_path) {
      rec.mask_path = std::filesystem::absolute(*job.content_mask_path)
                          .lexically_normal()
                          .lexically_relative(std::filesystem::absolute(work_dir).lexically_normal())
                          .generic_string();
    }
    rec.split = Split::derived;
    rec.lineage = Lineage{job.content.id, "style:" + res.backend_id + ":" + job.style.id,
                          std::array<double, 6>{1, 0, 0, 0, 1, 0}};
    run.manifest.records.push_back(std::move(rec));
    run.results.push_back(std::move(res));
  }
  if (!jobs.empty() && run.results.empty()) {
    throw BackendError(tag, fmt::format("all {} style jobs failed; first error: {}", jobs.size(),
                                        run.failures.front().message));
  }
  if (!run.failures.empty()) {
    spdlog::warn("{}: {} of {} style jobs failed", tag, run.failures.size(), jobs.size());
  }
  return run;
}

std::vector<StyleJob> make_style_jobs(std::span<const std::pair<std::string, std::string>> pairs,
                                      const DatasetManifest& content,
                                      const DatasetManifest& styles, std::uint64_t global_seed,
                                      const std::string& prefix,
                                      const std::map<std::string, std::string>& params,
                                      bool allow_self) {
  std::vector<StyleJob> jobs;
  jobs.reserve(pairs.size());
  for (const auto& [content_id, style_id] : pairs) {
    const ImageRecord* c = content.find(content_id);
    if (!c) throw SelectionError("content id '" + content_id + "' not in manifest '" + content.tag + "'");
    const ImageRecord* s = styles.find(style_id);
    if (!s) throw SelectionError("style id '" + style_id + "' not in manifest '" + styles.tag + "'");
    if (content_id == style_id && !allow_self) {
      throw SelectionError("self-pairing for '" + content_id + "' is not allowed");
    }
    StyleJob job;
    job.job_id = prefix + content_id;
    job.content = *c;
    job.style = *s;
    job.content_path = content.resolve(c->image_path);
    job.style_path = styles.resolve(s->image_path);
    if (c->mask_path) job.content_mask_path = content.resolve(*c->mask_path);
    job.params = params;
    job.seed = job_seed(global_seed, content_id, style_id);
    job.allow_self = allow_self;
    jobs.push_back(std::move(job));
  }
  return jobs;
}

}  // namespace stylemark
