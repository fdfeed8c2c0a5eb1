#include "stylemark/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "stylemark/error.hpp"
#include "stylemark/raster.hpp"

namespace stylemark {

using nlohmann::json;

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out.flush()) throw IoError("write failed for '" + path.string() + "'");
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

std::string opt3(const std::optional<double>& v) { return v ? fmt::format("{:.3f}", *v) : ""; }

std::string opt1(const std::optional<double>& v) { return v ? fmt::format("{:.1f}", *v) : ""; }

}  // namespace

std::string format_table_csv(const ComparisonTable& table) {
  std::string out = "configuration,nme,fr,fr_fraction,delta_nme,degradation_pct,retention_pct\n";
  for (const auto& r : table.rows) {
    out += fmt::format("{},{:.3f},{},{:.3f},{},{},{}\n", csv_field(r.configuration), r.nme,
                       r.fr_count, r.fr_fraction, opt3(r.delta_nme), opt1(r.degradation_pct),
                       opt1(r.retention_pct));
  }
  return out;
}

std::string format_table_text(const ComparisonTable& table) {
  std::size_t name_width = std::string_view("Configuration").size();
  for (const auto& r : table.rows) name_width = std::max(name_width, r.configuration.size());
  const bool relative = std::any_of(table.rows.begin(), table.rows.end(),
                                    [](const ComparisonRow& r) { return r.delta_nme.has_value(); });
  std::string out;
  out += fmt::format("{:<{}} | {:>7} | {:>4} | {:>7}", "Configuration", name_width, "NME", "FR",
                     "FR frac");
  if (relative) out += fmt::format(" | {:>7} | {:>8} | {:>9}", "dNME", "degr. %", "retain. %");
  out += '\n';
  out += std::string(name_width, '-') + "-+---------+------+--------";
  if (relative) out += "-+---------+----------+----------";
  out += '\n';
  for (const auto& r : table.rows) {
    out += fmt::format("{:<{}} | {:>7.3f} | {:>4} | {:>7.3f}", r.configuration, name_width, r.nme,
                       r.fr_count, r.fr_fraction);
    if (relative) {
      out += fmt::format(" | {:>7} | {:>8} | {:>9}", opt3(r.delta_nme), opt1(r.degradation_pct),
                         opt1(r.retention_pct));
    }
    out += '\n';
  }
  return out;
}

void emit_table(const ComparisonTable& table, const std::filesystem::path& stem) {
  if (table.rows.empty()) throw Error("emit_table: empty table");
  auto txt = stem;
  auto csv = stem;
  txt += ".txt";
  csv += ".csv";
  write_text(txt, format_table_text(table));
  write_text(csv, format_table_csv(table));
}

ComparisonTable parse_table_csv(std::string_view text) {
  ComparisonTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  auto opt = [](const std::string& s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    return std::stod(s);
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto f = csv_split(line);
    if (f.size() != 7) throw ParseError("comparison CSV row has " + std::to_string(f.size()) + " fields");
    try {
      ComparisonRow r;
      r.configuration = f[0];
      r.nme = std::stod(f[1]);
      r.fr_count = static_cast<std::size_t>(std::stoull(f[2]));
      r.fr_fraction = std::stod(f[3]);
      r.delta_nme = opt(f[4]);
      r.degradation_pct = opt(f[5]);
      r.retention_pct = opt(f[6]);
      table.rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw ParseError("comparison CSV: malformed number in row '" + line + "'");
    }
  }
  return table;
}

std::string report_to_json(const MetricsReport& r) {
  json j = json::object();
  j["config_tag"] = r.config_tag;
  j["per_image"] = r.per_image;
  j["nme"] = r.nme;
  j["fr_count"] = r.fr_count;
  j["fr_fraction"] = r.fr_fraction;
  j["threshold"] = r.threshold;
  j["per_region"] = r.per_region;
  if (r.iou) j["iou"] = *r.iou;
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    MetricsReport r;
    r.config_tag = j.at("config_tag").get<std::string>();
    r.per_image = j.at("per_image").get<std::map<std::string, double>>();
    r.nme = j.at("nme").get<double>();
    r.fr_count = j.at("fr_count").get<std::size_t>();
    r.fr_fraction = j.at("fr_fraction").get<double>();
    r.threshold = j.at("threshold").get<double>();
    r.per_region = j.value("per_region", std::map<std::string, double>{});
    if (auto it = j.find("iou"); it != j.end() && !it->is_null()) r.iou = it->get<double>();
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("report JSON: ") + e.what());
  }
}

std::string format_report_text(const MetricsReport& r) {
  std::string out = fmt::format("Configuration: {}\nImages: {}\nNME: {:.3f}\nFR: {} ({:.3f}, NME > {})\n",
                                r.config_tag, r.per_image.size(), r.nme, r.fr_count, r.fr_fraction,
                                r.threshold);
  if (!r.per_region.empty()) {
    out += "\nPer-region NME:\n";
    for (const auto& [name, v] : r.per_region) out += fmt::format("  {:<12} {:.3f}\n", name, v);
  }
  if (r.iou) out += fmt::format("\nMean IoU: {:.4f}\n", *r.iou);
  return out;
}

std::string format_report_csv(const MetricsReport& r) {
  std::string out = "configuration,nme,fr,fr_fraction\n";
  out += fmt::format("{},{:.3f},{},{:.3f}\n", csv_field(r.config_tag), r.nme, r.fr_count, r.fr_fraction);
  if (!r.per_region.empty()) {
    out += "\nregion,nme\n";
    for (const auto& [name, v] : r.per_region) out += fmt::format("{},{:.3f}\n", csv_field(name), v);
  }
  if (r.iou) out += fmt::format("\niou\n{:.4f}\n", *r.iou);
  out += "\nimage_id,nme\n";
  for (const auto& [id, v] : r.per_image) out += fmt::format("{},{:.6f}\n", csv_field(id), v);
  return out;
}

// ---------------------------------------------------------------------------
// Plots
// ---------------------------------------------------------------------------

void validate_plot(const PlotSpec& spec) {
  if (spec.series.empty()) throw Error("plot: no series");
  if (spec.width < 200 || spec.height < 150) throw Error("plot: canvas too small");
  for (const auto& s : spec.series) {
    if (s.y.empty()) throw Error("plot: series '" + s.name + "' is empty");
    for (double v : s.y) {
      if (!std::isfinite(v)) throw Error("plot: series '" + s.name + "' has a non-finite value");
    }
    if (spec.kind == PlotKind::line_loss) {
      if (s.x.size() != s.y.size()) {
        throw Error("plot: series '" + s.name + "' has mismatched x/y lengths");
      }
    } else if (s.y.size() != spec.categories.size()) {
      throw Error(fmt::format("plot: series '{}' has {} values for {} categories", s.name,
                              s.y.size(), spec.categories.size()));
    }
  }
}

namespace {

using raster::Color;

constexpr Color kPalette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
                              {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};
constexpr Color kInk{30, 30, 30};
constexpr Color kGrid{225, 225, 225};

Color palette(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

struct Frame {
  int left, top, right, bottom;
  double y_max;
  int y_of(double v) const {
    return bottom - static_cast<int>(std::lround((bottom - top) * (v / y_max)));
  }
};

double nice_ceiling(double v) {
  if (v <= 0.0) return 1.0;
  const double mag = std::pow(10.0, std::floor(std::log10(v)));
  for (double step : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (step * mag >= v) return step * mag;
  }
  return 10.0 * mag;
}

Frame draw_axes(Image& img, const PlotSpec& spec, double data_max) {
  Frame f{56, 28, spec.width - 16, spec.height - 56, nice_ceiling(data_max * 1.05)};
  raster::draw_text(img, (spec.width - raster::text_width(spec.title)) / 2, 8, spec.title, kInk);
  for (int k = 0; k <= 5; ++k) {
    const double v = f.y_max * k / 5.0;
    const int y = f.y_of(v);
    raster::fill_rect(img, f.left, y, f.right, y, kGrid);
    const std::string label = fmt::format("{:.4g}", v);
    raster::draw_text(img, f.left - 6 - raster::text_width(label), y - 3, label, kInk);
  }
  raster::fill_rect(img, f.left, f.top, f.left, f.bottom, kInk);
  raster::fill_rect(img, f.left, f.bottom, f.right, f.bottom, kInk);
  return f;
}

void draw_legend(Image& img, const PlotSpec& spec, const Frame& f) {
  int x = f.left;
  const int y = spec.height - 14;
  for (std::size_t i = 0; i < spec.series.size(); ++i) {
    raster::fill_rect(img, x, y, x + 8, y + 6, palette(i));
    raster::draw_text(img, x + 12, y, spec.series[i].name, kInk);
    x += 24 + raster::text_width(spec.series[i].name);
  }
}

void draw_bars(Image& img, const PlotSpec& spec) {
  double data_max = 0.0;
  for (const auto& s : spec.series) data_max = std::max(data_max, *std::max_element(s.y.begin(), s.y.end()));
  const Frame f = draw_axes(img, spec, data_max);
  const std::size_t groups = spec.categories.size();
  const double group_w = static_cast<double>(f.right - f.left) / static_cast<double>(groups);
  const double bar_w = group_w * 0.8 / static_cast<double>(spec.series.size());
  for (std::size_t g = 0; g < groups; ++g) {
    const double gx = f.left + g * group_w + group_w * 0.1;
    for (std::size_t s = 0; s < spec.series.size(); ++s) {
      const int x0 = static_cast<int>(std::lround(gx + s * bar_w));
      const int x1 = std::max(x0, static_cast<int>(std::lround(gx + (s + 1) * bar_w)) - 1);
      raster::fill_rect(img, x0, f.y_of(std::max(0.0, spec.series[s].y[g])), x1, f.bottom - 1, palette(s));
    }
    // Labels alternate between two rows and are clipped to two group widths.
    const auto max_chars = static_cast<std::size_t>(std::max(1.0, 2.0 * group_w / 6.0));
    std::string label = spec.categories[g];
    if (label.size() > max_chars) label = label.substr(0, max_chars);
    const int cx = static_cast<int>(std::lround(f.left + (g + 0.5) * group_w));
    const int ly = f.bottom + 6 + static_cast<int>(g % 2) * 11;
    raster::draw_text(img, cx - raster::text_width(label) / 2, ly, label, kInk);
  }
  draw_legend(img, spec, f);
}

void draw_lines(Image& img, const PlotSpec& spec) {
  double x_min = spec.series[0].x[0], x_max = x_min, y_max = 0.0;
  for (const auto& s : spec.series) {
    for (double v : s.x) {
      x_min = std::min(x_min, v);
      x_max = std::max(x_max, v);
    }
    for (double v : s.y) y_max = std::max(y_max, v);
  }
  if (x_max == x_min) x_max = x_min + 1.0;
  const Frame f = draw_axes(img, spec, y_max);
  auto x_of = [&](double v) {
    return f.left + 4 + (f.right - f.left - 8) * (v - x_min) / (x_max - x_min);
  };
  for (int k = 0; k <= 4; ++k) {
    const double v = x_min + (x_max - x_min) * k / 4.0;
    const std::string label = fmt::format("{:.4g}", v);
    const int x = static_cast<int>(std::lround(x_of(v)));
    raster::fill_rect(img, x, f.bottom, x, f.bottom + 3, kInk);
    raster::draw_text(img, x - raster::text_width(label) / 2, f.bottom + 6, label, kInk);
  }
  raster::draw_text(img, (f.left + f.right - raster::text_width("EPOCH")) / 2, f.bottom + 18, "EPOCH", kInk);
  for (std::size_t s = 0; s < spec.series.size(); ++s) {
    const auto& series = spec.series[s];
    for (std::size_t i = 0; i < series.x.size(); ++i) {
      const Point2 p{x_of(series.x[i]), static_cast<double>(f.y_of(series.y[i]))};
      if (i + 1 < series.x.size()) {
        raster::draw_line(img, p, {x_of(series.x[i + 1]), static_cast<double>(f.y_of(series.y[i + 1]))},
                          2, palette(s));
      }
      if (series.x.size() <= 50) {
        raster::fill_rect(img, static_cast<int>(p.x) - 2, static_cast<int>(p.y) - 2,
                          static_cast<int>(p.x) + 2, static_cast<int>(p.y) + 2, palette(s));
      }
    }
  }
  draw_legend(img, spec, f);
}

}  // namespace

Image render_plot(const PlotSpec& spec) {
  validate_plot(spec);
  Image img(spec.width, spec.height, 3, 255);
  if (spec.kind == PlotKind::line_loss) {
    draw_lines(img, spec);
  } else {
    draw_bars(img, spec);
  }
  return img;
}

void emit_plot(const PlotSpec& spec) {
  const Image img = render_plot(spec);
  if (spec.output_path.has_parent_path()) {
    std::filesystem::create_directories(spec.output_path.parent_path());
  }
  save_png(img, spec.output_path);
}

PlotSpec loss_plot(const std::vector<std::pair<std::string, LossCurve>>& curves,
                   std::filesystem::path output_path) {
  PlotSpec spec;
  spec.kind = PlotKind::line_loss;
  spec.title = "TOTAL LOSS VS EPOCH";
  spec.output_path = std::move(output_path);
  for (const auto& [name, curve] : curves) {
    PlotSeries s;
    s.name = name;
    for (const auto& row : curve.rows) {
      s.x.push_back(row.epoch);
      s.y.push_back(row.total);
    }
    spec.series.push_back(std::move(s));
  }
  return spec;
}

}  // namespace stylemark
