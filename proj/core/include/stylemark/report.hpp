#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stylemark/metrics.hpp"
#include "stylemark/style.hpp"

namespace stylemark {

struct ComparisonRow {
  std::string configuration;
  double nme = 0.0;
  std::size_t fr_count = 0;
  double fr_fraction = 0.0;
  // Relative to the baseline row; empty for tables without a baseline.
  std::optional<double> delta_nme;
  std::optional<double> degradation_pct;
  std::optional<double> retention_pct;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
};

// Writes <stem>.txt (aligned text) and <stem>.csv with header
// configuration,nme,fr,fr_fraction,delta_nme,degradation_pct,retention_pct.
// NME is printed with 3 decimals, FR as an integer count, fractions with 3.
void emit_table(const ComparisonTable& table, const std::filesystem::path& stem);

std::string format_table_text(const ComparisonTable& table);
std::string format_table_csv(const ComparisonTable& table);

// Parses the CSV written by emit_table.
ComparisonTable parse_table_csv(std::string_view text);

// Single-report outputs: JSON round-trips exactly; text and CSV mirror the
// table columns plus per-region and IoU blocks.
std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(std::string_view text);
std::string format_report_text(const MetricsReport& report);
std::string format_report_csv(const MetricsReport& report);

enum class PlotKind { bar_nme_fr, bar_per_region, line_loss };

struct PlotSeries {
  std::string name;
  std::vector<double> x;  // line_loss only
  std::vector<double> y;
};

struct PlotSpec {
  PlotKind kind = PlotKind::bar_nme_fr;
  std::string title;
  // Bar kinds: one label per bar group. Each series has one value per category.
  std::vector<std::string> categories;
  std::vector<PlotSeries> series;
  std::filesystem::path output_path;
  int width = 640;
  int height = 400;
};

// Throws Error for an empty or inconsistent spec.
void validate_plot(const PlotSpec& spec);

// Deterministic PNG; identical specs give identical bytes.
Image render_plot(const PlotSpec& spec);
void emit_plot(const PlotSpec& spec);

// Loss-curve plot spec from named curves (total loss vs epoch).
PlotSpec loss_plot(const std::vector<std::pair<std::string, LossCurve>>& curves,
                   std::filesystem::path output_path);

}  // namespace stylemark
