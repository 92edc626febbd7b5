#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "etx/experiments.hpp"
#include "etx/geometry.hpp"

namespace etx {

inline constexpr const char* kSeriesHeader = "tick,angle_mean_deg,angle_std_deg,degenerate_count,acc_model1,acc_model2";
inline constexpr const char* kCorrelationHeader = "angles_model_1,angles_model_2,angles_between_models";
inline constexpr const char* kAlignmentHeader = "adversarial_angles_model_1,adversarial_angles_model_2";
inline constexpr const char* kDimensionHeader = "dimension,expected_angle_deg";
inline constexpr const char* kMarkovHeader = "t,angle_deg,probability_upper_bound";
inline constexpr const char* kMonteCarloHeader = "dimension,pairs,mean_deg,std_deg,min_deg,rms_cos_angle_deg";

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of `name` in the header; throws FormatError when absent.
  std::size_t column(std::string_view name) const;
  double number(std::size_t row, std::string_view name) const;
};

// Comma-separated, no quoting. Throws FormatError on an empty input or ragged rows.
CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::filesystem::path& path);

// Numbers are written with six decimals; NaN as "nan".
void write_series_header(std::ostream& out);
void write_tick(std::ostream& out, const TickRecord& tick);
void write_series_csv(std::ostream& out, const RunSeries& series);
// Throws FormatError unless the header is exactly kSeriesHeader.
std::vector<TickRecord> parse_series_csv(std::istream& in);

void write_correlation_csv(std::ostream& out, const CorrelationReport& report);
void write_alignment_csv(std::ostream& out, const AlignmentReport& report);

void write_dimension_table(std::ostream& out, std::span<const double> dims, double p = 2.0);
void write_markov_table(std::ostream& out, std::span<const double> ts, double n);
void write_monte_carlo_row(std::ostream& out, std::size_t n, const AngleStat& stat, bool header = true);

// One "key=value" line per entry, in order.
void write_manifest(std::ostream& out, const Manifest& manifest);
Manifest read_manifest(std::istream& in);

// Sibling path with the extension replaced by ".manifest".
std::filesystem::path manifest_path_for(const std::filesystem::path& csv);

// Three side-by-side panels: folded angle mean (0-90 deg), accuracy of model 1, accuracy of
// model 2 (0-1), against the tick. Identical series render to identical bytes.
std::string render_svg(std::span<const TickRecord> ticks, const std::string& title = {});
void emit_svg(const RunSeries& series, const std::filesystem::path& path, const std::string& title = {});

}  // namespace etx
