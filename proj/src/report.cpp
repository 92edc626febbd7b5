#include "etx/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "etx/error.hpp"

namespace etx {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{:.6f}", v);
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("not a number: '" + s + "'");
  }
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::size_t CsvTable::column(std::string_view name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw FormatError("CSV has no column '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - header.begin());
}

double CsvTable::number(std::size_t row, std::string_view name) const {
  return parse_double(rows.at(row).at(column(name)));
}

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_commas(line);
    if (first) {
      t.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw FormatError("CSV row " + std::to_string(t.rows.size() + 1) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (first) throw FormatError("empty CSV");
  return t;
}

CsvTable read_csv_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open " + path.string());
  return read_csv(f);
}

void write_series_header(std::ostream& out) { out << kSeriesHeader << '\n'; }

void write_tick(std::ostream& out, const TickRecord& t) {
  fmt::print(out, "{},{},{},{},{},{}\n", t.tick, num(t.angle_mean_deg), num(t.angle_std_deg), t.degenerate_count,
             num(t.acc_model1), num(t.acc_model2));
}

void write_series_csv(std::ostream& out, const RunSeries& series) {
  write_series_header(out);
  for (const auto& t : series.ticks) write_tick(out, t);
}

std::vector<TickRecord> parse_series_csv(std::istream& in) {
  const CsvTable t = read_csv(in);
  if (t.header != split_commas(kSeriesHeader)) throw FormatError("unexpected series CSV header");
  std::vector<TickRecord> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    TickRecord rec;
    rec.tick = static_cast<std::size_t>(t.number(r, "tick"));
    rec.angle_mean_deg = t.number(r, "angle_mean_deg");
    rec.angle_std_deg = t.number(r, "angle_std_deg");
    rec.degenerate_count = static_cast<std::size_t>(t.number(r, "degenerate_count"));
    rec.acc_model1 = t.number(r, "acc_model1");
    rec.acc_model2 = t.number(r, "acc_model2");
    out.push_back(rec);
  }
  return out;
}

void write_correlation_csv(std::ostream& out, const CorrelationReport& r) {
  out << kCorrelationHeader << '\n';
  fmt::print(out, "{},{},{}\n", num(r.within_1), num(r.within_2), num(r.between));
}

void write_alignment_csv(std::ostream& out, const AlignmentReport& r) {
  out << kAlignmentHeader << '\n';
  fmt::print(out, "{},{}\n", num(r.align_1), num(r.align_2));
}

void write_dimension_table(std::ostream& out, std::span<const double> dims, double p) {
  out << kDimensionHeader << '\n';
  for (double n : dims) fmt::print(out, "{},{}\n", n, num(expected_angle(n, p)));
}

void write_markov_table(std::ostream& out, std::span<const double> ts, double n) {
  out << kMarkovHeader << '\n';
  for (double t : ts) {
    const MarkovBound b = markov_angle_bound(t, n);
    // Shortest round-trip form, so the bound parses back to exactly 1/t.
    fmt::print(out, "{},{},{}\n", t, num(b.angle_deg), b.probability);
  }
}

void write_monte_carlo_row(std::ostream& out, std::size_t n, const AngleStat& s, bool header) {
  if (header) out << kMonteCarloHeader << '\n';
  fmt::print(out, "{},{},{},{},{},{}\n", n, s.count, num(s.mean), num(s.std), num(s.min), num(s.rms_cos_angle));
}

void write_manifest(std::ostream& out, const Manifest& manifest) {
  for (const auto& [k, v] : manifest) {
    std::string value = v;
    std::replace(value.begin(), value.end(), '\n', ' ');
    out << k << '=' << value << '\n';
  }
}

Manifest read_manifest(std::istream& in) {
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("manifest line without '=': " + line);
    m.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return m;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& csv) {
  std::filesystem::path p = csv;
  p.replace_extension(".manifest");
  return p;
}

std::string render_svg(std::span<const TickRecord> ticks, const std::string& title) {
  constexpr double kPanelW = 280, kPanelH = 200, kLeft = 50, kTop = 40, kGap = 30, kBottom = 40;
  constexpr double kWidth = kLeft + 3 * kPanelW + 2 * (kGap + kLeft) + 20;
  constexpr double kHeight = kTop + kPanelH + kBottom;

  std::size_t max_tick = 1;
  for (const auto& t : ticks) max_tick = std::max(max_tick, t.tick);

  struct Panel {
    const char* label;
    double y_max;
    double TickRecord::*field;
  };
  const Panel panels[] = {{"angle (deg)", 90.0, &TickRecord::angle_mean_deg},
                          {"accuracy model 1", 1.0, &TickRecord::acc_model1},
                          {"accuracy model 2", 1.0, &TickRecord::acc_model2}};

  std::string s;
  s += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\">\n",
      kWidth, kHeight, kWidth, kHeight);
  s += "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) {
    s += fmt::format("<text x=\"{:.2f}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
                     kWidth / 2, xml_escape(title));
  }
  for (std::size_t p = 0; p < 3; ++p) {
    const Panel& panel = panels[p];
    const double x0 = kLeft + static_cast<double>(p) * (kPanelW + kGap + kLeft);
    const double y0 = kTop + kPanelH;
    auto px = [&](double tick) { return x0 + tick / static_cast<double>(max_tick) * kPanelW; };
    auto py = [&](double v) { return y0 - std::clamp(v / panel.y_max, 0.0, 1.0) * kPanelH; };

    s += fmt::format("<g class=\"panel\" id=\"panel{}\">\n", p + 1);
    s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"black\"/>\n", x0, y0,
                     x0 + kPanelW, y0);
    s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"black\"/>\n", x0, y0, x0,
                     y0 - kPanelH);
    for (int k = 0; k <= 2; ++k) {
      const double v = panel.y_max * k / 2.0;
      s += fmt::format(
          "<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{}</text>\n",
          x0 - 4, py(v) + 3, panel.y_max == 1.0 ? fmt::format("{:.1f}", v) : fmt::format("{:.0f}", v));
    }
    s += fmt::format(
        "<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">0</text>\n",
        x0, y0 + 14);
    s += fmt::format(
        "<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
        x0 + kPanelW, y0 + 14, max_tick);
    s += fmt::format(
        "<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">tick</text>\n",
        x0 + kPanelW / 2, y0 + 30);
    s += fmt::format(
        "<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        x0 + kPanelW / 2, kTop - 8, panel.label);

    std::string points;
    std::string markers;
    for (const auto& t : ticks) {
      const double v = t.*panel.field;
      if (!std::isfinite(v)) continue;
      const double x = px(static_cast<double>(t.tick)), y = py(v);
      points += fmt::format("{}{:.2f},{:.2f}", points.empty() ? "" : " ", x, y);
      markers += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"2.5\" fill=\"steelblue\"/>\n", x, y);
    }
    if (!points.empty()) {
      s += fmt::format("<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"{}\"/>\n", points);
    }
    s += markers;
    s += "</g>\n";
  }
  s += "</svg>\n";
  return s;
}

void emit_svg(const RunSeries& series, const std::filesystem::path& path, const std::string& title) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path.string());
  f << render_svg(series.ticks, title);
  if (!f) throw InputError("failed writing " + path.string());
}

}  // namespace etx
