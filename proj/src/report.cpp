#include "dckd/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace dckd {

std::string render_text_table(const std::vector<std::string>& header,
                              const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size(), 0);
  auto widen = [&](const std::vector<std::string>& cells) {
    if (cells.size() > width.size()) width.resize(cells.size(), 0);
    for (std::size_t i = 0; i < cells.size(); ++i) width[i] = std::max(width[i], cells[i].size());
  };
  widen(header);
  for (const auto& r : rows) widen(r);

  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < width.size(); ++i) {
      const std::string cell = i < cells.size() ? cells[i] : "";
      if (i) out += " | ";
      out += cell + std::string(width[i] - cell.size(), ' ');
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::string out = line(header);
  std::string rule;
  for (std::size_t i = 0; i < width.size(); ++i) {
    if (i) rule += "-+-";
    rule += std::string(width[i], '-');
  }
  out += rule + "\n";
  for (const auto& r : rows) out += line(r);
  return out;
}

std::string format_psnr_ssim(double psnr_db, double ssim) {
  if (std::isnan(psnr_db) || std::isnan(ssim)) return "failed";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f/%.4f", psnr_db, ssim);
  return buf;
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

std::string render_svg(const LinePlot& plot) {
  constexpr double kWidth = 560, kHeight = 360;
  constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& s : plot.series) {
    for (double v : s.values) {
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (!std::isfinite(lo)) {
    lo = 0;
    hi = 1;
  }
  if (hi - lo < 1e-6) {
    lo -= 0.05;
    hi += 0.05;
  }
  const double pad = 0.1 * (hi - lo);
  lo -= pad;
  hi += pad;

  const std::size_t n = plot.x_ticks.size();
  auto x_at = [&](std::size_t i) { return kLeft + (n <= 1 ? pw / 2 : pw * i / (n - 1)); };
  auto y_at = [&](double v) { return kTop + ph * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(plot.title) << "</text>\n";
  o << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\""
    << kTop + ph << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + ph
    << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < n; ++i) {
    o << "<text x=\"" << num(x_at(i)) << "\" y=\"" << kTop + ph + 18
      << "\" text-anchor=\"middle\">" << xml_escape(plot.x_ticks[i]) << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    char label[32];
    std::snprintf(label, sizeof label, "%.2f", v);
    o << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(y_at(v) + 4) << "\" text-anchor=\"end\">"
      << label << "</text>\n";
    o << "<line x1=\"" << kLeft << "\" y1=\"" << num(y_at(v)) << "\" x2=\"" << kLeft + pw
      << "\" y2=\"" << num(y_at(v)) << "\" stroke=\"#ddd\"/>\n";
  }
  o << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\">"
    << xml_escape(plot.x_label) << "</text>\n";
  o << "<text transform=\"translate(18," << kTop + ph / 2
    << ") rotate(-90)\" text-anchor=\"middle\">" << xml_escape(plot.y_label) << "</text>\n";

  for (std::size_t s = 0; s < plot.series.size(); ++s) {
    const auto& series = plot.series[s];
    const char* color = kColors[s % std::size(kColors)];
    std::string path;
    bool pen_down = false;
    for (std::size_t i = 0; i < series.values.size() && i < n; ++i) {
      const double v = series.values[i];
      if (!std::isfinite(v)) {
        pen_down = false;
        continue;
      }
      path += (pen_down ? " L " : " M ") + num(x_at(i)) + " " + num(y_at(v));
      pen_down = true;
      o << "<circle cx=\"" << num(x_at(i)) << "\" cy=\"" << num(y_at(v)) << "\" r=\"3\" fill=\""
        << color << "\"/>\n";
    }
    if (!path.empty()) {
      o << "<path d=\"" << path.substr(1) << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    }
    const double ly = kTop + 10 + 18.0 * s;
    o << "<line x1=\"" << kLeft + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << kLeft + pw + 30
      << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << kLeft + pw + 36 << "\" y=\"" << ly + 4 << "\">" << xml_escape(series.name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace dckd
