#pragma once

#include <string>
#include <vector>

namespace dckd {

/// Plain-text table with a rule under the header; columns padded to their widest cell.
std::string render_text_table(const std::vector<std::string>& header,
                              const std::vector<std::vector<std::string>>& rows);

/// "psnr/ssim" with 2 and 4 decimals, or "failed" for NaN.
std::string format_psnr_ssim(double psnr_db, double ssim);

/// Quotes a CSV field when it contains a comma, quote or newline.
std::string csv_field(const std::string& text);

struct PlotSeries {
  std::string name;
  std::vector<double> values;  // one per x tick; NaN leaves a gap
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<std::string> x_ticks;  // evenly spaced categories
  std::vector<PlotSeries> series;
};

/// Standalone SVG document.
std::string render_svg(const LinePlot& plot);

}  // namespace dckd
