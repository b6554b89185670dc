/*
 * Copyright 2026 The dkgp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "dkgp/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "dkgp/error.hpp"

namespace dkgp {

namespace {

std::string escape_xml(const std::string& text) {
  std::string out;
  for (char c : text) {
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

std::string number(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.3f", v);
  return buffer;
}

std::string point(double x, double y) { return number(x) + ',' + number(y); }

}  // namespace

std::string render_plot_svg(const PosteriorCurve& curve, const SubjectRecord& observed, const PlotOptions& options) {
  if (curve.empty()) throw Error(ErrorKind::Parameter, "cannot plot an empty curve");
  const Index n = curve.size();
  std::vector<double> sd(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) sd[i] = std::sqrt(std::max(0.0, curve.variance[i]));

  double t_lo = curve.times.minCoeff(), t_hi = curve.times.maxCoeff();
  double y_lo = std::numeric_limits<double>::infinity(), y_hi = -y_lo;
  for (Index i = 0; i < n; ++i) {
    y_lo = std::min(y_lo, curve.mean[i] - 2 * sd[i]);
    y_hi = std::max(y_hi, curve.mean[i] + 2 * sd[i]);
  }
  for (const auto& v : observed.visits) {
    t_lo = std::min(t_lo, v.time_months);
    t_hi = std::max(t_hi, v.time_months);
    y_lo = std::min(y_lo, v.value);
    y_hi = std::max(y_hi, v.value);
  }
  if (t_hi <= t_lo) t_hi = t_lo + 1;
  if (y_hi <= y_lo) {
    y_lo -= 0.5;
    y_hi += 0.5;
  }
  const double m = options.margin_px;
  const double plot_w = options.width_px - 2 * m, plot_h = options.height_px - 2 * m;
  auto px = [&](double t) { return m + (t - t_lo) / (t_hi - t_lo) * plot_w; };
  auto py = [&](double y) { return m + (y_hi - y) / (y_hi - y_lo) * plot_h; };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width_px << "\" height=\""
      << options.height_px << "\" viewBox=\"0 0 " << options.width_px << ' ' << options.height_px << "\">\n";
  svg << "  <rect x=\"0\" y=\"0\" width=\"" << options.width_px << "\" height=\"" << options.height_px
      << "\" fill=\"white\"/>\n";
  const std::string title = options.title.empty() ? observed.subject_id : options.title;
  svg << "  <title>" << escape_xml(title) << "</title>\n";

  // Band: upper edge left to right, then lower edge right to left.
  svg << "  <polygon id=\"band\" fill=\"#4c78a8\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
  for (Index i = 0; i < n; ++i) svg << (i ? " " : "") << point(px(curve.times[i]), py(curve.mean[i] + 2 * sd[i]));
  for (Index i = n - 1; i >= 0; --i) svg << ' ' << point(px(curve.times[i]), py(curve.mean[i] - 2 * sd[i]));
  svg << "\"/>\n";

  svg << "  <polyline id=\"mean\" fill=\"none\" stroke=\"#4c78a8\" stroke-width=\"2\" points=\"";
  for (Index i = 0; i < n; ++i) svg << (i ? " " : "") << point(px(curve.times[i]), py(curve.mean[i]));
  svg << "\"/>\n";

  svg << "  <g id=\"observed\" fill=\"#e45756\">\n";
  for (const auto& v : observed.visits) {
    svg << "    <circle cx=\"" << number(px(v.time_months)) << "\" cy=\"" << number(py(v.value)) << "\" r=\"4\"/>\n";
  }
  svg << "  </g>\n";

  svg << "  <line x1=\"" << m << "\" y1=\"" << options.height_px - m << "\" x2=\"" << options.width_px - m
      << "\" y2=\"" << options.height_px - m << "\" stroke=\"black\"/>\n";
  svg << "  <line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << options.height_px - m
      << "\" stroke=\"black\"/>\n";
  svg << "  <text x=\"" << options.width_px / 2 << "\" y=\"" << options.height_px - 12
      << "\" text-anchor=\"middle\" font-size=\"12\">months</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

void emit_plot(const PosteriorCurve& curve, const SubjectRecord& observed, const std::filesystem::path& path,
               const PlotOptions& options) {
  const std::string svg = render_plot_svg(curve, observed, options);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << svg;
  if (!out.flush()) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

}  // namespace dkgp
