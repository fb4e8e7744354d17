// SPDX-License-Identifier: Apache-2.0

#include "ssvod/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ssvod {

namespace {

constexpr double kW = 720, kH = 400, kLeft = 60, kRight = 160, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
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

void header(std::ostringstream& o, const std::string& title) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << escape(title) << "</text>\n";
}

void axes(std::ostringstream& o, double ymin, double ymax) {
  const double x0 = kLeft, x1 = kW - kRight, y0 = kH - kBottom, y1 = kTop;
  o << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ymin + (ymax - ymin) * k / 4.0;
    const double y = y0 - (y0 - y1) * k / 4.0;
    o << "<text x=\"" << x0 - 6 << "\" y=\"" << fmt(y + 4) << "\" text-anchor=\"end\">"
      << fmt_tick(v) << "</text>\n";
  }
}

}  // namespace

std::string line_chart_svg(const std::string& title, std::span<const Series> series,
                           const std::string& x_label, std::size_t max_points) {
  std::vector<std::vector<double>> binned;
  std::size_t n = 0;
  double ymin = 0.0, ymax = 0.0;
  bool any = false;
  for (const auto& s : series) {
    n = std::max(n, s.y.size());
  }
  const std::size_t bin = n > max_points && max_points > 0 ? (n + max_points - 1) / max_points : 1;
  for (const auto& s : series) {
    std::vector<double> b;
    for (std::size_t i = 0; i < s.y.size(); i += bin) {
      double sum = 0.0;
      std::size_t c = 0;
      for (std::size_t j = i; j < std::min(s.y.size(), i + bin); ++j) {
        if (std::isfinite(s.y[j])) {
          sum += s.y[j];
          ++c;
        }
      }
      const double v = c ? sum / static_cast<double>(c) : 0.0;
      b.push_back(v);
      if (!any) {
        ymin = ymax = v;
        any = true;
      }
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
    binned.push_back(std::move(b));
  }
  ymin = std::min(ymin, 0.0);
  if (ymax <= ymin) ymax = ymin + 1.0;

  std::ostringstream o;
  header(o, title);
  axes(o, ymin, ymax);
  const double x0 = kLeft, x1 = kW - kRight, y0 = kH - kBottom, y1 = kTop;
  o << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kH - 15 << "\" text-anchor=\"middle\">"
    << escape(x_label) << "</text>\n";
  o << "<text x=\"" << x0 << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">0</text>\n";
  o << "<text x=\"" << x1 << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << n
    << "</text>\n";
  for (std::size_t s = 0; s < binned.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    const auto& b = binned[s];
    if (!b.empty()) {
      o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < b.size(); ++i) {
        const double fx = b.size() > 1 ? static_cast<double>(i) / (b.size() - 1) : 0.0;
        const double x = x0 + (x1 - x0) * fx;
        const double y = y0 - (y0 - y1) * (b[i] - ymin) / (ymax - ymin);
        o << (i ? " " : "") << fmt(x) << "," << fmt(y);
      }
      o << "\"/>\n";
    }
    const double ly = kTop + 16.0 * static_cast<double>(s);
    o << "<line x1=\"" << x1 + 12 << "\" y1=\"" << ly << "\" x2=\"" << x1 + 32 << "\" y2=\""
      << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << x1 + 38 << "\" y=\"" << ly + 4 << "\">" << escape(series[s].name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string bar_chart_svg(const std::string& title, std::span<const Bar> bars,
                          const std::string& y_label) {
  double ymax = 0.0;
  for (const auto& b : bars) ymax = std::max(ymax, b.value + std::max(0.0, b.error));
  if (ymax <= 0.0) ymax = 1.0;
  std::ostringstream o;
  header(o, title);
  axes(o, 0.0, ymax);
  const double x0 = kLeft, x1 = kW - kRight, y0 = kH - kBottom, y1 = kTop;
  o << "<text x=\"16\" y=\"" << (y0 + y1) / 2 << "\" transform=\"rotate(-90 16 "
    << (y0 + y1) / 2 << ")\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";
  const double slot = bars.empty() ? 0.0 : (x1 - x0) / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    const double bx = x0 + slot * static_cast<double>(i) + slot * 0.15;
    const double bw = slot * 0.7;
    const double h = (y0 - y1) * std::max(0.0, b.value) / ymax;
    o << "<rect x=\"" << fmt(bx) << "\" y=\"" << fmt(y0 - h) << "\" width=\"" << fmt(bw)
      << "\" height=\"" << fmt(h) << "\" fill=\"" << kPalette[i % std::size(kPalette)]
      << "\"/>\n";
    if (b.error > 0.0) {
      const double cx = bx + bw / 2;
      const double top = y0 - (y0 - y1) * (b.value + b.error) / ymax;
      const double bot = y0 - (y0 - y1) * std::max(0.0, b.value - b.error) / ymax;
      o << "<line x1=\"" << fmt(cx) << "\" y1=\"" << fmt(top) << "\" x2=\"" << fmt(cx)
        << "\" y2=\"" << fmt(bot) << "\" stroke=\"black\"/>\n";
    }
    o << "<text x=\"" << fmt(bx + bw / 2) << "\" y=\"" << y0 + 16
      << "\" text-anchor=\"middle\">" << escape(b.label) << "</text>\n";
    o << "<text x=\"" << fmt(bx + bw / 2) << "\" y=\"" << fmt(y0 - h - 4)
      << "\" text-anchor=\"middle\">" << fmt(b.value) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace ssvod
