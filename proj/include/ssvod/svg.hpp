// SPDX-License-Identifier: Apache-2.0
//
// Minimal static SVG charts. Output depends only on the data.

#pragma once

#include <span>
#include <string>
#include <vector>

namespace ssvod {

struct Series {
  std::string name;
  std::vector<double> y;
};

/// Polyline chart; series longer than `max_points` are averaged into bins.
std::string line_chart_svg(const std::string& title, std::span<const Series> series,
                           const std::string& x_label, std::size_t max_points = 400);

struct Bar {
  std::string label;
  double value = 0.0;
  double error = 0.0;  // drawn as a whisker when > 0
};

std::string bar_chart_svg(const std::string& title, std::span<const Bar> bars,
                          const std::string& y_label);

}  // namespace ssvod
