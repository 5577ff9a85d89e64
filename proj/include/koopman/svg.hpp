#pragma once

#include <string>
#include <vector>

namespace koopman {

// One polyline. Non-finite samples split the line into segments; a labeled
// series gets a legend entry.
struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  double width = 1.5;
  bool dashed = false;
};

struct Panel {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  std::vector<Series> series;
};

// Panels rendered row-major on a cols-wide grid into one standalone SVG
// document. The output is deterministic: equal figures render to equal
// bytes, and no timestamps or generator metadata are emitted.
struct Figure {
  int cols = 1;
  int panel_width = 420;
  int panel_height = 300;
  std::vector<Panel> panels;
};

// Tick positions inside [lo, hi] on a 1/2/5 decade ladder, aiming for about
// `target` intervals. A degenerate span is widened around its value first.
std::vector<double> nice_ticks(double lo, double hi, int target = 5);

// Palette color for the index-th series of a panel (cycles).
std::string default_color(int index);

std::string render_svg(const Figure& fig);
void write_svg(const std::string& path, const Figure& fig);

}  // namespace koopman
