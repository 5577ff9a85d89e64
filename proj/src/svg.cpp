#include "koopman/svg.hpp"

#include "koopman/io.hpp"
#include "koopman/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace koopman {
namespace {

constexpr double kMarginLeft = 56.0;
constexpr double kMarginRight = 14.0;
constexpr double kMarginTop = 30.0;
constexpr double kMarginBottom = 44.0;

std::string escape_xml(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (const char c : s) {
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

// Pixel coordinates; fixed two decimals keep the byte stream stable.
std::string px(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s(buf);
  if (s == "-0.00") s = "0.00";
  return s;
}

std::string tick_label(double v) {
  if (v == 0.0) v = 0.0;  // normalize -0
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return std::string(buf);
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

void widen_if_degenerate(Range& r) {
  if (r.hi > r.lo) return;
  const double w = std::max(0.5, std::abs(r.lo) * 0.1);
  r.lo -= w;
  r.hi += w;
}

void pad(Range& r, double frac) {
  const double w = (r.hi - r.lo) * frac;
  r.lo -= w;
  r.hi += w;
}

// Data extents over the finite samples of every series; empty panels plot
// the unit box.
void panel_ranges(const Panel& panel, Range& rx, Range& ry) {
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  for (const auto& s : panel.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  rx = std::isfinite(xlo) ? Range{xlo, xhi} : Range{0.0, 1.0};
  ry = std::isfinite(ylo) ? Range{ylo, yhi} : Range{0.0, 1.0};
  widen_if_degenerate(rx);
  widen_if_degenerate(ry);
  pad(rx, 0.04);
  pad(ry, 0.06);
}

void append_text(std::string& out, double x, double y, const std::string& anchor,
                 int font_size, const std::string& text, const std::string& extra = "") {
  if (text.empty()) return;
  out += "<text x=\"" + px(x) + "\" y=\"" + px(y) + "\" text-anchor=\"" + anchor +
         "\" font-family=\"sans-serif\" font-size=\"" + std::to_string(font_size) + "\"" +
         extra + ">" + escape_xml(text) + "</text>\n";
}

void render_panel(std::string& out, const Panel& panel, int index, double ox, double oy,
                  double pw, double ph) {
  const double x0 = ox + kMarginLeft;
  const double y0 = oy + kMarginTop;
  const double w = pw - kMarginLeft - kMarginRight;
  const double h = ph - kMarginTop - kMarginBottom;

  Range rx, ry;
  panel_ranges(panel, rx, ry);
  const auto X = [&](double v) { return x0 + (v - rx.lo) / (rx.hi - rx.lo) * w; };
  const auto Y = [&](double v) { return y0 + h - (v - ry.lo) / (ry.hi - ry.lo) * h; };

  // Grid and ticks.
  for (const double t : nice_ticks(rx.lo, rx.hi)) {
    out += "<line x1=\"" + px(X(t)) + "\" y1=\"" + px(y0) + "\" x2=\"" + px(X(t)) +
           "\" y2=\"" + px(y0 + h) + "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    append_text(out, X(t), y0 + h + 16, "middle", 11, tick_label(t));
  }
  for (const double t : nice_ticks(ry.lo, ry.hi)) {
    out += "<line x1=\"" + px(x0) + "\" y1=\"" + px(Y(t)) + "\" x2=\"" + px(x0 + w) +
           "\" y2=\"" + px(Y(t)) + "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    append_text(out, x0 - 6, Y(t), "end", 11, tick_label(t), " dy=\"0.32em\"");
  }

  // Series, clipped to the plot rectangle.
  const std::string clip_id = "clip" + std::to_string(index);
  out += "<clipPath id=\"" + clip_id + "\"><rect x=\"" + px(x0) + "\" y=\"" + px(y0) +
         "\" width=\"" + px(w) + "\" height=\"" + px(h) + "\"/></clipPath>\n";
  out += "<g clip-path=\"url(#" + clip_id + ")\">\n";
  for (const auto& s : panel.series) {
    std::string d;
    bool pen_down = false;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        pen_down = false;
        continue;
      }
      d += pen_down ? "L" : "M";
      d += px(X(s.x[i])) + " " + px(Y(s.y[i])) + " ";
      pen_down = true;
    }
    if (d.empty()) continue;
    out += "<path d=\"" + d + "\" fill=\"none\" stroke=\"" + escape_xml(s.color) +
           "\" stroke-width=\"" + px(s.width) + "\" stroke-linejoin=\"round\"";
    if (s.dashed) out += " stroke-dasharray=\"6,4\"";
    out += "/>\n";
  }
  out += "</g>\n";

  // Frame above the grid and the clipped lines.
  out += "<rect x=\"" + px(x0) + "\" y=\"" + px(y0) + "\" width=\"" + px(w) +
         "\" height=\"" + px(h) + "\" fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>\n";

  append_text(out, ox + pw / 2, oy + 19, "middle", 13, panel.title, " font-weight=\"bold\"");
  append_text(out, x0 + w / 2, oy + ph - 10, "middle", 12, panel.xlabel);
  if (!panel.ylabel.empty()) {
    const double lx = ox + 16, ly = y0 + h / 2;
    out += "<text x=\"" + px(lx) + "\" y=\"" + px(ly) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
           "transform=\"rotate(-90 " +
           px(lx) + " " + px(ly) + ")\">" + escape_xml(panel.ylabel) + "</text>\n";
  }

  // Legend for labeled series, top-right inside the plot.
  std::vector<const Series*> labeled;
  std::size_t longest = 0;
  for (const auto& s : panel.series)
    if (!s.label.empty()) {
      labeled.push_back(&s);
      longest = std::max(longest, s.label.size());
    }
  if (labeled.empty()) return;
  const double lw = std::min(w - 10.0, 34.0 + 6.8 * static_cast<double>(longest));
  const double lh = 8.0 + 16.0 * static_cast<double>(labeled.size());
  const double lx = x0 + w - lw - 6, ly = y0 + 6;
  out += "<rect x=\"" + px(lx) + "\" y=\"" + px(ly) + "\" width=\"" + px(lw) +
         "\" height=\"" + px(lh) +
         "\" fill=\"#ffffff\" fill-opacity=\"0.85\" stroke=\"#888888\" stroke-width=\"0.5\"/>\n";
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const double ry_ = ly + 14.0 + 16.0 * static_cast<double>(i);
    out += "<line x1=\"" + px(lx + 6) + "\" y1=\"" + px(ry_ - 4) + "\" x2=\"" + px(lx + 24) +
           "\" y2=\"" + px(ry_ - 4) + "\" stroke=\"" + escape_xml(labeled[i]->color) +
           "\" stroke-width=\"" + px(labeled[i]->width) + "\"";
    if (labeled[i]->dashed) out += " stroke-dasharray=\"6,4\"";
    out += "/>\n";
    append_text(out, lx + 28, ry_, "start", 11, labeled[i]->label);
  }
}

}  // namespace

std::vector<double> nice_ticks(double lo, double hi, int target) {
  if (!std::isfinite(lo) || !std::isfinite(hi))
    throw NumericalError("nice_ticks: non-finite range");
  if (hi < lo) std::swap(lo, hi);
  Range r{lo, hi};
  widen_if_degenerate(r);
  if (target < 2) target = 2;

  const double raw = (r.hi - r.lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double resid = raw / mag;
  const double step = (resid <= 1.0 ? 1.0 : resid <= 2.0 ? 2.0 : resid <= 5.0 ? 5.0 : 10.0) * mag;

  // Integer multiples of the step avoid accumulated drift in the positions.
  const auto k0 = static_cast<long long>(std::ceil(r.lo / step - 1e-9));
  const auto k1 = static_cast<long long>(std::floor(r.hi / step + 1e-9));
  std::vector<double> ticks;
  for (long long k = k0; k <= k1; ++k) {
    double v = static_cast<double>(k) * step;
    if (v == 0.0) v = 0.0;  // normalize -0
    ticks.push_back(v);
  }
  return ticks;
}

std::string default_color(int index) {
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  const int n = 8;
  return kPalette[((index % n) + n) % n];
}

std::string render_svg(const Figure& fig) {
  if (fig.cols < 1) throw ConfigError("figure: cols must be at least 1");
  if (fig.panels.empty()) throw ConfigError("figure: no panels");
  if (fig.panel_width < 120 || fig.panel_height < 90)
    throw ConfigError("figure: panel size too small");
  for (const auto& p : fig.panels)
    for (const auto& s : p.series)
      require(s.x.size() == s.y.size(), "figure: series x/y length mismatch");

  const int rows = (static_cast<int>(fig.panels.size()) + fig.cols - 1) / fig.cols;
  const int W = fig.cols * fig.panel_width;
  const int H = rows * fig.panel_height;

  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(W) +
         "\" height=\"" + std::to_string(H) + "\" viewBox=\"0 0 " + std::to_string(W) + " " +
         std::to_string(H) + "\">\n";
  out += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(W) + "\" height=\"" +
         std::to_string(H) + "\" fill=\"#ffffff\"/>\n";
  for (std::size_t i = 0; i < fig.panels.size(); ++i) {
    const int r = static_cast<int>(i) / fig.cols;
    const int c = static_cast<int>(i) % fig.cols;
    render_panel(out, fig.panels[i], static_cast<int>(i), c * fig.panel_width,
                 r * fig.panel_height, fig.panel_width, fig.panel_height);
  }
  out += "</svg>\n";
  return out;
}

void write_svg(const std::string& path, const Figure& fig) {
  write_text_file(path, render_svg(fig));
}

}  // namespace koopman
