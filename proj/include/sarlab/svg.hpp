#pragma once

// Deterministic, self-contained SVG rendering for the five figure kinds the
// pipeline emits. Output is byte-identical for identical input: coordinates
// are formatted with locale-independent fixed precision and jitter comes
// from per-point seeds carried in the data.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "sarlab/explain.hpp"

namespace sarlab {

struct ImportanceBarData {
  std::string title;
  std::string value_label = "mean |SHAP| (margin units)";
  std::vector<std::pair<std::string, double>> bars;  // descending values
};

struct BeeswarmData {
  std::string title;
  std::string value_label = "SHAP value (margin units)";
  std::vector<std::string> feature_names;  // band order, top to bottom
  std::vector<BeeswarmPoint> points;       // feature field indexes feature_names
};

struct PdpCurveData {
  std::string title;
  std::string x_label;
  std::string y_label;  // e.g. "odds ratio (OR)" or "relative probability (RP)"
  std::vector<double> x;
  std::vector<double> y;
  double reference_line = 1.0;
  bool draw_reference = true;
};

struct LocalProfileData {
  std::string title;
  std::string value_label = "SHAP value (margin units)";
  // feature name, attribution, display string of the raw covariate value
  std::vector<std::tuple<std::string, double, std::string>> entries;
};

struct PairedImportanceData {
  std::string title;
  std::string left_label;
  std::string right_label;
  std::string value_label = "mean |SHAP| (margin units)";
  // feature, left arm value, right arm value
  std::vector<std::tuple<std::string, double, double>> rows;
};

using PlotData = std::variant<ImportanceBarData, BeeswarmData, PdpCurveData, LocalProfileData,
                              PairedImportanceData>;

namespace svg_detail {

inline std::string num(double v) {
  if (!std::isfinite(v)) return "0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 2);
  return std::string(buf, res.ptr);
}

inline std::string escape(const std::string& s) {
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

class Canvas {
 public:
  Canvas(double width, double height) : w_(width), h_(height) {
    body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w_) << "\" height=\""
          << num(h_) << "\" viewBox=\"0 0 " << num(w_) << " " << num(h_) << "\">\n";
    body_ << "<rect x=\"0\" y=\"0\" width=\"" << num(w_) << "\" height=\"" << num(h_)
          << "\" fill=\"white\"/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke,
            double width = 1.0, const std::string& dash = {}) {
    body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2)
          << "\" y2=\"" << num(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\""
          << num(width) << "\"";
    if (!dash.empty()) body_ << " stroke-dasharray=\"" << dash << "\"";
    body_ << "/>\n";
  }

  void rect(double x, double y, double w, double h, const std::string& fill) {
    body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w)
          << "\" height=\"" << num(h) << "\" fill=\"" << fill << "\"/>\n";
  }

  void circle(double cx, double cy, double r, const std::string& fill) {
    body_ << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"" << num(r)
          << "\" fill=\"" << fill << "\"/>\n";
  }

  void text(double x, double y, const std::string& s, double size = 11.0,
            const std::string& anchor = "start", const std::string& fill = "#222222") {
    body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-family=\"sans-serif\""
          << " font-size=\"" << num(size) << "\" text-anchor=\"" << anchor << "\" fill=\""
          << fill << "\">" << escape(s) << "</text>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                double width = 1.5) {
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width)
          << "\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) body_ << ' ';
      body_ << num(pts[i].first) << ',' << num(pts[i].second);
    }
    body_ << "\"/>\n";
  }

  std::string finish() {
    body_ << "</svg>\n";
    return body_.str();
  }

 private:
  double w_, h_;
  std::ostringstream body_;
};

inline std::string empty_svg(const std::string& title) {
  Canvas c(480, 240);
  c.text(240, 24, title, 13, "middle");
  c.text(240, 130, "no data", 16, "middle", "#888888");
  return c.finish();
}

struct Ticks {
  std::vector<double> values;
};

inline Ticks nice_ticks(double lo, double hi, int target = 5) {
  Ticks t;
  if (!(hi > lo)) {
    t.values = {lo};
    return t;
  }
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (mag * m >= raw) {
      step = mag * m;
      break;
    }
  }
  double v = std::ceil(lo / step) * step;
  for (; v <= hi + step * 1e-9; v += step) t.values.push_back(v);
  return t;
}

inline std::string heat_color(double scalar) {  // 0 -> blue, 1 -> red
  const double s = std::clamp(scalar, 0.0, 1.0);
  const int r = int(std::lround(31 + s * (214 - 31)));
  const int g = int(std::lround(119 + s * (39 - 119)));
  const int b = int(std::lround(180 + s * (40 - 180)));
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace svg_detail

inline std::string render_importance_bar(const ImportanceBarData& d) {
  using namespace svg_detail;
  if (d.bars.empty()) return empty_svg(d.title);
  const double row_h = 18.0;
  const double left = 190.0, top = 48.0, plot_w = 380.0;
  const double height = top + row_h * double(d.bars.size()) + 40.0;
  Canvas c(left + plot_w + 30.0, height);
  c.text((left + plot_w + 30.0) / 2.0, 22, d.title, 13, "middle");

  double vmax = 0.0;
  for (const auto& [name, v] : d.bars) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;

  for (std::size_t i = 0; i < d.bars.size(); ++i) {
    const double y = top + row_h * double(i);
    const double w = plot_w * d.bars[i].second / vmax;
    c.text(left - 6, y + row_h * 0.7, d.bars[i].first, 10, "end");
    c.rect(left, y + 2, std::max(w, 0.0), row_h - 5, "#4c78a8");
    c.text(left + w + 4, y + row_h * 0.7, num(d.bars[i].second), 9, "start", "#555555");
  }
  c.line(left, top, left, top + row_h * double(d.bars.size()), "#222222");
  c.text(left + plot_w / 2.0, height - 12, d.value_label, 11, "middle");
  return c.finish();
}

inline std::string render_beeswarm(const BeeswarmData& d) {
  using namespace svg_detail;
  if (d.points.empty() || d.feature_names.empty()) return empty_svg(d.title);
  for (const auto& p : d.points)
    if (p.feature >= d.feature_names.size())
      throw std::invalid_argument("render_beeswarm: point references unknown feature band");

  const double band_h = 34.0;
  const double left = 190.0, top = 48.0, plot_w = 420.0;
  const double height = top + band_h * double(d.feature_names.size()) + 44.0;
  Canvas c(left + plot_w + 30.0, height);
  c.text((left + plot_w + 30.0) / 2.0, 22, d.title, 13, "middle");

  double lo = 0.0, hi = 0.0;
  for (const auto& p : d.points) {
    lo = std::min(lo, p.shap);
    hi = std::max(hi, p.shap);
  }
  if (!(hi > lo)) hi = lo + 1.0;
  auto xm = [&](double v) { return left + plot_w * (v - lo) / (hi - lo); };

  for (std::size_t f = 0; f < d.feature_names.size(); ++f) {
    const double cy = top + band_h * (double(f) + 0.5);
    c.text(left - 6, cy + 3, d.feature_names[f], 10, "end");
    c.line(left, cy, left + plot_w, cy, "#eeeeee");
  }
  c.line(xm(0.0), top, xm(0.0), top + band_h * double(d.feature_names.size()), "#999999", 1.0,
         "3,3");
  for (const auto& p : d.points) {
    const double cy = top + band_h * (double(p.feature) + 0.5) + (p.jitter - 0.5) * (band_h - 10);
    const std::string fill = p.missing ? "#999999" : heat_color(p.color);
    c.circle(xm(p.shap), cy, 2.0, fill);
  }
  const auto ticks = nice_ticks(lo, hi);
  const double axis_y = top + band_h * double(d.feature_names.size());
  for (double tv : ticks.values) {
    c.line(xm(tv), axis_y, xm(tv), axis_y + 4, "#222222");
    c.text(xm(tv), axis_y + 15, num(tv), 9, "middle");
  }
  c.line(left, axis_y, left + plot_w, axis_y, "#222222");
  c.text(left + plot_w / 2.0, height - 8, d.value_label, 11, "middle");
  return c.finish();
}

inline std::string render_pdp_curve(const PdpCurveData& d) {
  using namespace svg_detail;
  if (d.x.empty() || d.x.size() != d.y.size()) return empty_svg(d.title);
  const double left = 70.0, top = 48.0, plot_w = 420.0, plot_h = 260.0;
  Canvas c(left + plot_w + 30.0, top + plot_h + 60.0);
  c.text((left + plot_w + 30.0) / 2.0, 22, d.title, 13, "middle");

  const double xlo = d.x.front(), xhi = d.x.back();
  double ylo = d.draw_reference ? d.reference_line : d.y[0];
  double yhi = ylo;
  for (double v : d.y) {
    if (std::isfinite(v)) {
      ylo = std::min(ylo, v);
      yhi = std::max(yhi, v);
    }
  }
  if (!(yhi > ylo)) yhi = ylo + 1.0;
  const double pad = 0.08 * (yhi - ylo);
  ylo -= pad;
  yhi += pad;
  auto xm = [&](double v) { return left + plot_w * (v - xlo) / (xhi > xlo ? xhi - xlo : 1.0); };
  auto ym = [&](double v) { return top + plot_h * (1.0 - (v - ylo) / (yhi - ylo)); };

  if (d.draw_reference)
    c.line(left, ym(d.reference_line), left + plot_w, ym(d.reference_line), "#bbbbbb", 1.0,
           "4,3");
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < d.x.size(); ++i)
    if (std::isfinite(d.y[i])) pts.emplace_back(xm(d.x[i]), ym(d.y[i]));
  c.polyline(pts, "#d62728", 1.8);
  for (const auto& [px, py] : pts) c.circle(px, py, 2.2, "#d62728");

  c.line(left, top, left, top + plot_h, "#222222");
  c.line(left, top + plot_h, left + plot_w, top + plot_h, "#222222");
  for (double tv : nice_ticks(ylo, yhi).values) {
    c.line(left - 4, ym(tv), left, ym(tv), "#222222");
    c.text(left - 7, ym(tv) + 3, num(tv), 9, "end");
  }
  for (double tv : nice_ticks(xlo, xhi).values) {
    c.line(xm(tv), top + plot_h, xm(tv), top + plot_h + 4, "#222222");
    c.text(xm(tv), top + plot_h + 15, num(tv), 9, "middle");
  }
  c.text(left + plot_w / 2.0, top + plot_h + 40, d.x_label, 11, "middle");
  c.text(16, top - 10, d.y_label, 11, "start");
  return c.finish();
}

inline std::string render_local_profile(const LocalProfileData& d) {
  using namespace svg_detail;
  if (d.entries.empty()) return empty_svg(d.title);
  const double row_h = 20.0;
  const double left = 210.0, top = 48.0, plot_w = 360.0;
  const double height = top + row_h * double(d.entries.size()) + 44.0;
  Canvas c(left + plot_w + 120.0, height);
  c.text((left + plot_w + 120.0) / 2.0, 22, d.title, 13, "middle");

  double amax = 0.0;
  for (const auto& [name, v, raw] : d.entries) amax = std::max(amax, std::fabs(v));
  if (amax <= 0.0) amax = 1.0;
  const double mid = left + plot_w / 2.0;
  auto xm = [&](double v) { return mid + (plot_w / 2.0) * v / amax; };

  for (std::size_t i = 0; i < d.entries.size(); ++i) {
    const auto& [name, v, raw] = d.entries[i];
    const double y = top + row_h * double(i);
    c.text(left - 6, y + row_h * 0.7, name, 10, "end");
    const double x0 = std::min(mid, xm(v));
    c.rect(x0, y + 3, std::fabs(xm(v) - mid), row_h - 7, v >= 0 ? "#d62728" : "#4c78a8");
    c.text(left + plot_w + 8, y + row_h * 0.7, "= " + raw, 9, "start", "#555555");
  }
  c.line(mid, top, mid, top + row_h * double(d.entries.size()), "#999999", 1.0, "3,3");
  c.text(mid, height - 10, d.value_label, 11, "middle");
  return c.finish();
}

inline std::string render_paired_importance(const PairedImportanceData& d) {
  using namespace svg_detail;
  if (d.rows.empty()) return empty_svg(d.title);
  const double row_h = 18.0;
  const double label_w = 180.0, arm_w = 220.0, gap = 8.0, top = 62.0;
  const double width = arm_w + gap + label_w + gap + arm_w + 40.0;
  const double height = top + row_h * double(d.rows.size()) + 40.0;
  Canvas c(width, height);
  c.text(width / 2.0, 22, d.title, 13, "middle");

  double vmax = 0.0;
  for (const auto& [name, a, b] : d.rows) vmax = std::max({vmax, a, b});
  if (vmax <= 0.0) vmax = 1.0;
  const double left_arm_right = 20.0 + arm_w;
  const double label_mid = left_arm_right + gap + label_w / 2.0;
  const double right_arm_left = left_arm_right + gap + label_w + gap;

  c.text(left_arm_right - arm_w / 2.0, 42, d.left_label, 11, "middle");
  c.text(right_arm_left + arm_w / 2.0, 42, d.right_label, 11, "middle");

  for (std::size_t i = 0; i < d.rows.size(); ++i) {
    const auto& [name, a, b] = d.rows[i];
    const double y = top + row_h * double(i);
    const double wa = arm_w * a / vmax;
    const double wb = arm_w * b / vmax;
    c.rect(left_arm_right - wa, y + 2, wa, row_h - 5, "#4c78a8");
    c.rect(right_arm_left, y + 2, wb, row_h - 5, "#d62728");
    c.text(label_mid, y + row_h * 0.7, name, 9, "middle");
  }
  c.line(left_arm_right, top, left_arm_right, top + row_h * double(d.rows.size()), "#222222");
  c.line(right_arm_left, top, right_arm_left, top + row_h * double(d.rows.size()), "#222222");
  c.text(width / 2.0, height - 10, d.value_label, 11, "middle");
  return c.finish();
}

inline std::string render_svg(const PlotData& data) {
  return std::visit(
      [](const auto& d) -> std::string {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, ImportanceBarData>) return render_importance_bar(d);
        else if constexpr (std::is_same_v<T, BeeswarmData>) return render_beeswarm(d);
        else if constexpr (std::is_same_v<T, PdpCurveData>) return render_pdp_curve(d);
        else if constexpr (std::is_same_v<T, LocalProfileData>) return render_local_profile(d);
        else return render_paired_importance(d);
      },
      data);
}

}  // namespace sarlab
