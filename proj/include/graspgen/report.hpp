#pragma once

// CSV and SVG writers for evaluation output.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace graspgen::report {

/// %.17g keeps CSV values round-trippable and byte-stable across runs.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kUndefined = "NA";

inline std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(kUndefined); }

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : columns_(header.size()) { add(header); }

  void add(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) text_ += ',';
      text_ += escape(fields[i]);
    }
    text_ += '\n';
    ++rows_;
  }

  const std::string& str() const { return text_; }
  std::size_t data_rows() const { return rows_ - 1; }

 private:
  static std::string escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  }

  std::size_t columns_;
  std::size_t rows_ = 0;
  std::string text_;
};

struct Series {
  std::string name;
  std::vector<double> x, y;
};

namespace detail {
inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  return colors[i % 6];
}
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}
}  // namespace detail

/// Line plot with axes fixed to [x_lo, x_hi] x [y_lo, y_hi].
inline std::string svg_line_plot(const std::vector<Series>& series, const std::string& title,
                                 const std::string& xlabel, const std::string& ylabel, double x_lo = 0.0,
                                 double x_hi = 1.0, double y_lo = 0.0, double y_hi = 1.0) {
  const double W = 480, H = 360, L = 60, R = 20, T = 40, B = 50;
  const auto sx = [&](double x) { return L + (x - x_lo) / (x_hi - x_lo) * (W - L - R); };
  const auto sy = [&](double y) { return H - B - (y - y_lo) / (y_hi - y_lo) * (H - T - B); };
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"360\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"240\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
  s += "<line x1=\"" + detail::fmt(L) + "\" y1=\"" + detail::fmt(H - B) + "\" x2=\"" + detail::fmt(W - R) +
       "\" y2=\"" + detail::fmt(H - B) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + detail::fmt(L) + "\" y1=\"" + detail::fmt(T) + "\" x2=\"" + detail::fmt(L) + "\" y2=\"" +
       detail::fmt(H - B) + "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x_lo + (x_hi - x_lo) * k / 4, yv = y_lo + (y_hi - y_lo) * k / 4;
    s += "<text x=\"" + detail::fmt(sx(xv)) + "\" y=\"" + detail::fmt(H - B + 16) +
         "\" text-anchor=\"middle\" font-size=\"10\">" + detail::fmt(xv) + "</text>\n";
    s += "<text x=\"" + detail::fmt(L - 6) + "\" y=\"" + detail::fmt(sy(yv) + 3) +
         "\" text-anchor=\"end\" font-size=\"10\">" + detail::fmt(yv) + "</text>\n";
  }
  s += "<text x=\"240\" y=\"" + detail::fmt(H - 12) + "\" text-anchor=\"middle\" font-size=\"12\">" + xlabel +
       "</text>\n";
  s += "<text x=\"16\" y=\"180\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 180)\">" +
       ylabel + "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::string pts;
    for (std::size_t k = 0; k < series[i].x.size(); ++k)
      pts += detail::fmt(sx(series[i].x[k])) + "," + detail::fmt(sy(series[i].y[k])) + " ";
    s += "<polyline fill=\"none\" stroke=\"" + std::string(detail::palette(i)) + "\" stroke-width=\"1.5\" points=\"" +
         pts + "\"/>\n";
    s += "<text x=\"" + detail::fmt(W - R - 4) + "\" y=\"" + detail::fmt(T + 14 * (i + 1)) +
         "\" text-anchor=\"end\" font-size=\"10\" fill=\"" + detail::palette(i) + "\">" + series[i].name +
         "</text>\n";
  }
  return s + "</svg>\n";
}

inline std::string svg_histogram(const std::vector<double>& values, int bins, const std::string& title,
                                 const std::string& xlabel) {
  if (values.empty() || bins < 1) return "<svg xmlns=\"http://www.w3.org/2000/svg\"/>\n";
  const double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (hi <= lo) hi = lo + 1.0;
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    int b = static_cast<int>((v - lo) / (hi - lo) * bins);
    counts[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))]++;
  }
  const int peak = *std::max_element(counts.begin(), counts.end());
  const double W = 480, H = 360, L = 60, R = 20, T = 40, B = 50;
  const double bw = (W - L - R) / bins;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"360\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"240\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
  for (int b = 0; b < bins; ++b) {
    const double h = peak ? (H - T - B) * counts[static_cast<std::size_t>(b)] / peak : 0.0;
    s += "<rect x=\"" + detail::fmt(L + b * bw) + "\" y=\"" + detail::fmt(H - B - h) + "\" width=\"" +
         detail::fmt(bw - 1) + "\" height=\"" + detail::fmt(h) + "\" fill=\"#1f77b4\"/>\n";
  }
  s += "<text x=\"" + detail::fmt(L) + "\" y=\"" + detail::fmt(H - B + 16) + "\" font-size=\"10\">" +
       detail::fmt(lo) + "</text>\n";
  s += "<text x=\"" + detail::fmt(W - R) + "\" y=\"" + detail::fmt(H - B + 16) +
       "\" text-anchor=\"end\" font-size=\"10\">" + detail::fmt(hi) + "</text>\n";
  s += "<text x=\"240\" y=\"" + detail::fmt(H - 12) + "\" text-anchor=\"middle\" font-size=\"12\">" + xlabel +
       "</text>\n";
  return s + "</svg>\n";
}

}  // namespace graspgen::report
