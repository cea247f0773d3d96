// SPDX-License-Identifier: Apache-2.0
#include "normprobe/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "json.hpp"
#include "normprobe/digest.hpp"

namespace normprobe {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::string escape(std::string_view s) {
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

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

class Svg {
 public:
  Svg(double width, double height) : width_(width), height_(height) {}

  void add(const std::string& element) { body_ += element + "\n"; }

  void line(double x1, double y1, double x2, double y2, const std::string& style) {
    add("<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
        "\" " + style + "/>");
  }
  void text(double x, double y, std::string_view s, const std::string& attrs = "") {
    add("<text x=\"" + num(x) + "\" y=\"" + num(y) + "\"" + (attrs.empty() ? "" : " " + attrs) + ">" +
        escape(s) + "</text>");
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& style) {
    std::string p;
    for (const auto& [x, y] : pts) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (!p.empty()) p += ' ';
      p += num(x) + "," + num(y);
    }
    add("<polyline fill=\"none\" points=\"" + p + "\" " + style + "/>");
  }

  std::string finish() const {
    return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
           "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width_) + "\" height=\"" +
           num(height_) + "\" viewBox=\"0 0 " + num(width_) + " " + num(height_) +
           "\" font-family=\"sans-serif\" font-size=\"11\">\n"
           "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" +
           body_ + "</svg>\n";
  }

 private:
  double width_;
  double height_;
  std::string body_;
};

std::vector<double> ticks(double lo, double hi) {
  const double range = hi - lo;
  if (!(range > 0.0)) return {lo};
  const double raw = range / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (range / step <= 6.0) break;
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * range; t += step) out.push_back(t);
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  double left = 64, right = 24, top = 36, bottom = 48;
  double width = 680, height = 400;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

void axes(Svg& svg, const Frame& f, std::string_view title, std::string_view xlabel, std::string_view ylabel) {
  svg.text(f.width / 2, 20, title, "text-anchor=\"middle\" font-size=\"13\"");
  const std::string axis = "stroke=\"#444\" stroke-width=\"1\"";
  svg.line(f.left, f.py(f.y0), f.width - f.right, f.py(f.y0), axis);
  svg.line(f.left, f.py(f.y0), f.left, f.top, axis);
  for (double t : ticks(f.x0, f.x1)) {
    svg.line(f.px(t), f.py(f.y0), f.px(t), f.py(f.y0) + 4, axis);
    svg.text(f.px(t), f.py(f.y0) + 16, label(t), "text-anchor=\"middle\"");
  }
  for (double t : ticks(f.y0, f.y1)) {
    svg.line(f.left - 4, f.py(t), f.left, f.py(t), axis);
    svg.text(f.left - 7, f.py(t) + 4, label(t), "text-anchor=\"end\"");
  }
  svg.text(f.width / 2, f.height - 10, xlabel, "text-anchor=\"middle\"");
  svg.text(14, f.height / 2, ylabel,
           "text-anchor=\"middle\" transform=\"rotate(-90 14 " + num(f.height / 2) + ")\"");
}

void pad_range(double& lo, double& hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double m = 0.05 * (hi - lo);
  lo -= m;
  hi += m;
}

std::vector<std::pair<double, double>> column_pairs(const CsvTable& t, std::size_t xc, std::size_t yc) {
  std::vector<std::pair<double, double>> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) out.emplace_back(t.number(r, xc), t.number(r, yc));
  return out;
}

void legend(Svg& svg, const Frame& f, const std::vector<std::pair<std::string, std::string>>& entries) {
  double y = f.top + 8;
  for (const auto& [name, color] : entries) {
    svg.line(f.width - f.right - 150, y, f.width - f.right - 130, y, "stroke=\"" + color + "\" stroke-width=\"2\"");
    svg.text(f.width - f.right - 124, y + 4, name);
    y += 16;
  }
}

void receptive_markers(Svg& svg, const Frame& f, std::size_t length, std::size_t rf) {
  const std::string dashed = "stroke=\"#555\" stroke-width=\"1\" stroke-dasharray=\"5,4\"";
  for (double x : {static_cast<double>(rf), static_cast<double>(length) - static_cast<double>(rf)}) {
    svg.line(f.px(x), f.top, f.px(x), f.py(f.y0), dashed + " class=\"receptive-field\"");
  }
}

std::string run_kind(const std::filesystem::path& dir, std::size_t& receptive_field) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw CsvError("missing " + path.string());
  const auto m = nlohmann::json::parse(read_file(path));
  receptive_field = m.at("metrics").value("receptive_field", std::size_t{0});
  return m.at("kind").get<std::string>();
}

}  // namespace

std::string svg_prediction_plot(const CsvTable& predictions, const CsvTable& traces, std::size_t receptive_field) {
  const std::size_t ic = predictions.column("index");
  const std::size_t mc = predictions.column("mean");
  const std::size_t tc = predictions.column("target");
  const std::size_t length = predictions.rows.size();
  if (traces.rows.size() != length) throw CsvError("traces and predictions differ in length");

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t r = 0; r < traces.rows.size(); ++r) {
    for (std::size_t c = 1; c < traces.header.size(); ++c) {
      const double v = traces.number(r, c);
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  for (std::size_t r = 0; r < length; ++r) {
    for (std::size_t c : {mc, tc}) {
      lo = std::min(lo, predictions.number(r, c));
      hi = std::max(hi, predictions.number(r, c));
    }
  }
  pad_range(lo, hi);
  Frame f{1.0, static_cast<double>(std::max<std::size_t>(length, 2)), lo, hi};
  Svg svg(f.width, f.height);
  axes(svg, f, "Output predictions per index", "index i", "f(x)_i");
  for (std::size_t c = 1; c < traces.header.size(); ++c) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t r = 0; r < length; ++r) pts.emplace_back(f.px(predictions.number(r, ic)), f.py(traces.number(r, c)));
    svg.polyline(pts, "stroke=\"#1f77b4\" stroke-opacity=\"0.12\" stroke-width=\"0.7\" class=\"trace\"");
  }
  auto scaled = [&](std::size_t col) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [x, y] : column_pairs(predictions, ic, col)) pts.emplace_back(f.px(x), f.py(y));
    return pts;
  };
  svg.polyline(scaled(tc), "stroke=\"#888\" stroke-width=\"1\"");
  svg.polyline(scaled(mc), "stroke=\"#d62728\" stroke-width=\"2\" class=\"mean\"");
  receptive_markers(svg, f, length, receptive_field);
  legend(svg, f, {{"mean prediction", "#d62728"}, {"target", "#888"}, {"single predictions", "#1f77b4"}});
  return svg.finish();
}

std::string svg_heatmap(const CsvTable& map) {
  const std::size_t rows = map.rows.size();
  const std::size_t cols = map.header.size() - 1;
  if (rows == 0 || cols == 0) throw CsvError("empty localization map");
  const double left = 64, top = 36, cell_w = std::max(1.0, 600.0 / static_cast<double>(cols));
  const double cell_h = std::max(4.0, std::min(24.0, 320.0 / static_cast<double>(rows)));
  const double width = left + cell_w * static_cast<double>(cols) + 24;
  const double height = top + cell_h * static_cast<double>(rows) + 48;
  Svg svg(width, height);
  svg.text(width / 2, 20, "Localized indices per depth", "text-anchor=\"middle\" font-size=\"13\"");
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const bool on = map.rows[r][c + 1] == "1";
      svg.add("<rect class=\"cell\" x=\"" + num(left + cell_w * static_cast<double>(c)) + "\" y=\"" +
              num(top + cell_h * static_cast<double>(r)) + "\" width=\"" + num(cell_w) + "\" height=\"" +
              num(cell_h) + "\" fill=\"" + (on ? "#08306b" : "#eef3fa") + "\"/>");
    }
    if (rows <= 40 || r % 4 == 0) {
      svg.text(left - 6, top + cell_h * (static_cast<double>(r) + 0.5) + 4, map.rows[r][0], "text-anchor=\"end\"");
    }
  }
  for (double t : ticks(1.0, static_cast<double>(cols))) {
    svg.text(left + cell_w * (t - 0.5), top + cell_h * static_cast<double>(rows) + 16, label(t),
             "text-anchor=\"middle\"");
  }
  svg.text(left + cell_w * static_cast<double>(cols) / 2, height - 10, "index i", "text-anchor=\"middle\"");
  svg.text(14, top + cell_h * static_cast<double>(rows) / 2, "depth",
           "text-anchor=\"middle\" transform=\"rotate(-90 14 " +
               num(top + cell_h * static_cast<double>(rows) / 2) + ")\"");
  return svg.finish();
}

std::string svg_overlap_plot(const CsvTable& overlap) {
  const auto pts = column_pairs(overlap, overlap.column("overlap"), overlap.column("final_mse"));
  if (pts.empty()) throw CsvError("empty overlap table");
  double x0 = pts.front().first, x1 = x0, y1 = 0.0;
  for (const auto& [x, y] : pts) {
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    if (std::isfinite(y)) y1 = std::max(y1, y);
  }
  double y0 = 0.0;
  y1 = std::max(y1, 1.0);
  pad_range(x0, x1);
  pad_range(y0, y1);
  Frame f{x0, x1, y0, y1};
  Svg svg(f.width, f.height);
  axes(svg, f, "Overlap task error", "overlap o", "evaluation MSE");
  svg.line(f.px(x0), f.py(1.0), f.px(x1), f.py(1.0), "stroke=\"#999\" stroke-dasharray=\"3,3\"");
  std::vector<std::pair<double, double>> scaled;
  for (const auto& [x, y] : pts) scaled.emplace_back(f.px(x), f.py(y));
  svg.polyline(scaled, "stroke=\"#1f77b4\" stroke-width=\"2\"");
  for (const auto& [x, y] : scaled) {
    if (std::isfinite(y)) svg.add("<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"3\" fill=\"#1f77b4\"/>");
  }
  return svg.finish();
}

std::string svg_groupnorm_plot(const CsvTable& per_seed) {
  const std::size_t gc = per_seed.column("groups");
  const std::size_t dc = per_seed.column("best_distance");
  std::map<double, std::vector<double>> by_group;
  for (std::size_t r = 0; r < per_seed.rows.size(); ++r) by_group[per_seed.number(r, gc)].push_back(per_seed.number(r, dc));
  if (by_group.empty()) throw CsvError("empty group table");
  double x0 = std::log2(by_group.begin()->first), x1 = std::log2(by_group.rbegin()->first);
  double y0 = 0.0, y1 = 1.0;
  for (const auto& [g, ds] : by_group) {
    for (double d : ds) y1 = std::max(y1, d);
  }
  pad_range(x0, x1);
  pad_range(y0, y1);
  Frame f{x0, x1, y0, y1};
  Svg svg(f.width, f.height);
  axes(svg, f, "Localization distance against group count", "log2 G", "localization distance");
  std::vector<std::pair<double, double>> means;
  for (const auto& [g, ds] : by_group) {
    double sum = 0.0;
    for (double d : ds) {
      sum += d;
      svg.add("<circle cx=\"" + num(f.px(std::log2(g))) + "\" cy=\"" + num(f.py(d)) +
              "\" r=\"2.5\" fill=\"#1f77b4\" fill-opacity=\"0.5\"/>");
    }
    means.emplace_back(f.px(std::log2(g)), f.py(sum / static_cast<double>(ds.size())));
  }
  svg.polyline(means, "stroke=\"#d62728\" stroke-width=\"2\"");
  legend(svg, f, {{"mean over seeds", "#d62728"}, {"single seed", "#1f77b4"}});
  return svg.finish();
}

std::string svg_batchnorm_plot(const CsvTable& minibatch, const CsvTable& population, const CsvTable& normfree,
                               std::size_t receptive_field) {
  const std::vector<std::pair<std::string, const CsvTable*>> series = {
      {"minibatch statistics", &minibatch}, {"population statistics", &population}, {"no normalization", &normfree}};
  const std::size_t length = minibatch.rows.size();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [name, t] : series) {
    if (t->rows.size() != length) throw CsvError("prediction tables differ in length");
    const std::size_t mc = t->column("mean");
    for (std::size_t r = 0; r < length; ++r) {
      lo = std::min(lo, t->number(r, mc));
      hi = std::max(hi, t->number(r, mc));
    }
  }
  pad_range(lo, hi);
  const double strip = 10.0;
  Frame f{1.0, static_cast<double>(std::max<std::size_t>(length, 2)), lo, hi};
  f.height = 400 + strip * 4;
  f.bottom = 48 + strip * 4;
  Svg svg(f.width, f.height);
  axes(svg, f, "Batch norm inference statistics", "index i", "mean prediction");
  std::vector<std::pair<std::string, std::string>> entries;
  for (std::size_t s = 0; s < series.size(); ++s) {
    const CsvTable& t = *series[s].second;
    const std::string color = kPalette[s];
    std::vector<std::pair<double, double>> pts;
    const std::size_t ic = t.column("index"), mc = t.column("mean"), lc = t.column("localized");
    for (std::size_t r = 0; r < length; ++r) pts.emplace_back(f.px(t.number(r, ic)), f.py(t.number(r, mc)));
    svg.polyline(pts, "stroke=\"" + color + "\" stroke-width=\"1.5\"");
    const double y = f.height - 40 - strip * static_cast<double>(series.size() - s);
    for (std::size_t r = 0; r < length; ++r) {
      if (t.rows[r][lc] != "1") continue;
      const double x = f.px(t.number(r, ic));
      svg.add("<rect x=\"" + num(x - 1) + "\" y=\"" + num(y) + "\" width=\"2\" height=\"" + num(strip - 2) +
              "\" fill=\"" + color + "\"/>");
    }
    entries.emplace_back(series[s].first, color);
  }
  receptive_markers(svg, f, length, receptive_field);
  legend(svg, f, entries);
  return svg.finish();
}

std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir) {
  std::size_t rf = 0;
  const std::string kind = run_kind(dir, rf);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& svg) {
    write_file(dir / name, svg);
    written.push_back(dir / name);
  };
  if (kind == "localize") {
    emit("prediction.svg", svg_prediction_plot(read_csv(dir / "predictions.csv"), read_csv(dir / "traces.csv"), rf));
    if (std::filesystem::exists(dir / "map.csv")) emit("heatmap.svg", svg_heatmap(read_csv(dir / "map.csv")));
  } else if (kind == "overlap-sweep") {
    emit("overlap.svg", svg_overlap_plot(read_csv(dir / "overlap.csv")));
  } else if (kind == "groupnorm-sweep") {
    emit("groupnorm.svg", svg_groupnorm_plot(read_csv(dir / "groupnorm.csv")));
  } else if (kind == "batchnorm-compare") {
    emit("batchnorm.svg", svg_batchnorm_plot(read_csv(dir / "predictions_minibatch.csv"),
                                             read_csv(dir / "predictions_population.csv"),
                                             read_csv(dir / "predictions_normfree.csv"), rf));
    for (const char* tag : {"minibatch", "population", "normfree"}) {
      const auto map = dir / (std::string("map_") + tag + ".csv");
      if (std::filesystem::exists(map)) emit(std::string("heatmap_") + tag + ".svg", svg_heatmap(read_csv(map)));
    }
  } else if (kind == "verify") {
    read_csv(dir / "verify.csv");
  } else {
    throw CsvError("unknown run kind '" + kind + "'");
  }
  return written;
}

}  // namespace normprobe
