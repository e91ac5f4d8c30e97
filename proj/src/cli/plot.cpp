#include <algorithm>
#include <cmath>
#include <cstdio>

#include "pqda/cli.hpp"
#include "pqda/errors.hpp"

namespace pqda::cli {

namespace {

constexpr double width = 720.0, panel_height = 220.0;
constexpr double left = 70.0, right = 20.0, top = 30.0, bottom = 40.0;
constexpr const char* palette[] = {"#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

struct Panel {
  const char* column;
  const char* title;
};
constexpr Panel panels[] = {{"calibration_error", "Calibration error"}, {"nrmse", "NRMSE"}, {"r2", "R2"}};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
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

// Widens a degenerate range and adds a small margin.
std::pair<double, double> padded(double lo, double hi) {
  if (!(hi > lo)) {
    const double pad = std::max(std::abs(lo) * 0.1, 0.5);
    return {lo - pad, hi + pad};
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

} // namespace

std::string render_plot(const std::vector<Table>& tables, const std::vector<std::string>& labels) {
  if (tables.empty()) throw ConfigError("plot needs at least one metrics file");
  std::vector<std::vector<double>> xs;
  for (const auto& t : tables) xs.push_back(t.column("episode_index"));

  double x_lo = INFINITY, x_hi = -INFINITY;
  for (const auto& x : xs) {
    for (double v : x) {
      x_lo = std::min(x_lo, v);
      x_hi = std::max(x_hi, v);
    }
  }
  if (!std::isfinite(x_lo)) x_lo = x_hi = 1.0;
  std::tie(x_lo, x_hi) = padded(x_lo, x_hi);

  const double total_height = 3 * panel_height;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" +
                    num(total_height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  const double plot_w = width - left - right;
  const double plot_h = panel_height - top - bottom;
  for (std::size_t p = 0; p < 3; ++p) {
    std::vector<std::vector<double>> ys;
    for (const auto& t : tables) ys.push_back(t.column(panels[p].column));
    double y_lo = INFINITY, y_hi = -INFINITY;
    for (const auto& y : ys) {
      for (double v : y) {
        y_lo = std::min(y_lo, v);
        y_hi = std::max(y_hi, v);
      }
    }
    if (!std::isfinite(y_lo)) y_lo = y_hi = 0.0;
    std::tie(y_lo, y_hi) = padded(y_lo, y_hi);

    const double oy = p * panel_height + top;
    auto sx = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * plot_w; };
    auto sy = [&](double y) { return oy + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h; };

    svg += "<g class=\"panel\" id=\"" + std::string(panels[p].column) + "\">\n";
    svg += "<text x=\"" + num(left) + "\" y=\"" + num(oy - 10) + "\" font-weight=\"bold\">" + panels[p].title +
           "</text>\n";
    svg += "<rect x=\"" + num(left) + "\" y=\"" + num(oy) + "\" width=\"" + num(plot_w) + "\" height=\"" +
           num(plot_h) + "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double v = y_lo + (y_hi - y_lo) * k / 4.0;
      svg += "<line x1=\"" + num(left - 4) + "\" x2=\"" + num(left) + "\" y1=\"" + num(sy(v)) + "\" y2=\"" +
             num(sy(v)) + "\" stroke=\"black\"/>";
      svg += "<text x=\"" + num(left - 6) + "\" y=\"" + num(sy(v) + 4) + "\" text-anchor=\"end\">" +
             tick_label(v) + "</text>\n";
    }
    const double first_tick = std::ceil(x_lo), last_tick = std::floor(x_hi);
    const double stride = std::max(1.0, std::ceil((last_tick - first_tick) / 10.0));
    for (double x = first_tick; x <= last_tick; x += stride) {
      svg += "<line x1=\"" + num(sx(x)) + "\" x2=\"" + num(sx(x)) + "\" y1=\"" + num(oy + plot_h) + "\" y2=\"" +
             num(oy + plot_h + 4) + "\" stroke=\"black\"/>";
      svg += "<text x=\"" + num(sx(x)) + "\" y=\"" + num(oy + plot_h + 16) + "\" text-anchor=\"middle\">" +
             tick_label(x) + "</text>\n";
    }
    svg += "<text x=\"" + num(left + plot_w / 2) + "\" y=\"" + num(oy + plot_h + 32) +
           "\" text-anchor=\"middle\">episode</text>\n";

    for (std::size_t s = 0; s < tables.size(); ++s) {
      const char* colour = palette[s % std::size(palette)];
      std::string points;
      for (std::size_t i = 0; i < xs[s].size(); ++i) points += num(sx(xs[s][i])) + "," + num(sy(ys[s][i])) + " ";
      svg += "<polyline class=\"series\" fill=\"none\" stroke=\"" + std::string(colour) +
             "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
      for (std::size_t i = 0; i < xs[s].size(); ++i) {
        svg += "<circle cx=\"" + num(sx(xs[s][i])) + "\" cy=\"" + num(sy(ys[s][i])) + "\" r=\"2.5\" fill=\"" +
               colour + "\"/>";
      }
      svg += "\n";
    }
    svg += "</g>\n";
  }

  // Legend in the top-right corner of the first panel.
  svg += "<g class=\"legend\">\n";
  for (std::size_t s = 0; s < tables.size(); ++s) {
    const double y = top + 14 + 16.0 * static_cast<double>(s);
    const double x = width - right - 150;
    svg += "<line x1=\"" + num(x) + "\" x2=\"" + num(x + 20) + "\" y1=\"" + num(y - 4) + "\" y2=\"" + num(y - 4) +
           "\" stroke=\"" + palette[s % std::size(palette)] + "\" stroke-width=\"2\"/>";
    svg += "<text x=\"" + num(x + 26) + "\" y=\"" + num(y) + "\">" + escape(labels.at(s)) + "</text>\n";
  }
  svg += "</g>\n</svg>\n";
  return svg;
}

void cmd_plot(const std::vector<fs::path>& csvs, const fs::path& svg_out, const std::vector<std::string>& labels) {
  if (!labels.empty() && labels.size() != csvs.size()) throw ConfigError("one label per metrics file is required");
  std::vector<Table> tables;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < csvs.size(); ++i) {
    Table t = parse_table(read_file(csvs[i]));
    if (!labels.empty()) {
      names.push_back(labels[i]);
    } else {
      names.push_back(t.meta("source").value_or(csvs[i].stem().string()));
    }
    tables.push_back(std::move(t));
  }
  try {
    write_file_atomic(svg_out, render_plot(tables, names));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("plot: ") + e.what());
  }
}

} // namespace pqda::cli
