#include "rdr/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rdr {

namespace {

const char* kPalette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

}  // namespace

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("box_stats: no values");
  std::sort(values.begin(), values.end());
  BoxStats b;
  b.q1 = quantile(values, 0.25);
  b.median = quantile(values, 0.5);
  b.q3 = quantile(values, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo = b.q1 - 1.5 * iqr;
  const double hi = b.q3 + 1.5 * iqr;
  b.min = b.q1;
  b.max = b.q3;
  for (double v : values) {
    if (v < lo || v > hi) {
      b.outliers.push_back(v);
    } else {
      b.min = std::min(b.min, v);
      b.max = std::max(b.max, v);
    }
  }
  return b;
}

void write_boxplot_svg(const std::filesystem::path& path, const std::vector<BoxGroup>& groups,
                       const std::string& y_label) {
  if (groups.empty()) throw std::invalid_argument("boxplot: no groups");
  const double panel_w = 260, panel_h = 300, margin = 50, top = 40;
  const double width = margin + panel_w * static_cast<double>(groups.size()) + 20;
  const double height = top + panel_h + 70;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"" << fmt(height)
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // Shared y range over every value.
  double lo = 1.0, hi = 0.0;
  for (const auto& g : groups) {
    for (const auto& s : g.series) {
      for (double v : s.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  lo = std::max(0.0, std::floor(lo * 10.0) / 10.0);
  hi = std::min(1.0, std::ceil(hi * 10.0) / 10.0);
  if (hi <= lo) hi = lo + 0.1;
  auto y_of = [&](double v) { return top + panel_h * (1.0 - (v - lo) / (hi - lo)); };

  svg << "<text x=\"14\" y=\"" << fmt(top + panel_h / 2) << "\" transform=\"rotate(-90 14 " << fmt(top + panel_h / 2)
      << ")\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = lo + (hi - lo) * t / 5.0;
    svg << "<text x=\"" << fmt(margin - 4) << "\" y=\"" << fmt(y_of(v) + 4) << "\" text-anchor=\"end\">" << fmt(v)
        << "</text>\n";
  }
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    const double x0 = margin + panel_w * static_cast<double>(gi);
    svg << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(panel_w - 10) << "\" height=\""
        << fmt(panel_h) << "\" fill=\"none\" stroke=\"#888\"/>\n";
    svg << "<text x=\"" << fmt(x0 + (panel_w - 10) / 2) << "\" y=\"" << fmt(top - 10)
        << "\" text-anchor=\"middle\" font-weight=\"bold\">" << escape(g.title) << "</text>\n";
    const double slot = (panel_w - 10) / static_cast<double>(std::max<size_t>(1, g.series.size()));
    for (size_t si = 0; si < g.series.size(); ++si) {
      const auto& s = g.series[si];
      const auto b = box_stats(s.values);
      const double cx = x0 + slot * (static_cast<double>(si) + 0.5);
      const double bw = std::min(40.0, slot * 0.6);
      const char* colour = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
      svg << "<line x1=\"" << fmt(cx) << "\" x2=\"" << fmt(cx) << "\" y1=\"" << fmt(y_of(b.min)) << "\" y2=\""
          << fmt(y_of(b.max)) << "\" stroke=\"black\"/>\n";
      svg << "<rect x=\"" << fmt(cx - bw / 2) << "\" y=\"" << fmt(y_of(b.q3)) << "\" width=\"" << fmt(bw)
          << "\" height=\"" << fmt(std::max(0.5, y_of(b.q1) - y_of(b.q3))) << "\" fill=\"" << colour
          << "\" fill-opacity=\"0.6\" stroke=\"black\"/>\n";
      svg << "<line x1=\"" << fmt(cx - bw / 2) << "\" x2=\"" << fmt(cx + bw / 2) << "\" y1=\"" << fmt(y_of(b.median))
          << "\" y2=\"" << fmt(y_of(b.median)) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
      for (double v : {b.min, b.max}) {
        svg << "<line x1=\"" << fmt(cx - bw / 4) << "\" x2=\"" << fmt(cx + bw / 4) << "\" y1=\"" << fmt(y_of(v))
            << "\" y2=\"" << fmt(y_of(v)) << "\" stroke=\"black\"/>\n";
      }
      for (double v : b.outliers) {
        svg << "<circle cx=\"" << fmt(cx) << "\" cy=\"" << fmt(y_of(v)) << "\" r=\"2\" fill=\"none\" stroke=\"black\"/>\n";
      }
      svg << "<text x=\"" << fmt(cx) << "\" y=\"" << fmt(top + panel_h + 16) << "\" text-anchor=\"middle\">"
          << escape(s.label) << "</text>\n";
    }
  }
  svg << "</svg>\n";
  write_file(path, svg.str());
}

void write_embedding_svg(const std::filesystem::path& path, const EmbeddingResult& e) {
  const double panel = 300, gap = 40, top = 40, left = 20;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(left * 2 + panel * 2 + gap) << "\" height=\""
      << fmt(top + panel + 50) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const torch::Tensor* panels[2] = {&e.pre, &e.post};
  const char* titles[2] = {"F_l (before refinement)", "F_r (after refinement)"};
  const double dists[2] = {e.distance_pre, e.distance_post};
  for (int p = 0; p < 2; ++p) {
    auto pts = panels[p]->to(torch::kFloat64).contiguous();
    const double x0 = left + (panel + gap) * p;
    const double extent = std::max(1e-9, pts.abs().max().item<double>()) * 1.05;
    auto map = [&](double v) { return panel / 2 + v / extent * panel / 2; };
    svg << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(panel) << "\" height=\""
        << fmt(panel) << "\" fill=\"none\" stroke=\"#888\"/>\n";
    svg << "<text x=\"" << fmt(x0 + panel / 2) << "\" y=\"" << fmt(top - 22) << "\" text-anchor=\"middle\" "
        << "font-weight=\"bold\">" << titles[p] << "</text>\n";
    svg << "<text x=\"" << fmt(x0 + panel / 2) << "\" y=\"" << fmt(top - 8)
        << "\" text-anchor=\"middle\">centroid distance " << fmt(dists[p]) << "</text>\n";
    auto acc = pts.accessor<double, 2>();
    for (int64_t i = 0; i < pts.size(0); ++i) {
      const bool src = e.domains[static_cast<size_t>(i)] == Domain::kSource;
      svg << "<circle cx=\"" << fmt(x0 + map(acc[i][0])) << "\" cy=\"" << fmt(top + panel - map(acc[i][1]))
          << "\" r=\"2.5\" fill=\"" << (src ? kPalette[0] : kPalette[1]) << "\" fill-opacity=\"0.7\"/>\n";
    }
  }
  const double ly = top + panel + 25;
  svg << "<circle cx=\"" << fmt(left + 10) << "\" cy=\"" << fmt(ly) << "\" r=\"4\" fill=\"" << kPalette[0]
      << "\"/><text x=\"" << fmt(left + 20) << "\" y=\"" << fmt(ly + 4) << "\">source</text>\n";
  svg << "<circle cx=\"" << fmt(left + 90) << "\" cy=\"" << fmt(ly) << "\" r=\"4\" fill=\"" << kPalette[1]
      << "\"/><text x=\"" << fmt(left + 100) << "\" y=\"" << fmt(ly + 4) << "\">target</text>\n";
  svg << "</svg>\n";
  write_file(path, svg.str());
}

}  // namespace rdr
