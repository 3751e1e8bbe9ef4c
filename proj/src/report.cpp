#include "ecm_sphere/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ecm_sphere/error.hpp"

namespace ecm_sphere {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write '" + path + "'");
    out << text;
    require(static_cast<bool>(out), ErrorKind::io, "failed writing '" + path + "'");
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0, ErrorKind::io, "cannot move output into '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string scores_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "metric,value\n";
  out << "n," << r.n << '\n';
  out << "v_measure," << format_number(r.vm.v) << '\n';
  out << "homogeneity," << format_number(r.vm.homogeneity) << '\n';
  out << "completeness," << format_number(r.vm.completeness) << '\n';
  out << "inertia," << format_number(r.inertia) << '\n';
  out << "cd_r," << format_number(r.cd_r) << '\n';
  out << "min_centroid_angle_deg," << format_number(r.min_angle_deg) << '\n';
  for (std::size_t i = 0; i < r.pca_variance_ratios.size(); ++i)
    out << "pca_ratio_" << i + 1 << ',' << format_number(r.pca_variance_ratios[i]) << '\n';
  return out.str();
}

std::string matrix_csv(const Tensor& m, const std::vector<std::string>& names) {
  require(m.rows() == names.size() && m.cols() == names.size(), ErrorKind::dimension,
          "matrix does not match label list");
  std::ostringstream out;
  out << "label";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out << names[i];
    for (std::size_t j = 0; j < m.cols(); ++j) out << ',' << format_number(m(i, j));
    out << '\n';
  }
  return out.str();
}

namespace {

std::string color_for(std::size_t label, std::size_t count) {
  // Evenly spaced hues; fixed saturation and lightness.
  const double h = 360.0 * static_cast<double>(label) / static_cast<double>(std::max<std::size_t>(count, 1));
  char buf[32];
  std::snprintf(buf, sizeof buf, "hsl(%d,70%%,45%%)", static_cast<int>(std::lround(h)) % 360);
  return buf;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
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

}  // namespace

std::string scatter_svg(const Tensor& coords, std::span<const std::size_t> labels,
                        const std::vector<std::string>& names, const std::string& title) {
  require(coords.cols() >= 2 || coords.rows() == 0, ErrorKind::dimension, "scatter needs 2-D coordinates");
  require(labels.size() == coords.rows(), ErrorKind::contract, "one label per point required");
  constexpr double kW = 640, kH = 640, kPad = 40, kLegend = 140;

  double minx = 0, maxx = 0, miny = 0, maxy = 0;
  for (std::size_t i = 0; i < coords.rows(); ++i) {
    const double x = coords(i, 0), y = coords(i, 1);
    if (i == 0) {
      minx = maxx = x;
      miny = maxy = y;
    }
    minx = std::min(minx, x);
    maxx = std::max(maxx, x);
    miny = std::min(miny, y);
    maxy = std::max(maxy, y);
  }
  // Equal scale on both axes so angles read true.
  const double span = std::max({maxx - minx, maxy - miny, 1e-12});
  const double cx = 0.5 * (minx + maxx), cy = 0.5 * (miny + maxy);
  const double scale = (kW - 2 * kPad) / span;

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW + kLegend << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW + kLegend << ' ' << kH << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kPad << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">" << escape(title)
      << "</text>\n";
  out << "<g id=\"points\">\n";
  for (std::size_t i = 0; i < coords.rows(); ++i) {
    const double px = kW / 2 + (coords(i, 0) - cx) * scale;
    const double py = kH / 2 - (coords(i, 1) - cy) * scale;
    out << "<circle cx=\"" << fixed(px) << "\" cy=\"" << fixed(py) << "\" r=\"3\" fill=\""
        << color_for(labels[i], names.size()) << "\" fill-opacity=\"0.8\"/>\n";
  }
  out << "</g>\n<g id=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t y = 0; y < names.size(); ++y) {
    const double ly = kPad + 18.0 * static_cast<double>(y);
    out << "<circle cx=\"" << fixed(kW + 10) << "\" cy=\"" << fixed(ly) << "\" r=\"5\" fill=\""
        << color_for(y, names.size()) << "\"/>";
    out << "<text x=\"" << fixed(kW + 20) << "\" y=\"" << fixed(ly + 4) << "\">" << escape(names[y]) << "</text>\n";
  }
  out << "</g>\n</svg>\n";
  return out.str();
}

}  // namespace ecm_sphere
