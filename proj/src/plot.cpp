#include "lanebev/plot.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

namespace lanebev {

namespace {

using Mapper = std::function<std::pair<double, double>(const Point3D&)>;

std::string path_of(const Polyline& lane, const Mapper& map) {
  std::string d;
  char buf[64];
  for (std::size_t i = 0; i < lane.size(); ++i) {
    const auto [px, py] = map(lane[i]);
    std::snprintf(buf, sizeof buf, "%s%.2f,%.2f ", i == 0 ? "M" : "L", px, py);
    d += buf;
  }
  return d;
}

void draw_lanes(std::string& out, const std::vector<Polyline>& lanes, const Mapper& map,
                const char* color, const char* dash) {
  for (const Polyline& lane : lanes) {
    if (lane.empty()) continue;
    out += "<path d=\"" + path_of(lane, map) + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"2\"";
    if (dash) out += std::string(" stroke-dasharray=\"") + dash + "\"";
    out += "/>\n";
  }
}

}  // namespace

std::string render_lanes_svg(const std::vector<Polyline>& preds, const std::vector<Polyline>& gts,
                             const BEVGridSpec& grid, const PlotStyle& style) {
  const double w = style.panel_width;
  const double h = style.panel_height;
  const double margin = 30.0;
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                "font-family=\"sans-serif\" font-size=\"12\">\n",
                static_cast<int>(2 * w), static_cast<int>(h));
  out += buf;
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  // BEV panel: x to the right, y upward.
  const double sx = (w - 2 * margin) / (grid.x_max - grid.x_min);
  const double sy = (h - 2 * margin) / (grid.y_max - grid.y_min);
  const Mapper bev = [&](const Point3D& p) {
    return std::make_pair(margin + (p.x - grid.x_min) * sx, h - margin - (p.y - grid.y_min) * sy);
  };
  std::snprintf(buf, sizeof buf,
                "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"#999\"/>\n",
                margin, margin, w - 2 * margin, h - 2 * margin);
  out += buf;
  for (int r = 1; r < grid.rows; ++r) {
    const double y = h - margin - (grid.row_front(r) - grid.y_min) * sy;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#eee\"/>\n", margin, y,
                  w - margin, y);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"18\">BEV</text>\n", margin);
  out += buf;
  draw_lanes(out, gts, bev, "#2a7", nullptr);
  draw_lanes(out, preds, bev, "#d33", "6 3");

  // 3D panel: oblique view, depth recedes up and to the right, z scaled.
  const double ox = w + margin + 0.25 * (w - 2 * margin);
  const double depth_k = 0.55 * (h - 2 * margin) / (grid.y_max - grid.y_min);
  const double lat_k = 0.6 * (w - 2 * margin) / (grid.x_max - grid.x_min);
  const Mapper oblique = [&](const Point3D& p) {
    const double t = p.y - grid.y_min;
    return std::make_pair(ox + (p.x - grid.x_min) * lat_k + 0.35 * t * depth_k,
                          h - margin - t * depth_k - p.z * style.z_scale * depth_k);
  };
  const Point3D corners[4] = {{grid.x_min, grid.y_min, 0}, {grid.x_max, grid.y_min, 0},
                              {grid.x_max, grid.y_max, 0}, {grid.x_min, grid.y_max, 0}};
  out += "<polygon points=\"";
  for (const Point3D& c : corners) {
    const auto [px, py] = oblique(c);
    std::snprintf(buf, sizeof buf, "%.1f,%.1f ", px, py);
    out += buf;
  }
  out += "\" fill=\"#f6f6f6\" stroke=\"#999\"/>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"18\">3D (z x%.0f)</text>\n", w + margin, style.z_scale);
  out += buf;
  draw_lanes(out, gts, oblique, "#2a7", nullptr);
  draw_lanes(out, preds, oblique, "#d33", "6 3");

  std::snprintf(buf, sizeof buf,
                "<text x=\"%.1f\" y=\"%.1f\" fill=\"#2a7\">ground truth</text>"
                "<text x=\"%.1f\" y=\"%.1f\" fill=\"#d33\">prediction</text>\n",
                margin, h - 8, margin + 110, h - 8);
  out += buf;
  out += "</svg>\n";
  return out;
}

}  // namespace lanebev
