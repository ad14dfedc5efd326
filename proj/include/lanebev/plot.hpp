#pragma once

// SVG figure of one sample: top-down BEV view and an oblique 3D view, with
// predictions and ground truth overlaid.

#include <string>
#include <vector>

#include "lanebev/geometry.hpp"
#include "lanebev/scenegen.hpp"

namespace lanebev {

struct PlotStyle {
  int panel_width = 360;
  int panel_height = 480;
  /// Vertical exaggeration in the 3D view.
  double z_scale = 5.0;
};

std::string render_lanes_svg(const std::vector<Polyline>& preds, const std::vector<Polyline>& gts,
                             const BEVGridSpec& grid, const PlotStyle& style = {});

}  // namespace lanebev
