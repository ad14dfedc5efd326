#include "lanebev/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "lanebev/errors.hpp"

namespace lanebev {

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("camera focal lengths must be positive");
  if (!(cam_height > 0.0)) throw InvalidArgument("camera height must be positive");
  if (!(std::abs(pitch) < std::numbers::pi / 2)) throw InvalidArgument("|pitch| must be < pi/2");
  if (!std::isfinite(cx) || !std::isfinite(cy)) throw InvalidArgument("principal point not finite");
}

Point3D world_to_camera(const Point3D& p, const CameraModel& cam) {
  const double s = std::sin(cam.pitch);
  const double c = std::cos(cam.pitch);
  const double dy = p.y;
  const double dz = p.z - cam.cam_height;
  return {p.x, -s * dy - c * dz, c * dy - s * dz};
}

Point3D camera_to_world(const Point3D& pc, const CameraModel& cam) {
  const double s = std::sin(cam.pitch);
  const double c = std::cos(cam.pitch);
  return {pc.x, c * pc.z - s * pc.y, cam.cam_height - s * pc.z - c * pc.y};
}

double optical_depth(const Point3D& p, const CameraModel& cam) {
  return world_to_camera(p, cam).z;
}

Pixel project(const Point3D& p, const CameraModel& cam) {
  const Point3D pc = world_to_camera(p, cam);
  if (!(pc.z > 0.0)) {
    throw NonPositiveDepth("point has optical-axis depth " + std::to_string(pc.z));
  }
  return {cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy};
}

Point3D lift(double u, double v, double depth, const CameraModel& cam) {
  if (!(depth > 0.0)) throw NonPositiveDepth("lift depth " + std::to_string(depth));
  const Point3D pc{(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth};
  return camera_to_world(pc, cam);
}

// ---------------------------------------------------------------------------

void DepthBinSpec::validate() const {
  if (!(d_min > 0.0) || !(d_min < d_max)) throw InvalidArgument("depth bins need 0 < d_min < d_max");
  if (bins < 2) throw InvalidArgument("depth bins need at least 2 bins");
}

std::vector<double> DepthBinSpec::edges() const {
  std::vector<double> e(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) {
    const double t = static_cast<double>(i) / bins;
    e[static_cast<std::size_t>(i)] = mode == DepthBinMode::uniform
                                         ? d_min + (d_max - d_min) * t
                                         : d_min * std::pow(d_max / d_min, t);
  }
  e.front() = d_min;
  e.back() = d_max;
  return e;
}

std::vector<double> DepthBinSpec::centers() const {
  const std::vector<double> e = edges();
  std::vector<double> c(static_cast<std::size_t>(bins));
  for (std::size_t i = 0; i < c.size(); ++i) {
    c[i] = mode == DepthBinMode::uniform ? 0.5 * (e[i] + e[i + 1]) : std::sqrt(e[i] * e[i + 1]);
  }
  return c;
}

double DepthBinSpec::continuous_index(double d) const {
  if (mode == DepthBinMode::uniform) return (d - d_min) / (d_max - d_min) * bins - 0.5;
  return std::log(d / d_min) / std::log(d_max / d_min) * bins - 0.5;
}

int depth_to_bin(double d, const DepthBinSpec& spec) {
  if (!(d >= spec.d_min)) return 0;  // also maps NaN to the nearest bin
  if (d >= spec.d_max) return spec.bins - 1;
  int i = static_cast<int>(std::floor(spec.continuous_index(d) + 0.5));
  i = std::clamp(i, 0, spec.bins - 1);
  // Snap against the exact edge values so the result is consistent with edges().
  const std::vector<double> e = spec.edges();
  while (i > 0 && d < e[static_cast<std::size_t>(i)]) --i;
  while (i < spec.bins - 1 && d >= e[static_cast<std::size_t>(i) + 1]) ++i;
  return i;
}

// ---------------------------------------------------------------------------

void BEVGridSpec::validate() const {
  if (!(x_min < x_max) || !(y_min < y_max)) throw InvalidArgument("BEV grid extents are empty");
  if (cols < 1 || rows < 1) throw InvalidArgument("BEV grid needs at least one cell");
}

std::optional<BevCell> bev_cell_of(const Point3D& p, const BEVGridSpec& grid) {
  if (!(p.x >= grid.x_min && p.x < grid.x_max && p.y >= grid.y_min && p.y < grid.y_max)) {
    return std::nullopt;
  }
  int col = static_cast<int>(std::floor((p.x - grid.x_min) / grid.cell_width()));
  int row = static_cast<int>(std::floor((p.y - grid.y_min) / grid.cell_length()));
  col = std::clamp(col, 0, grid.cols - 1);
  row = std::clamp(row, 0, grid.rows - 1);
  // Boundaries are evaluated exactly as col_left/row_front compute them.
  while (col > 0 && p.x < grid.col_left(col)) --col;
  while (col < grid.cols - 1 && p.x >= grid.col_left(col + 1)) ++col;
  while (row > 0 && p.y < grid.row_front(row)) --row;
  while (row < grid.rows - 1 && p.y >= grid.row_front(row + 1)) ++row;
  return BevCell{row, col};
}

}  // namespace lanebev
