#pragma once

// Camera and grid mathematics shared by every other module.
//
// World frame is right-front-up: x lateral (right +), y longitudinal
// (forward +), z height (up +), origin on the ground directly below the
// camera. The camera frame is the usual pinhole frame: X right, Y down,
// Z along the optical axis. "Depth" always means the optical-axis
// coordinate Z of a point in the camera frame.

#include <optional>
#include <vector>

namespace lanebev {

struct Point3D {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Point3D&, const Point3D&) = default;
};

struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

/// Pinhole intrinsics plus a ground-relative mount (height, downward pitch).
struct CameraModel {
  double fx = 160.0;
  double fy = 160.0;
  double cx = 128.0;
  double cy = 64.0;
  double cam_height = 2.0;
  double pitch = 0.3;

  /// Throws InvalidArgument when an invariant is broken.
  void validate() const;

  friend bool operator==(const CameraModel&, const CameraModel&) = default;
};

/// Camera-frame coordinates of a world point.
Point3D world_to_camera(const Point3D& p, const CameraModel& cam);
Point3D camera_to_world(const Point3D& pc, const CameraModel& cam);

/// Pinhole projection; throws NonPositiveDepth when the point is not in
/// front of the camera.
Pixel project(const Point3D& p, const CameraModel& cam);

/// Back-projects a pixel at the given optical-axis depth.
Point3D lift(double u, double v, double depth, const CameraModel& cam);

/// Optical-axis depth of a world point.
double optical_depth(const Point3D& p, const CameraModel& cam);

enum class DepthBinMode { uniform, log_spaced };

struct DepthBinSpec {
  double d_min = 2.0;
  double d_max = 66.0;
  int bins = 24;
  DepthBinMode mode = DepthBinMode::uniform;

  void validate() const;
  /// bins + 1 strictly increasing edges from d_min to d_max.
  std::vector<double> edges() const;
  std::vector<double> centers() const;
  /// Continuous bin coordinate in which bin i spans [i - 0.5, i + 0.5).
  double continuous_index(double d) const;

  friend bool operator==(const DepthBinSpec&, const DepthBinSpec&) = default;
};

/// Bin containing `d`; values outside [d_min, d_max) clamp to the end bins.
int depth_to_bin(double d, const DepthBinSpec& spec);

struct BEVGridSpec {
  double x_min = -10.0;
  double x_max = 10.0;
  double y_min = 2.0;
  double y_max = 66.0;
  int cols = 32;  ///< lateral cell count (W)
  int rows = 32;  ///< longitudinal cell count (Drows)

  void validate() const;
  double cell_width() const { return (x_max - x_min) / cols; }
  double cell_length() const { return (y_max - y_min) / rows; }
  double col_left(int col) const { return x_min + col * cell_width(); }
  double row_front(int row) const { return y_min + row * cell_length(); }
  double row_center_y(int row) const { return y_min + (row + 0.5) * cell_length(); }

  friend bool operator==(const BEVGridSpec&, const BEVGridSpec&) = default;
};

struct BevCell {
  int row = 0;
  int col = 0;

  friend bool operator==(const BevCell&, const BevCell&) = default;
};

/// Cell containing the top-down projection of `p`, or nullopt when outside
/// the half-open extents [x_min, x_max) x [y_min, y_max).
std::optional<BevCell> bev_cell_of(const Point3D& p, const BEVGridSpec& grid);

}  // namespace lanebev
