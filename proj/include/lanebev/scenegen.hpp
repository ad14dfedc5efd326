#pragma once

// Procedural road scenes with analytic ground truth. The road surface is the
// plane z = slope * y; lane markings are parabolic arcs
//   x_k(y) = lateral_offset + (k - (n - 1) / 2) * lane_spacing + curvature * y^2 / 2
// painted on it.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lanebev/geometry.hpp"

namespace lanebev {

struct SceneParams {
  std::uint64_t seed = 0;
  int n_lanes = 4;
  double lane_spacing = 3.5;
  double curvature = 0.0;
  double slope = 0.0;
  double lateral_offset = 0.0;
  double stripe_width = 0.3;
  int image_height = 128;
  int image_width = 256;
  CameraModel cam;
  DepthBinSpec depth;
  /// Ground-truth polylines are clipped to this grid's extents.
  BEVGridSpec grid;
  /// Longitudinal spacing of ground-truth lane points (m).
  double lane_point_step = 1.0;

  void validate() const;
  double lane_x(int lane, double y) const;
  double surface_z(double y) const { return slope * y; }
};

using Polyline = std::vector<Point3D>;

struct Sample {
  CameraModel cam;
  DepthBinSpec depth;
  int height = 0;
  int width = 0;
  /// Interleaved RGB, row-major, values in [0, 1].
  std::vector<float> image;
  /// Depth-bin index per pixel; meaningful only where ignore == 0.
  std::vector<std::uint16_t> depth_bin;
  /// 1 where the pixel ray meets no scene geometry (sky).
  std::vector<std::uint8_t> ignore;
  /// Ground-truth lanes, each ordered by increasing y.
  std::vector<Polyline> lanes;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Renders one scene. Throws DegenerateScene when no lane is visible.
Sample generate(const SceneParams& params);

/// Optical-axis depth of the surface along the ray through pixel (u, v)
/// given in continuous pixel coordinates; nullopt for sky.
std::optional<double> surface_depth(const SceneParams& params, double u, double v);

/// Parameter ranges for drawing a dataset of scenes.
struct DatasetGenConfig {
  std::uint64_t seed = 7;
  int n_train = 30;
  int n_val = 10;
  int min_lanes = 3;
  int max_lanes = 5;
  double spacing_min = 3.4;
  double spacing_max = 3.7;
  double curvature_max = 0.002;
  double slope_max = 0.04;
  double lateral_offset_max = 0.5;
  SceneParams base;

  void validate() const;
};

/// Draws scene parameters for sample `index` of `split` ("train" / "val").
SceneParams draw_scene(const DatasetGenConfig& config, int split, int index);

/// Generates a split; scenes that come out degenerate are redrawn with the
/// next attempt counter.
std::vector<Sample> generate_split(const DatasetGenConfig& config, int split, int count);

inline constexpr int kTrainSplit = 0;
inline constexpr int kValSplit = 1;

/// Writes samples as <dir>/manifest.txt plus one binary record per sample.
void write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir);
std::vector<Sample> read_dataset(const std::filesystem::path& dir);

}  // namespace lanebev
