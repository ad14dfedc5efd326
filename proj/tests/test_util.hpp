#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "lanebev/network.hpp"
#include "lanebev/random.hpp"
#include "lanebev/scenegen.hpp"

namespace lanebev::testing {

/// 32x64 image, C=8, D=6, E=3; the camera is the desk camera scaled by 1/4.
inline ModelConfig tiny_model() {
  ModelConfig m;
  m.dims.image_height = 32;
  m.dims.image_width = 64;
  m.dims.channels = 8;
  m.dims.depth_bins = 6;
  m.dims.embedding = 3;
  m.dims.downsample = 8;
  m.dims.head_channels = 8;
  m.depth.bins = 6;
  m.grid.cols = 8;
  m.grid.rows = 8;
  return m;
}

inline CameraModel tiny_camera() {
  CameraModel c;
  c.fx = c.fy = 40.0;
  c.cx = 32.0;
  c.cy = 16.0;
  return c;
}

inline SceneParams tiny_scene(std::uint64_t seed) {
  SceneParams p;
  p.seed = seed;
  p.n_lanes = 3;
  p.image_height = 32;
  p.image_width = 64;
  p.cam = tiny_camera();
  p.depth = tiny_model().depth;
  p.grid = tiny_model().grid;
  return p;
}

/// Zero-initialized biases put ReLUs exactly at their kink wherever a
/// convolution sees an all-zero patch; finite differences need a generic point.
inline void jitter_biases(Network& net, std::uint64_t seed, double scale = 0.05) {
  Rng rng(seed);
  ParameterSet& params = net.parameters();
  for (int id = 0; id < params.count(); ++id) {
    if (!params.name(id).ends_with(".bias")) continue;
    for (double& v : params.value(id).values()) v += rng.uniform(-scale, scale);
  }
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

/// Central difference of f with respect to x[i].
inline double central_difference(const std::function<double()>& f, double& x, double step = 1e-5) {
  const double saved = x;
  x = saved + step;
  const double up = f();
  x = saved - step;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * step);
}

}  // namespace lanebev::testing
