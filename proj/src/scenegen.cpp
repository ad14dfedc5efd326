#include "lanebev/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lanebev/errors.hpp"
#include "lanebev/random.hpp"

namespace lanebev {

namespace {

constexpr int kSuperSamples = 4;  // per axis
constexpr int kMaxRedraws = 64;

struct Palette {
  double ground[3];
  double stripe[3];
  double sky[3];
};

Palette palette_for(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xC0105));
  const double g = rng.uniform(0.25, 0.40);
  const double s = rng.uniform(0.85, 0.98);
  return {{g, g, g * 1.02}, {s, s, s * 0.92}, {0.55, 0.70, 0.90}};
}

bool on_stripe(const SceneParams& p, double x, double y) {
  if (y < 0.0) return false;
  const double half = 0.5 * p.stripe_width;
  for (int k = 0; k < p.n_lanes; ++k) {
    if (std::abs(x - p.lane_x(k, y)) <= half) return true;
  }
  return false;
}

}  // namespace

void SceneParams::validate() const {
  if (n_lanes < 2 || n_lanes > 6) throw InvalidArgument("n_lanes must be in 2..6");
  if (!(lane_spacing > 0.0)) throw InvalidArgument("lane_spacing must be positive");
  if (!(std::abs(curvature) <= 0.02)) throw InvalidArgument("|curvature| must be <= 0.02");
  if (!(std::abs(slope) <= 0.15)) throw InvalidArgument("|slope| must be <= 0.15");
  if (!(stripe_width > 0.0)) throw InvalidArgument("stripe_width must be positive");
  if (!(lane_point_step > 0.0)) throw InvalidArgument("lane_point_step must be positive");
  if (image_height < 1 || image_width < 1) throw InvalidArgument("image size must be positive");
  cam.validate();
  depth.validate();
  grid.validate();
}

double SceneParams::lane_x(int lane, double y) const {
  return lateral_offset + (lane - 0.5 * (n_lanes - 1)) * lane_spacing + 0.5 * curvature * y * y;
}

std::optional<double> surface_depth(const SceneParams& params, [[maybe_unused]] double u, double v) {
  const CameraModel& cam = params.cam;
  const double s = std::sin(cam.pitch);
  const double c = std::cos(cam.pitch);
  const double yn = (v - cam.cy) / cam.fy;
  // World direction of the ray scaled so its optical-axis component is 1.
  const double dir_y = c - s * yn;
  const double dir_z = -s - c * yn;
  const double denom = params.slope * dir_y - dir_z;
  if (!(denom > 0.0)) return std::nullopt;
  const double t = cam.cam_height / denom;
  if (!std::isfinite(t) || !(t > 0.0)) return std::nullopt;
  return t;
}

Sample generate(const SceneParams& params) {
  params.validate();
  const CameraModel& cam = params.cam;
  const int h_n = params.image_height;
  const int w_n = params.image_width;

  Sample out;
  out.cam = cam;
  out.depth = params.depth;
  out.height = h_n;
  out.width = w_n;
  out.image.assign(static_cast<std::size_t>(h_n) * w_n * 3, 0.0f);
  out.depth_bin.assign(static_cast<std::size_t>(h_n) * w_n, 0);
  out.ignore.assign(static_cast<std::size_t>(h_n) * w_n, 0);

  const Palette pal = palette_for(params.seed);
  constexpr double kSub = 1.0 / kSuperSamples;
  for (int i = 0; i < h_n; ++i) {
    for (int j = 0; j < w_n; ++j) {
      const std::size_t px = static_cast<std::size_t>(i) * w_n + j;
      const auto center = surface_depth(params, j + 0.5, i + 0.5);
      if (center) {
        out.depth_bin[px] = static_cast<std::uint16_t>(depth_to_bin(*center, params.depth));
      } else {
        out.ignore[px] = 1;
      }

      int sky = 0;
      int stripe = 0;
      for (int a = 0; a < kSuperSamples; ++a) {
        for (int b = 0; b < kSuperSamples; ++b) {
          const double u = j + (b + 0.5) * kSub;
          const double v = i + (a + 0.5) * kSub;
          const auto t = surface_depth(params, u, v);
          if (!t) {
            ++sky;
            continue;
          }
          const Point3D hit = lift(u, v, *t, cam);
          if (on_stripe(params, hit.x, hit.y)) ++stripe;
        }
      }
      const double total = kSuperSamples * kSuperSamples;
      const double f_sky = sky / total;
      const double f_stripe = stripe / total;
      const double f_ground = 1.0 - f_sky - f_stripe;
      for (int ch = 0; ch < 3; ++ch) {
        const double val = f_sky * pal.sky[ch] + f_stripe * pal.stripe[ch] + f_ground * pal.ground[ch];
        out.image[px * 3 + static_cast<std::size_t>(ch)] =
            static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }

  const BEVGridSpec& grid = params.grid;
  const double step = params.lane_point_step;
  const long first = static_cast<long>(std::ceil(grid.y_min / step));
  for (int k = 0; k < params.n_lanes; ++k) {
    Polyline best;
    Polyline run;
    for (long n = first;; ++n) {
      const double y = static_cast<double>(n) * step;
      if (y >= grid.y_max) break;
      const Point3D p{params.lane_x(k, y), y, params.surface_z(y)};
      bool visible = p.x >= grid.x_min && p.x < grid.x_max && y >= grid.y_min;
      if (visible) {
        const Point3D pc = world_to_camera(p, cam);
        if (pc.z > 0.0) {
          const Pixel px = project(p, cam);
          visible = px.u >= 0.0 && px.u < w_n && px.v >= 0.0 && px.v < h_n;
        } else {
          visible = false;
        }
      }
      if (visible) {
        run.push_back(p);
      } else {
        if (run.size() > best.size()) best = run;
        run.clear();
      }
    }
    if (run.size() > best.size()) best = run;
    if (best.size() >= 2) out.lanes.push_back(std::move(best));
  }
  if (out.lanes.empty()) throw DegenerateScene("no lane is visible in the generated scene");
  return out;
}

// ---------------------------------------------------------------------------

void DatasetGenConfig::validate() const {
  if (n_train < 0 || n_val < 0) throw InvalidArgument("split sizes must be non-negative");
  if (min_lanes < 2 || max_lanes > 6 || min_lanes > max_lanes) {
    throw InvalidArgument("lane count range must lie within 2..6");
  }
  if (!(spacing_min > 0.0) || spacing_min > spacing_max) throw InvalidArgument("bad spacing range");
  if (!(curvature_max >= 0.0 && curvature_max <= 0.02)) throw InvalidArgument("bad curvature bound");
  if (!(slope_max >= 0.0 && slope_max <= 0.15)) throw InvalidArgument("bad slope bound");
  if (!(lateral_offset_max >= 0.0)) throw InvalidArgument("bad lateral offset bound");
  base.validate();
}

SceneParams draw_scene(const DatasetGenConfig& config, int split, int index) {
  Rng rng(mix_seed(mix_seed(config.seed, static_cast<std::uint64_t>(split)),
                   static_cast<std::uint64_t>(index)));
  SceneParams p = config.base;
  p.seed = rng.next();
  p.n_lanes = rng.uniform_int(config.min_lanes, config.max_lanes);
  p.lane_spacing = rng.uniform(config.spacing_min, config.spacing_max);
  p.curvature = rng.uniform(-config.curvature_max, config.curvature_max);
  p.slope = rng.uniform(-config.slope_max, config.slope_max);
  p.lateral_offset = rng.uniform(-config.lateral_offset_max, config.lateral_offset_max);
  return p;
}

std::vector<Sample> generate_split(const DatasetGenConfig& config, int split, int count) {
  config.validate();
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  int draw_index = 0;
  for (int i = 0; i < count; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxRedraws) {
        throw DegenerateScene("could not draw a visible scene for sample " + std::to_string(i));
      }
      try {
        samples.push_back(generate(draw_scene(config, split, draw_index++)));
        break;
      } catch (const DegenerateScene&) {
      }
    }
  }
  return samples;
}

}  // namespace lanebev
