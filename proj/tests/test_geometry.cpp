#include <gtest/gtest.h>

#include <cmath>

#include "lanebev/errors.hpp"
#include "lanebev/geometry.hpp"
#include "lanebev/random.hpp"

using namespace lanebev;

namespace {

CameraModel hand_camera() {
  CameraModel c;
  c.fx = c.fy = 100.0;
  c.cx = c.cy = 50.0;
  c.cam_height = 1.0;
  c.pitch = 0.0;
  return c;
}

CameraModel random_camera(Rng& rng) {
  CameraModel c;
  c.fx = rng.uniform(50.0, 400.0);
  c.fy = rng.uniform(50.0, 400.0);
  c.cx = rng.uniform(0.0, 300.0);
  c.cy = rng.uniform(0.0, 200.0);
  c.cam_height = rng.uniform(0.5, 3.0);
  c.pitch = rng.uniform(-0.6, 0.6);
  return c;
}

}  // namespace

TEST(Project, OpticalAxisMapsToPrincipalPoint) {
  const CameraModel cam;
  for (double d : {0.5, 3.0, 40.0}) {
    const Pixel px = project(lift(cam.cx, cam.cy, d, cam), cam);
    EXPECT_NEAR(px.u, cam.cx, 1e-9);
    EXPECT_NEAR(px.v, cam.cy, 1e-9);
  }
}

TEST(Project, HandEvaluatedPinhole) {
  const Pixel px = project({1.0, 10.0, 1.0}, hand_camera());
  EXPECT_DOUBLE_EQ(px.u, 60.0);
  EXPECT_DOUBLE_EQ(px.v, 50.0);
}

TEST(Project, PitchedCameraMatchesRotatedFrame) {
  CameraModel cam = hand_camera();
  cam.pitch = 0.2;
  const Point3D p{0.5, 12.0, 0.0};
  // Camera-frame coordinates from the rotation written out by hand.
  const double yc = -std::sin(0.2) * 12.0 + std::cos(0.2) * 1.0;
  const double zc = std::cos(0.2) * 12.0 + std::sin(0.2) * 1.0;
  const Pixel px = project(p, cam);
  EXPECT_NEAR(px.u, 100.0 * 0.5 / zc + 50.0, 1e-12);
  EXPECT_NEAR(px.v, 100.0 * yc / zc + 50.0, 1e-12);
  EXPECT_NEAR(optical_depth(p, cam), zc, 1e-12);
}

TEST(Project, ZeroDepthThrows) {
  // With zero pitch the optical-axis depth is the y coordinate.
  EXPECT_THROW(project({1.0, 0.0, 1.0}, hand_camera()), NonPositiveDepth);
  EXPECT_THROW(project({1.0, -3.0, 1.0}, hand_camera()), NonPositiveDepth);
}

TEST(Lift, InvertsHandExample) {
  const Point3D p = lift(60.0, 50.0, 10.0, hand_camera());
  EXPECT_NEAR(p.x, 1.0, 1e-12);
  EXPECT_NEAR(p.y, 10.0, 1e-12);
  EXPECT_NEAR(p.z, 1.0, 1e-12);
}

TEST(Lift, PrincipalPointLiesOnAxis) {
  const CameraModel cam = hand_camera();
  const Point3D p = lift(cam.cx, cam.cy, 7.0, cam);
  EXPECT_NEAR(p.x, 0.0, 1e-12);
  EXPECT_NEAR(p.y, 7.0, 1e-12);
  EXPECT_NEAR(p.z, cam.cam_height, 1e-12);
}

TEST(Lift, NonPositiveDepthThrows) {
  EXPECT_THROW(lift(1.0, 1.0, 0.0, hand_camera()), NonPositiveDepth);
  EXPECT_THROW(lift(1.0, 1.0, -2.0, hand_camera()), NonPositiveDepth);
}

TEST(Lift, RoundTripRandomPointsAndCameras) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const CameraModel cam = random_camera(rng);
    const double u = rng.uniform(-50.0, 500.0);
    const double v = rng.uniform(-50.0, 400.0);
    const double d = rng.uniform(0.1, 150.0);
    const Point3D p = lift(u, v, d, cam);
    const Pixel px = project(p, cam);
    EXPECT_LE(std::abs(px.u - u), 1e-9 * std::max(1.0, std::abs(u)));
    EXPECT_LE(std::abs(px.v - v), 1e-9 * std::max(1.0, std::abs(v)));
    EXPECT_NEAR(optical_depth(p, cam), d, 1e-9 * d);

    const Point3D q{rng.uniform(-20.0, 20.0), rng.uniform(1.0, 100.0), rng.uniform(-2.0, 2.0)};
    if (optical_depth(q, cam) <= 0.0) continue;
    const Pixel qp = project(q, cam);
    const Point3D back = lift(qp.u, qp.v, optical_depth(q, cam), cam);
    EXPECT_NEAR(back.x, q.x, 1e-9 * std::max(1.0, std::abs(q.x)));
    EXPECT_NEAR(back.y, q.y, 1e-9 * q.y);
    EXPECT_NEAR(back.z, q.z, 1e-9 * std::max(1.0, q.y));
  }
}

TEST(CameraModel, ValidateRejectsBadValues) {
  CameraModel c;
  c.fx = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.cam_height = -1.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.pitch = 1.6;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(DepthToBin, Examples) {
  const DepthBinSpec full_scale{4.0, 104.0, 100, DepthBinMode::uniform};
  EXPECT_EQ(depth_to_bin(4.0, full_scale), 0);
  EXPECT_EQ(depth_to_bin(54.0, full_scale), 50);
  EXPECT_EQ(depth_to_bin(114.0, full_scale), 99);
  EXPECT_EQ(depth_to_bin(1.0, full_scale), 0);
  EXPECT_EQ(depth_to_bin(104.0, full_scale), 99);
}

TEST(DepthToBin, AgreesWithEdgeIntervals) {
  for (DepthBinMode mode : {DepthBinMode::uniform, DepthBinMode::log_spaced}) {
    const DepthBinSpec spec{2.0, 66.0, 24, mode};
    const std::vector<double> e = spec.edges();
    for (int i = 0; i < spec.bins; ++i) {
      EXPECT_EQ(depth_to_bin(e[static_cast<std::size_t>(i)], spec), i);
      EXPECT_EQ(depth_to_bin(std::nextafter(e[static_cast<std::size_t>(i) + 1], 0.0), spec), i);
    }
    Rng rng(3);
    for (int k = 0; k < 2000; ++k) {
      const double d = rng.uniform(2.0, 66.0);
      const int b = depth_to_bin(d, spec);
      EXPECT_LE(e[static_cast<std::size_t>(b)], d);
      EXPECT_LT(d, e[static_cast<std::size_t>(b) + 1]);
    }
  }
}

TEST(DepthToBin, MonotoneInDepth) {
  for (DepthBinMode mode : {DepthBinMode::uniform, DepthBinMode::log_spaced}) {
    const DepthBinSpec spec{4.0, 104.0, 37, mode};
    int prev = 0;
    for (double d = 0.0; d < 120.0; d += 0.013) {
      const int b = depth_to_bin(d, spec);
      EXPECT_GE(b, prev);
      prev = b;
    }
  }
}

TEST(DepthBinSpec, EdgesAndCentersAreOrdered) {
  for (DepthBinMode mode : {DepthBinMode::uniform, DepthBinMode::log_spaced}) {
    const DepthBinSpec spec{2.0, 66.0, 24, mode};
    const auto e = spec.edges();
    const auto c = spec.centers();
    ASSERT_EQ(e.size(), 25u);
    EXPECT_EQ(e.front(), 2.0);
    EXPECT_EQ(e.back(), 66.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
      EXPECT_LT(e[i], e[i + 1]);
      EXPECT_GT(c[i], e[i]);
      EXPECT_LT(c[i], e[i + 1]);
      EXPECT_EQ(depth_to_bin(c[i], spec), static_cast<int>(i));
      EXPECT_NEAR(spec.continuous_index(c[i]), static_cast<double>(i), 1e-9);
    }
  }
  EXPECT_THROW((DepthBinSpec{0.0, 10.0, 4}.validate()), InvalidArgument);
  EXPECT_THROW((DepthBinSpec{5.0, 5.0, 4}.validate()), InvalidArgument);
  EXPECT_THROW((DepthBinSpec{1.0, 5.0, 1}.validate()), InvalidArgument);
}

TEST(BevCellOf, Examples) {
  const BEVGridSpec def;
  EXPECT_EQ(bev_cell_of({def.x_min, def.y_min, 0.0}, def), (BevCell{0, 0}));

  const BEVGridSpec g{-10.0, 10.0, 0.0, 100.0, 20, 50};
  EXPECT_EQ(bev_cell_of({0.5, 3.0, 0.0}, g), (BevCell{1, 10}));
  EXPECT_FALSE(bev_cell_of({10.0, 3.0, 0.0}, g).has_value());
  EXPECT_FALSE(bev_cell_of({0.0, 100.0, 0.0}, g).has_value());
  EXPECT_FALSE(bev_cell_of({-10.5, 3.0, 0.0}, g).has_value());
}

TEST(BevCellOf, PartitionIsHalfOpenLowInclusive) {
  const BEVGridSpec g;
  for (int c = 0; c < g.cols; ++c) {
    for (int r = 0; r < g.rows; ++r) {
      const double x0 = g.col_left(c);
      const double y0 = g.row_front(r);
      EXPECT_EQ(bev_cell_of({x0, y0, 0.0}, g), (BevCell{r, c}));
      if (c > 0) EXPECT_EQ(bev_cell_of({std::nextafter(x0, -1e9), y0, 0.0}, g)->col, c - 1);
      if (r > 0) EXPECT_EQ(bev_cell_of({x0, std::nextafter(y0, -1e9), 0.0}, g)->row, r - 1);
    }
  }
  Rng rng(5);
  for (int k = 0; k < 5000; ++k) {
    const Point3D p{rng.uniform(g.x_min, g.x_max), rng.uniform(g.y_min, g.y_max), 0.0};
    const auto cell = bev_cell_of(p, g);
    ASSERT_TRUE(cell.has_value());
    EXPECT_LE(g.col_left(cell->col), p.x);
    EXPECT_LT(p.x, cell->col + 1 < g.cols ? g.col_left(cell->col + 1) : g.x_max);
    EXPECT_LE(g.row_front(cell->row), p.y);
    EXPECT_LT(p.y, cell->row + 1 < g.rows ? g.row_front(cell->row + 1) : g.y_max);
  }
}

TEST(Geometry, GroundPointSurvivesProjectLiftDrop) {
  Rng rng(9);
  const BEVGridSpec g;
  for (int k = 0; k < 1000; ++k) {
    const CameraModel cam = random_camera(rng);
    const Point3D p{rng.uniform(g.x_min, g.x_max), rng.uniform(g.y_min, g.y_max), 0.0};
    const double d = optical_depth(p, cam);
    if (d <= 0.0) continue;
    const Pixel px = project(p, cam);
    const Point3D back = lift(px.u, px.v, d, cam);
    const auto a = bev_cell_of(p, g);
    const auto b = bev_cell_of({back.x, back.y, 0.0}, g);
    ASSERT_TRUE(a && b);
    // Rounding can only matter for points within a few ulps of a boundary.
    if (!(*a == *b)) {
      EXPECT_NEAR(back.x, p.x, 1e-9);
      EXPECT_NEAR(back.y, p.y, 1e-9);
    }
  }
}
