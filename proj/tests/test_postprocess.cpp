#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "lanebev/errors.hpp"
#include "lanebev/losses.hpp"
#include "lanebev/metrics.hpp"
#include "lanebev/postprocess.hpp"
#include "test_util.hpp"

namespace lanebev {
namespace {

LanePrediction blank_prediction(int rows, int cols, int e) {
  LanePrediction p;
  p.confidence = Tensor({rows, cols});
  p.embedding = Tensor({e, rows, cols});
  p.x_offset = Tensor({rows, cols});
  p.z_offset = Tensor({rows, cols});
  return p;
}

BEVGridSpec unit_grid(int rows, int cols) {
  BEVGridSpec g;
  g.x_min = -cols / 2.0;
  g.x_max = cols / 2.0;
  g.y_min = 0.0;
  g.y_max = rows;
  g.rows = rows;
  g.cols = cols;
  return g;
}

/// Adjusted Rand index between two labelings of the same cells.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ca;
  std::map<int, double> cb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ca[a[i]] += 1;
    cb[b[i]] += 1;
  }
  auto c2 = [](double n) { return n * (n - 1) / 2; };
  double sum_joint = 0, sum_a = 0, sum_b = 0;
  for (const auto& kv : joint) sum_joint += c2(kv.second);
  for (const auto& kv : ca) sum_a += c2(kv.second);
  for (const auto& kv : cb) sum_b += c2(kv.second);
  const double expected = sum_a * sum_b / c2(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_joint - expected) / (max_index - expected);
}

TEST(Cluster, BelowThresholdGivesNothing) {
  LanePrediction p = blank_prediction(4, 4, 2);
  for (double& v : p.confidence.values()) v = 0.49;
  const ClusterAssignment a = cluster(p, ClusterParams{});
  EXPECT_EQ(a.clusters, 0);
  for (int l : a.label) EXPECT_EQ(l, -1);
}

TEST(Cluster, SmallGroupDropped) {
  LanePrediction p = blank_prediction(4, 4, 2);
  p.confidence.at(0, 0) = p.confidence.at(1, 0) = 0.9;  // min_cells - 1 cells
  EXPECT_EQ(cluster(p, ClusterParams{}).clusters, 0);
}

TEST(Cluster, TwoSeparatedGroups) {
  LanePrediction p = blank_prediction(4, 4, 2);
  for (int r = 0; r < 4; ++r) {
    p.confidence.at(r, 0) = 0.9;
    p.confidence.at(r, 3) = 0.8;
    p.embedding.at(0, r, 0) = 0.1 * r;
    p.embedding.at(1, r, 3) = 5.0 - 0.1 * r;
  }
  const ClusterAssignment a = cluster(p, ClusterParams{});
  ASSERT_EQ(a.clusters, 2);
  for (int r = 0; r < 4; ++r) {
    EXPECT_EQ(a.at(r, 0), 0);
    EXPECT_EQ(a.at(r, 3), 1);
    EXPECT_EQ(a.at(r, 1), -1);
  }
}

TEST(Cluster, DeterministicUnderTies) {
  Rng rng(6);
  LanePrediction p = blank_prediction(6, 6, 3);
  for (double& v : p.confidence.values()) v = rng.uniform() < 0.5 ? 0.8 : 0.2;
  for (double& v : p.embedding.values()) v = rng.uniform(-2.0, 2.0);
  const ClusterAssignment a = cluster(p, ClusterParams{});
  const ClusterAssignment b = cluster(p, ClusterParams{});
  EXPECT_EQ(a.label, b.label);
  EXPECT_EQ(a.clusters, b.clusters);
}

TEST(Cluster, RecoversWellSeparatedBlobs) {
  Rng rng(12);
  const int rows = 16, cols = 16, lanes = 4;
  LanePrediction p = blank_prediction(rows, cols, 2);
  std::vector<int> truth(rows * cols, -1);
  for (int r = 0; r < rows; ++r) {
    for (int l = 0; l < lanes; ++l) {
      const int c = 1 + 4 * l;
      p.confidence.at(r, c) = rng.uniform(0.6, 1.0);
      p.embedding.at(0, r, c) = 4.0 * std::cos(l * 1.5) + rng.uniform(-0.3, 0.3);
      p.embedding.at(1, r, c) = 4.0 * std::sin(l * 1.5) + rng.uniform(-0.3, 0.3);
      truth[r * cols + c] = l;
    }
  }
  const ClusterAssignment a = cluster(p, ClusterParams{});
  EXPECT_EQ(a.clusters, lanes);
  EXPECT_NEAR(adjusted_rand_index(a.label, truth), 1.0, 1e-12);
}

TEST(ClusterParams, Validation) {
  EXPECT_NO_THROW(ClusterParams{}.validate());
  EXPECT_THROW((ClusterParams{1.0, 1.5, 3}.validate()), ConfigError);
  EXPECT_THROW((ClusterParams{0.5, 0.0, 3}.validate()), ConfigError);
  EXPECT_THROW((ClusterParams{0.5, 1.5, 1}.validate()), ConfigError);
}

TEST(Reconstruct, CellBoundaryArithmetic) {
  BEVGridSpec g = unit_grid(4, 20);  // x in [-10, 10], cell width 1
  LanePrediction p = blank_prediction(4, 20, 1);
  ClusterAssignment a{4, 20, 1, std::vector<int>(80, -1)};
  for (int r = 0; r < 3; ++r) {
    a.label[r * 20 + 10] = 0;
    p.confidence.at(r, 10) = 0.9;
    p.x_offset.at(r, 10) = r == 0 ? 0.5 : 0.0;
    p.z_offset.at(r, 10) = 0.25 * r;
  }
  const auto lanes = reconstruct(a, p, g, 3);
  ASSERT_EQ(lanes.size(), 1u);
  ASSERT_EQ(lanes[0].points.size(), 3u);
  EXPECT_DOUBLE_EQ(lanes[0].points[0].x, 0.5);
  EXPECT_DOUBLE_EQ(lanes[0].points[1].x, 0.0);  // left boundary of col 10
  EXPECT_DOUBLE_EQ(lanes[0].points[2].y, 2.5);
  EXPECT_DOUBLE_EQ(lanes[0].points[2].z, 0.5);
  EXPECT_NEAR(lanes[0].score, 0.9, 1e-15);
}

TEST(Reconstruct, HighestConfidenceCellWinsRow) {
  BEVGridSpec g = unit_grid(3, 8);
  LanePrediction p = blank_prediction(3, 8, 1);
  ClusterAssignment a{3, 8, 1, std::vector<int>(24, -1)};
  for (int r = 0; r < 3; ++r) {
    a.label[r * 8 + 2] = 0;
    p.confidence.at(r, 2) = 0.9;
  }
  a.label[1 * 8 + 5] = 0;
  p.confidence.at(1, 2) = 0.7;
  p.confidence.at(1, 5) = 0.9;
  const auto lanes = reconstruct(a, p, g, 3);
  ASSERT_EQ(lanes.size(), 1u);
  ASSERT_EQ(lanes[0].points.size(), 3u);
  EXPECT_DOUBLE_EQ(lanes[0].points[1].x, 1.0);  // col 5 left edge
  for (std::size_t i = 1; i < lanes[0].points.size(); ++i) {
    EXPECT_LT(lanes[0].points[i - 1].y, lanes[0].points[i].y);
  }
}

TEST(Reconstruct, ShortInstanceDropped) {
  BEVGridSpec g = unit_grid(3, 4);
  LanePrediction p = blank_prediction(3, 4, 1);
  // Three cells but only two rows: two points after the one-per-row rule.
  ClusterAssignment a{3, 4, 1, std::vector<int>(12, -1)};
  a.label[0] = a.label[1] = a.label[4] = 0;
  EXPECT_TRUE(reconstruct(a, p, g, 3).empty());
  EXPECT_EQ(reconstruct(a, p, g, 2).size(), 1u);
}

TEST(Reconstruct, GridMismatchThrows) {
  ClusterAssignment a{2, 2, 0, std::vector<int>(4, -1)};
  EXPECT_THROW(reconstruct(a, blank_prediction(2, 2, 1), unit_grid(3, 2), 3), ShapeMismatch);
}

TEST(Reconstruct, BevCellRoundTrip) {
  // A point reconstructed from (row, col, offset) lies in that same cell.
  const BEVGridSpec g;
  Rng rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    const int r = rng.uniform_int(0, g.rows - 1);
    const int c = rng.uniform_int(0, g.cols - 1);
    LanePrediction p = blank_prediction(g.rows, g.cols, 1);
    ClusterAssignment a{g.rows, g.cols, 1, std::vector<int>(g.rows * g.cols, -1)};
    for (int k = 0; k < 3; ++k) {
      const int rr = (r + k) % g.rows;
      a.label[rr * g.cols + c] = 0;
      p.confidence.at(rr, c) = 0.9;
      p.x_offset.at(rr, c) = rng.uniform(0.0, 0.999);
    }
    const auto lanes = reconstruct(a, p, g, 3);
    ASSERT_EQ(lanes.size(), 1u);
    for (const Point3D& pt : lanes[0].points) {
      const auto cell = bev_cell_of(pt, g);
      ASSERT_TRUE(cell.has_value());
      EXPECT_EQ(cell->col, c);
    }
  }
}

TEST(GroundTruthShim, RoundTripsWithinYQuantization) {
  DatasetGenConfig gen;
  gen.base.image_height = 64;
  gen.base.image_width = 128;
  gen.base.cam.fx = gen.base.cam.fy = 80.0;
  gen.base.cam.cx = 64.0;
  gen.base.cam.cy = 32.0;
  const std::vector<Sample> samples = generate_split(gen, kTrainSplit, 12);
  const BEVGridSpec& grid = gen.base.grid;
  const ClusterParams params;
  for (const Sample& s : samples) {
    const LaneTarget t = make_lane_target(s, grid);
    const LanePrediction p = prediction_from_target(t, std::max(t.lane_count, 1));
    const auto lanes = extract_lanes(p, grid, params);
    ASSERT_EQ(static_cast<int>(lanes.size()), t.lane_count);
    for (const LaneInstance& lane : lanes) {
      // Every reconstructed point lies on some ground-truth lane at the same y.
      for (const Point3D& pt : lane.points) {
        double best = 1e9;
        for (const Polyline& gt : s.lanes) {
          for (const Point3D& q : gt) {
            if (std::abs(q.y - pt.y) <= grid.cell_length() / 2) {
              best = std::min(best, std::hypot(q.x - pt.x, q.z - pt.z));
            }
          }
        }
        // The nearest vertex within half a cell differs by at most the lane's
        // drift over that span.
        EXPECT_LT(best, 0.2);
      }
    }
    const MetricsReport r = evaluate(polylines(lanes), s.lanes, EvalProtocol::desk_default());
    EXPECT_EQ(r.f1, 1.0);
    EXPECT_LT(r.x_err_near, 1e-9);
    EXPECT_LT(r.z_err_far, 1e-9);
  }
}

TEST(GroundTruthShim, RejectsTooFewDims) {
  LaneTarget t;
  t.rows = t.cols = 1;
  t.confidence = t.x_offset = t.z_offset = Tensor({1, 1});
  t.instance = {0};
  t.lane_count = 3;
  EXPECT_THROW(prediction_from_target(t, 2), InvalidArgument);
}

class LaneDumpTest : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "lanebev_dump_test";
  void SetUp() override { std::filesystem::create_directories(dir); }
  void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(LaneDumpTest, RoundTripIsExact) {
  Rng rng(44);
  std::vector<std::vector<LaneInstance>> data(3);
  for (auto& sample : data) {
    const int n = rng.uniform_int(0, 3);
    for (int l = 0; l < n; ++l) {
      LaneInstance lane;
      lane.score = rng.uniform();
      for (int k = 0; k < 5; ++k) {
        lane.points.push_back({rng.uniform(-10, 10), 2.0 + k * 3.1, rng.uniform(-1, 1) * 1e-3});
      }
      sample.push_back(lane);
    }
  }
  write_lane_dump(data, dir / "lanes.txt");
  const auto back = read_lane_dump(dir / "lanes.txt");
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t s = 0; s < data.size(); ++s) {
    ASSERT_EQ(back[s].size(), data[s].size());
    for (std::size_t l = 0; l < data[s].size(); ++l) {
      EXPECT_EQ(back[s][l].score, data[s][l].score);
      EXPECT_EQ(back[s][l].points, data[s][l].points);
    }
  }
}

TEST_F(LaneDumpTest, BadInputs) {
  EXPECT_THROW(read_lane_dump(dir / "missing.txt"), IoError);
  std::ofstream(dir / "bad.txt") << "something else\n";
  EXPECT_THROW(read_lane_dump(dir / "bad.txt"), FormatError);
  std::ofstream(dir / "v2.txt") << "lanebev-lanes 2\n";
  EXPECT_THROW(read_lane_dump(dir / "v2.txt"), FormatError);
  std::ofstream(dir / "short.txt") << "lanebev-lanes 1\nsample 0 1\nlane 2 0.5\n1 2 3\n";
  EXPECT_THROW(read_lane_dump(dir / "short.txt"), FormatError);
}

}  // namespace
}  // namespace lanebev
