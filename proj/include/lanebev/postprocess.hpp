#pragma once

// Turns per-cell lane predictions into instance-level 3D polylines.

#include <filesystem>
#include <vector>

#include "lanebev/geometry.hpp"
#include "lanebev/network.hpp"
#include "lanebev/scenegen.hpp"

namespace lanebev {

struct LaneTarget;

struct ClusterParams {
  double sigma = 0.5;
  double bandwidth = 1.0;
  int min_cells = 3;

  void validate() const;
};

/// Cluster id per cell (row-major), -1 for unassigned cells.
struct ClusterAssignment {
  int rows = 0;
  int cols = 0;
  int clusters = 0;
  std::vector<int> label;

  int at(int row, int col) const { return label[static_cast<std::size_t>(row) * cols + col]; }
};

struct LaneInstance {
  Polyline points;  ///< ascending y
  double score = 0.0;
};

/// Greedy running-mean clustering of confident cells, visited in descending
/// confidence with (row, col) as tie-break.
ClusterAssignment cluster(const LanePrediction& pred, const ClusterParams& params);

/// One point per grid row per cluster; instances with fewer than
/// `min_cells` points are dropped.
std::vector<LaneInstance> reconstruct(const ClusterAssignment& assignment,
                                      const LanePrediction& pred, const BEVGridSpec& grid,
                                      int min_cells = 3);

/// Convenience: cluster then reconstruct.
std::vector<LaneInstance> extract_lanes(const LanePrediction& pred, const BEVGridSpec& grid,
                                        const ClusterParams& params);

/// Prediction that a perfect network would emit for `target`: confidence and
/// offsets copied, embeddings one-hot in the instance id (scaled by
/// `magnitude` so distinct lanes sit well outside the clustering bandwidth).
LanePrediction prediction_from_target(const LaneTarget& target, int embedding_dims,
                                      double magnitude = 10.0);

/// Lane dump: one text record per sample.
///   lanebev-lanes 1
///   sample <index> <lane count>
///   lane <point count> <score>
///   <x> <y> <z>
///   ...
void write_lane_dump(const std::vector<std::vector<LaneInstance>>& per_sample,
                     const std::filesystem::path& path);
std::vector<std::vector<LaneInstance>> read_lane_dump(const std::filesystem::path& path);

}  // namespace lanebev
