#pragma once

// Training objectives and the targets they consume. Every loss returns its
// value together with its gradient w.r.t. the prediction it scores.

#include <array>
#include <string>
#include <vector>

#include "lanebev/geometry.hpp"
#include "lanebev/network.hpp"
#include "lanebev/scenegen.hpp"
#include "lanebev/tensor.hpp"

namespace lanebev {

struct LossWeights {
  double depth = 1.0;
  double confidence = 5.0;
  double instance = 1.0;
  double offset_x = 2.0;
  double offset_z = 2.0;

  void validate() const;
  std::array<double, 5> as_array() const { return {depth, confidence, instance, offset_x, offset_z}; }
};

enum class OffsetLossKind { l1, l2 };

/// Depth-bin distribution at feature resolution, (D, H, W). A cell whose
/// column is all zero is unsupervised.
struct DepthTarget {
  Tensor dist;

  int bins() const { return dist.dim(0); }
  int height() const { return dist.dim(1); }
  int width() const { return dist.dim(2); }
  bool supervised(int h, int w) const;
};

/// One-hot target from per-cell labels (row-major, -1 = unsupervised).
DepthTarget one_hot_depth_target(int height, int width, int bins, const std::vector<int>& labels);

/// Per-cell supervision for the lane head.
struct LaneTarget {
  int rows = 0;
  int cols = 0;
  Tensor confidence;          ///< (rows, cols), 1 on lane cells
  std::vector<int> instance;  ///< rows * cols, 0 = background, lanes from 1
  Tensor x_offset;            ///< (rows, cols) in [0, 1)
  Tensor z_offset;            ///< (rows, cols), meters
  int lane_count = 0;
};

/// Average of the pixel one-hot labels over each downsample x downsample
/// block, i.e. the fraction of supervised pixels in each bin. Blocks with
/// fewer than half their pixels supervised are ignored.
DepthTarget pool_depth_target(const Sample& sample, int downsample);

/// Rasterizes the sample's lanes into the grid: one cell per lane per row,
/// at the lane's position on the row's center line.
LaneTarget make_lane_target(const Sample& sample, const BEVGridSpec& grid);

struct LossTerm {
  double value = 0.0;
  Tensor grad;
};

struct DepthLoss : LossTerm {
  bool no_supervision = false;  ///< every cell was ignored
};

/// Mean over supervised cells of sum_d |t_d - p_d| t_d; 1 - p_true for one-hot t.
DepthLoss depth_loss(const DepthDistribution& pred, const DepthTarget& truth);

inline constexpr double kConfidenceClamp = 1e-7;

/// Mean binary cross-entropy with predictions clamped to [eps, 1 - eps].
LossTerm conf_loss(const Tensor& pred, const Tensor& truth);

struct InstanceLossParams {
  double pull_margin = 0.1;
  double push_epsilon = 1e-6;
};

struct InstanceLoss : LossTerm {
  double variance = 0.0;
  double distance = 0.0;
  int lanes = 0;
};

/// Variance term plus the reciprocal of the summed pairwise lane-mean
/// distance. Throws NoForeground when no cell carries an instance id.
InstanceLoss instance_loss(const Tensor& embedding, const std::vector<int>& instance,
                           const InstanceLossParams& params = {});

struct OffsetLosses {
  LossTerm x;
  LossTerm z;
  int masked_cells = 0;
};

/// Masked offset errors on cells whose ground-truth confidence exceeds sigma,
/// averaged over the mask.
OffsetLosses offset_losses(const Tensor& pred_x, const Tensor& pred_z, const LaneTarget& target,
                           double sigma, OffsetLossKind kind = OffsetLossKind::l1);

struct LossBreakdown {
  std::array<double, 5> parts{};     ///< unweighted: depth, conf, inst, offset x, offset z
  std::array<double, 5> weighted{};  ///< parts scaled by their weights
  double total = 0.0;
};

inline constexpr std::array<const char*, 5> kLossNames = {"depth", "confidence", "instance",
                                                          "offset_x", "offset_z"};

/// Weighted sum; throws NonFiniteLoss when a part is NaN or infinite.
LossBreakdown total_loss(const std::array<double, 5>& parts, const LossWeights& weights);

struct ObjectiveSettings {
  LossWeights weights;
  double sigma = 0.5;
  OffsetLossKind offset_kind = OffsetLossKind::l1;
  InstanceLossParams instance;
};

/// Evaluates every term on one forward pass and returns the gradients the
/// network's backward pass expects, already scaled by the loss weights.
LossBreakdown evaluate_objective(const ForwardPass& pass, const DepthTarget& depth,
                                 const LaneTarget& lanes, const ObjectiveSettings& settings,
                                 OutputGradients& grads);

}  // namespace lanebev
