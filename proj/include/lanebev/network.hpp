#pragma once

// The learnable model: a shared convolutional trunk that splits into an
// FV-feature branch and a depth branch (each behind its own
// intrinsics-conditioned SE gate), height-reducing PFE / DAT modules, the
// broadcast product that builds the BEV feature, and the lane head.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lanebev/geometry.hpp"
#include "lanebev/nn.hpp"
#include "lanebev/scenegen.hpp"
#include "lanebev/tensor.hpp"

namespace lanebev {

struct ModelDims {
  int image_height = 128;
  int image_width = 256;
  int channels = 32;    ///< C
  int depth_bins = 24;  ///< D
  int embedding = 4;    ///< E
  int downsample = 4;
  int head_channels = 32;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

enum class FusionKind {
  prime,  ///< PFE + DAT, then the broadcast product
  naive,  ///< full-height product collapsed by a learned convolution
};

struct ModelConfig {
  ModelDims dims;
  BEVGridSpec grid;
  DepthBinSpec depth;
  FusionKind fusion = FusionKind::prime;
  /// When false the DAT gate is held at 1 (no FV guidance on depth).
  bool dat_gate = true;

  void validate() const;
  int feature_height() const { return dims.image_height / dims.downsample; }
  int feature_width() const { return dims.image_width / dims.downsample; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Per-pixel distribution over depth bins, stored (D, H, W).
struct DepthDistribution {
  Tensor probs;
  double at(int h, int w, int d) const { return probs.at(d, h, w); }
};

/// Fused BEV feature, logically indexed (d, w, c); stored planar as (C, D, W).
struct BEVFeature {
  Tensor values;
  double at(int d, int w, int c) const { return values.at(c, d, w); }
};

struct LanePrediction {
  Tensor confidence;  ///< (rows, cols) in (0, 1)
  Tensor embedding;   ///< (E, rows, cols)
  Tensor x_offset;    ///< (rows, cols) in (0, 1)
  Tensor z_offset;    ///< (rows, cols), meters
};

/// Camera intrinsics normalized by the image size: fx/W, fy/H, cx/W, cy/H.
std::array<double, 4> normalized_intrinsics(const CameraModel& cam, int image_height,
                                            int image_width);

/// Planar (3, H, W) image tensor from an interleaved sample image.
Tensor image_tensor(const Sample& sample);

// ---------------------------------------------------------------------------
// Stateless operators.

DepthDistribution depth_head(const Tensor& logits);

/// Broadcast Hadamard product B(d, w, c) = X(d, w) * F(w, c).
/// `prime_depth` is (D, W) and `prime_fv` is (C, W).
BEVFeature fuse(const Tensor& prime_depth, const Tensor& prime_fv);
void fuse_backward(const Tensor& prime_depth, const Tensor& prime_fv, const Tensor& dbev,
                   Tensor& dprime_depth, Tensor& dprime_fv);

/// max over rows of gate(h, w) * probs(d, h, w). `gate` is (1, H, W) and
/// `probs` is (D, H, W); the result is (D, W).
Tensor gated_column_max(const Tensor& gate, const Tensor& probs, std::vector<int>& argmax);
void gated_column_max_backward(const Tensor& gate, const Tensor& probs,
                               const std::vector<int>& argmax, const Tensor& dout,
                               Tensor& dgate, Tensor& dprobs);

// ---------------------------------------------------------------------------
// Parameterized blocks.

/// Channel gating whose weights come from an MLP over the pooled feature and
/// the normalized camera intrinsics.
class SEGate {
 public:
  struct Cache {
    std::vector<double> input;   ///< pooled feature followed by intrinsics
    std::vector<double> hidden;  ///< post-ReLU
    std::vector<double> scale;   ///< per-channel sigmoid weights
  };

  SEGate() = default;
  SEGate(ParameterSet& params, const std::string& name, int channels, int hidden);

  void init(ParameterSet& params, Rng& rng) const;
  Tensor forward(const ParameterSet& params, const Tensor& x, std::span<const double> intrinsics,
                 Cache& cache) const;
  Tensor backward(const ParameterSet& params, const Tensor& x, const Cache& cache,
                  const Tensor& dy, Gradients& grads) const;

  const Linear& fc1() const { return fc1_; }
  const Linear& fc2() const { return fc2_; }

 private:
  int channels_ = 0;
  Linear fc1_;
  Linear fc2_;
};

/// Fixed bilinear map from the (depth bin, feature column) plane to the
/// metric BEV grid, derived from the camera and the ground plane.
class BevResampler {
 public:
  struct Tap {
    int src = 0;  ///< d * W + w
    double weight = 0.0;
  };

  BevResampler() = default;
  BevResampler(const CameraModel& cam, const DepthBinSpec& depth, const BEVGridSpec& grid,
               int feature_width, int downsample);

  /// (C, D, W) -> (C, rows, cols)
  Tensor forward(const Tensor& bev) const;
  Tensor backward(const Tensor& dout) const;

  /// Identity-like map used when the grid equals the feature plane.
  static BevResampler identity(int depth_bins, int width);

  const std::vector<std::vector<Tap>>& taps() const { return taps_; }

 private:
  int depth_bins_ = 0;
  int width_ = 0;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::vector<Tap>> taps_;  // per output cell, row-major
};

/// Everything a backward pass needs from the forward pass.
struct ForwardPass {
  /// Set by forward_depth: only the trunk and depth branch were evaluated.
  bool depth_only = false;
  std::array<double, 4> intrinsics{};
  Tensor image;

  std::vector<Conv2d::Cache> trunk_cache;
  std::vector<Tensor> trunk_out;  // post-ReLU outputs of the strided stages
  Conv2d::Cache res1_cache, res2_cache;
  Tensor res1_out, trunk_feature;

  SEGate::Cache fv_se_cache, depth_se_cache;
  Tensor fv_gated, depth_gated;
  Conv2d::Cache fv_conv_cache, depth_conv_cache;
  Tensor fv_feature;    ///< FVFeature (C, H, W), post-ReLU
  Tensor depth_logits;  ///< DepthFeature (D, H, W)
  DepthDistribution depth;

  // prime fusion
  std::vector<int> pfe_argmax;
  Tensor pfe_pooled;  // (C, W)
  Conv2d::Cache pfe1_cache, pfe2_cache;
  Tensor pfe_hidden;
  Tensor prime_fv;  ///< (C, W)
  Conv2d::Cache dat_cache;
  Tensor dat_gate;  ///< (1, H, W)
  std::vector<int> dat_argmax;
  Tensor prime_depth;  ///< (D, W)

  // naive fusion
  std::vector<Tensor> naive_columns;  // per depth bin, (C*H, W)

  BEVFeature bev;
  BevResampler resampler;
  Tensor head_input;
  Conv2d::Cache neck1_cache, neck2_cache;
  Tensor neck1_out, neck2_out;
  Conv2d::Cache conf_cache, emb_cache, xoff_cache, zoff_cache;
  LanePrediction prediction;
};

/// Loss gradients w.r.t. network outputs; empty tensors mean zero.
struct OutputGradients {
  Tensor depth_probs;
  Tensor confidence;
  Tensor embedding;
  Tensor x_offset;
  Tensor z_offset;
};

class Network {
 public:
  explicit Network(ModelConfig config, std::uint64_t seed = 1);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  ForwardPass forward(const Tensor& image, const CameraModel& cam) const;
  ForwardPass forward(const Sample& sample) const;
  /// Trunk and depth branch only, for depth pretraining.
  ForwardPass forward_depth(const Tensor& image, const CameraModel& cam) const;
  /// Accumulates parameter gradients into `grads`.
  void backward(const ForwardPass& pass, const OutputGradients& dout, Gradients& grads) const;

  // Stage-level entry points.
  std::pair<Tensor, Tensor> backbone(const Tensor& image, std::span<const double> intrinsics) const;
  Tensor pfe(const Tensor& fv_feature) const;
  Tensor dat(const Tensor& depth_probs, const Tensor& fv_feature) const;
  LanePrediction lane_head(const BEVFeature& bev, const BevResampler& resampler) const;
  BevResampler resampler_for(const CameraModel& cam) const;

  const SEGate& fv_se() const { return fv_se_; }
  const SEGate& depth_se() const { return depth_se_; }
  const Conv2d& pfe_conv(int i) const { return i == 0 ? pfe1_ : pfe2_; }

  /// Names of the shared trunk and both branches (the whole D&F stage).
  bool is_backbone_parameter(int id) const;
  /// Names of the depth branch only (its SE gate and logits convolution).
  bool is_depth_branch_parameter(int id) const;

 private:
  void build();
  void initialize(std::uint64_t seed);
  Tensor run_trunk(const Tensor& image, ForwardPass& pass) const;
  void run_fusion(ForwardPass& pass) const;
  void run_head(ForwardPass& pass) const;
  void backward_head_and_fusion(const ForwardPass& pass, const OutputGradients& dout,
                                Gradients& grads, Tensor& dfv_feature, Tensor& dprobs) const;

  ModelConfig config_;
  ParameterSet params_;
  std::vector<Conv2d> trunk_;
  Conv2d res1_, res2_;
  SEGate fv_se_, depth_se_;
  Conv2d fv_conv_, depth_conv_;
  Conv2d pfe1_, pfe2_, dat_conv_;
  int naive_weight_ = -1;
  int naive_bias_ = -1;
  Conv2d neck1_, neck2_, conf_head_, emb_head_, xoff_head_, zoff_head_;
};

/// Learnable scalar count of a model built from `config`.
std::size_t count_parameters(const ModelConfig& config);

}  // namespace lanebev
