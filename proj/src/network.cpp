#include "lanebev/network.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "lanebev/errors.hpp"

namespace lanebev {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

constexpr double kConfidencePriorBias = -2.0;

int stage_count(int downsample) {
  int n = 0;
  while ((1 << n) < downsample) ++n;
  return n;
}

int stage_channels(int stage, int stages, int channels) {
  return stage == 0 && stages > 1 ? std::max(channels / 2, 4) : channels;
}

int se_hidden(int channels) { return std::max(channels / 4, 4); }

// (C, W) <-> (C, 1, W) views used around the 1-D refinement convolutions.
Tensor as_row_image(const Tensor& cw) {
  Tensor t({cw.dim(0), 1, cw.dim(1)});
  std::copy(cw.values().begin(), cw.values().end(), t.data());
  return t;
}

Tensor as_plane(const Tensor& c1w) {
  Tensor t({c1w.dim(0), c1w.dim(2)});
  std::copy(c1w.values().begin(), c1w.values().end(), t.data());
  return t;
}

Tensor coordinate_channels(int rows, int cols) {
  Tensor t({2, rows, cols});
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      t.at(0, r, c) = 2.0 * (c + 0.5) / cols - 1.0;
      t.at(1, r, c) = 2.0 * (r + 0.5) / rows - 1.0;
    }
  }
  return t;
}

Tensor drop_channels(const Tensor& x, int keep) {
  Tensor t({keep, x.dim(1), x.dim(2)});
  std::copy(x.data(), x.data() + t.size(), t.data());
  return t;
}

Tensor squeeze_channel(const Tensor& x) {
  Tensor t({x.dim(1), x.dim(2)});
  std::copy(x.values().begin(), x.values().end(), t.data());
  return t;
}

Tensor unsqueeze_channel(const Tensor& x) {
  Tensor t({1, x.dim(0), x.dim(1)});
  std::copy(x.values().begin(), x.values().end(), t.data());
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  const ModelDims& d = dims;
  if (d.image_height < 1 || d.image_width < 1 || d.channels < 1 || d.depth_bins < 2 ||
      d.embedding < 1 || d.head_channels < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d.downsample < 1 || (d.downsample & (d.downsample - 1)) != 0) {
    throw ConfigError("downsample must be a power of two");
  }
  if (d.image_height % d.downsample != 0 || d.image_width % d.downsample != 0) {
    throw ConfigError("image size must be divisible by the downsample factor");
  }
  if (depth.bins != d.depth_bins) {
    throw ConfigError("depth bin spec has " + std::to_string(depth.bins) + " bins, model expects " +
                      std::to_string(d.depth_bins));
  }
  grid.validate();
  depth.validate();
}

std::array<double, 4> normalized_intrinsics(const CameraModel& cam, int image_height,
                                            int image_width) {
  return {cam.fx / image_width, cam.fy / image_height, cam.cx / image_width,
          cam.cy / image_height};
}

Tensor image_tensor(const Sample& sample) {
  Tensor t({3, sample.height, sample.width});
  const std::size_t plane = static_cast<std::size_t>(sample.height) * sample.width;
  for (std::size_t px = 0; px < plane; ++px) {
    for (std::size_t c = 0; c < 3; ++c) t[c * plane + px] = sample.image[px * 3 + c];
  }
  return t;
}

// ---------------------------------------------------------------------------

DepthDistribution depth_head(const Tensor& logits) { return {softmax_channels(logits)}; }

BEVFeature fuse(const Tensor& prime_depth, const Tensor& prime_fv) {
  if (prime_depth.rank() != 2 || prime_fv.rank() != 2) {
    throw ShapeMismatch("fuse expects (D, W) depth and (C, W) feature");
  }
  const int d_n = prime_depth.dim(0);
  const int w_n = prime_depth.dim(1);
  const int c_n = prime_fv.dim(0);
  if (prime_fv.dim(1) != w_n) {
    throw WidthMismatch("fuse: depth width " + std::to_string(w_n) + " vs feature width " +
                        std::to_string(prime_fv.dim(1)));
  }
  Tensor b({c_n, d_n, w_n});
  for (int c = 0; c < c_n; ++c) {
    for (int d = 0; d < d_n; ++d) {
      for (int w = 0; w < w_n; ++w) b.at(c, d, w) = prime_depth.at(d, w) * prime_fv.at(c, w);
    }
  }
  return {std::move(b)};
}

void fuse_backward(const Tensor& prime_depth, const Tensor& prime_fv, const Tensor& dbev,
                   Tensor& dprime_depth, Tensor& dprime_fv) {
  const int d_n = prime_depth.dim(0);
  const int w_n = prime_depth.dim(1);
  const int c_n = prime_fv.dim(0);
  require_shape(dbev, {c_n, d_n, w_n}, "fuse output gradient");
  dprime_depth = Tensor({d_n, w_n});
  dprime_fv = Tensor({c_n, w_n});
  for (int c = 0; c < c_n; ++c) {
    for (int d = 0; d < d_n; ++d) {
      for (int w = 0; w < w_n; ++w) {
        const double g = dbev.at(c, d, w);
        dprime_depth.at(d, w) += g * prime_fv.at(c, w);
        dprime_fv.at(c, w) += g * prime_depth.at(d, w);
      }
    }
  }
}

Tensor gated_column_max(const Tensor& gate, const Tensor& probs, std::vector<int>& argmax) {
  if (gate.rank() != 3 || gate.dim(0) != 1 || probs.rank() != 3 || gate.dim(1) != probs.dim(1) ||
      gate.dim(2) != probs.dim(2)) {
    throw ShapeMismatch("DAT: gate " + shape_string(gate.shape()) + " incompatible with depth " +
                        shape_string(probs.shape()));
  }
  const int d_n = probs.dim(0);
  const int h_n = probs.dim(1);
  const int w_n = probs.dim(2);
  Tensor out({d_n, w_n});
  argmax.assign(static_cast<std::size_t>(d_n) * w_n, 0);
  for (int d = 0; d < d_n; ++d) {
    for (int w = 0; w < w_n; ++w) {
      int best = 0;
      double best_v = gate.at(0, 0, w) * probs.at(d, 0, w);
      for (int h = 1; h < h_n; ++h) {
        const double v = gate.at(0, h, w) * probs.at(d, h, w);
        if (v > best_v) {
          best_v = v;
          best = h;
        }
      }
      out.at(d, w) = best_v;
      argmax[static_cast<std::size_t>(d) * w_n + w] = best;
    }
  }
  return out;
}

void gated_column_max_backward(const Tensor& gate, const Tensor& probs,
                               const std::vector<int>& argmax, const Tensor& dout, Tensor& dgate,
                               Tensor& dprobs) {
  const int d_n = probs.dim(0);
  const int w_n = probs.dim(2);
  require_shape(dout, {d_n, w_n}, "DAT output gradient");
  dgate = Tensor(gate.shape());
  dprobs = Tensor(probs.shape());
  for (int d = 0; d < d_n; ++d) {
    for (int w = 0; w < w_n; ++w) {
      const int h = argmax[static_cast<std::size_t>(d) * w_n + w];
      const double g = dout.at(d, w);
      dgate.at(0, h, w) += g * probs.at(d, h, w);
      dprobs.at(d, h, w) += g * gate.at(0, h, w);
    }
  }
}

// ---------------------------------------------------------------------------

SEGate::SEGate(ParameterSet& params, const std::string& name, int channels, int hidden)
    : channels_(channels),
      fc1_(params, name + ".fc1", channels + 4, hidden),
      fc2_(params, name + ".fc2", hidden, channels) {}

void SEGate::init(ParameterSet& params, Rng& rng) const {
  fc1_.init(params, rng);
  fc2_.init(params, rng);
  // Start close to a pass-through gate.
  params.value(fc2_.bias_id()).fill(2.0);
}

Tensor SEGate::forward(const ParameterSet& params, const Tensor& x,
                       std::span<const double> intrinsics, Cache& cache) const {
  if (x.rank() != 3 || x.dim(0) != channels_) throw ShapeMismatch("SE gate input channels");
  if (intrinsics.size() != 4) throw ShapeMismatch("SE gate expects 4 intrinsics");
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  cache.input.assign(static_cast<std::size_t>(channels_) + 4, 0.0);
  for (int c = 0; c < channels_; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += x[c * plane + i];
    cache.input[static_cast<std::size_t>(c)] = s / static_cast<double>(plane);
  }
  std::copy(intrinsics.begin(), intrinsics.end(), cache.input.begin() + channels_);
  cache.hidden = fc1_.forward(params, cache.input);
  for (double& v : cache.hidden) v = std::max(v, 0.0);
  cache.scale = fc2_.forward(params, cache.hidden);
  for (double& v : cache.scale) v = sigmoid(v);

  Tensor y = x;
  for (int c = 0; c < channels_; ++c) {
    const double s = cache.scale[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < plane; ++i) y[c * plane + i] *= s;
  }
  return y;
}

Tensor SEGate::backward(const ParameterSet& params, const Tensor& x, const Cache& cache,
                        const Tensor& dy, Gradients& grads) const {
  require_shape(dy, x.shape(), "SE gate output gradient");
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor dx(x.shape());
  std::vector<double> dpre(static_cast<std::size_t>(channels_));
  for (int c = 0; c < channels_; ++c) {
    const double s = cache.scale[static_cast<std::size_t>(c)];
    double ds = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      dx[c * plane + i] = dy[c * plane + i] * s;
      ds += dy[c * plane + i] * x[c * plane + i];
    }
    dpre[static_cast<std::size_t>(c)] = ds * s * (1.0 - s);
  }
  std::vector<double> dhidden = fc2_.backward(params, cache.hidden, dpre, grads);
  for (std::size_t i = 0; i < dhidden.size(); ++i) {
    if (!(cache.hidden[i] > 0.0)) dhidden[i] = 0.0;
  }
  const std::vector<double> dinput = fc1_.backward(params, cache.input, dhidden, grads);
  for (int c = 0; c < channels_; ++c) {
    const double g = dinput[static_cast<std::size_t>(c)] / static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) dx[c * plane + i] += g;
  }
  return dx;
}

// ---------------------------------------------------------------------------

BevResampler::BevResampler(const CameraModel& cam, const DepthBinSpec& depth,
                           const BEVGridSpec& grid, int feature_width, int downsample)
    : depth_bins_(depth.bins), width_(feature_width), rows_(grid.rows), cols_(grid.cols) {
  taps_.resize(static_cast<std::size_t>(rows_) * cols_);
  const double cw = grid.cell_width();
  for (int r = 0; r < rows_; ++r) {
    for (int c = 0; c < cols_; ++c) {
      const Point3D ground{grid.x_min + (c + 0.5) * cw, grid.row_center_y(r), 0.0};
      const Point3D pc = world_to_camera(ground, cam);
      if (!(pc.z > 0.0)) continue;
      const double u = cam.fx * pc.x / pc.z + cam.cx;
      const double wf = u / downsample - 0.5;
      const double df = std::clamp(depth.continuous_index(pc.z), 0.0, depth_bins_ - 1.0);
      const int w0 = static_cast<int>(std::floor(wf));
      const int d0 = std::min(static_cast<int>(std::floor(df)), depth_bins_ - 1);
      const double tw = wf - w0;
      const double td = df - d0;
      auto& cell = taps_[static_cast<std::size_t>(r) * cols_ + c];
      for (int a = 0; a < 2; ++a) {
        const int d = d0 + a;
        const double wd = a == 0 ? 1.0 - td : td;
        if (d >= depth_bins_ || wd == 0.0) continue;
        for (int b = 0; b < 2; ++b) {
          const int w = w0 + b;
          const double ww = b == 0 ? 1.0 - tw : tw;
          if (w < 0 || w >= width_ || ww == 0.0) continue;
          cell.push_back({d * width_ + w, wd * ww});
        }
      }
    }
  }
}

BevResampler BevResampler::identity(int depth_bins, int width) {
  BevResampler r;
  r.depth_bins_ = depth_bins;
  r.width_ = width;
  r.rows_ = depth_bins;
  r.cols_ = width;
  r.taps_.resize(static_cast<std::size_t>(depth_bins) * width);
  for (int i = 0; i < depth_bins * width; ++i) r.taps_[static_cast<std::size_t>(i)].push_back({i, 1.0});
  return r;
}

Tensor BevResampler::forward(const Tensor& bev) const {
  if (bev.rank() != 3 || bev.dim(1) != depth_bins_ || bev.dim(2) != width_) {
    throw ShapeMismatch("BEV resample input " + shape_string(bev.shape()));
  }
  const int c_n = bev.dim(0);
  const std::size_t src_plane = static_cast<std::size_t>(depth_bins_) * width_;
  const std::size_t dst_plane = static_cast<std::size_t>(rows_) * cols_;
  Tensor out({c_n, rows_, cols_});
  for (std::size_t cell = 0; cell < dst_plane; ++cell) {
    for (const Tap& t : taps_[cell]) {
      for (int c = 0; c < c_n; ++c) {
        out[c * dst_plane + cell] += t.weight * bev[c * src_plane + static_cast<std::size_t>(t.src)];
      }
    }
  }
  return out;
}

Tensor BevResampler::backward(const Tensor& dout) const {
  const int c_n = dout.dim(0);
  require_shape(dout, {c_n, rows_, cols_}, "BEV resample output gradient");
  const std::size_t src_plane = static_cast<std::size_t>(depth_bins_) * width_;
  const std::size_t dst_plane = static_cast<std::size_t>(rows_) * cols_;
  Tensor dbev({c_n, depth_bins_, width_});
  for (std::size_t cell = 0; cell < dst_plane; ++cell) {
    for (const Tap& t : taps_[cell]) {
      for (int c = 0; c < c_n; ++c) {
        dbev[c * src_plane + static_cast<std::size_t>(t.src)] += t.weight * dout[c * dst_plane + cell];
      }
    }
  }
  return dbev;
}

// ---------------------------------------------------------------------------

Network::Network(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  build();
  initialize(seed);
}

void Network::build() {
  const ModelDims& d = config_.dims;
  const int c_n = d.channels;
  int in = 5;  // RGB plus column/row coordinates
  const int stages = stage_count(d.downsample);
  for (int s = 0; s < stages; ++s) {
    const int out = stage_channels(s, stages, c_n);
    trunk_.emplace_back(params_, "trunk.stage" + std::to_string(s),
                        Conv2dSpec{in, out, 3, 3, 2, 1, 1});
    in = out;
  }
  if (stages == 0) {
    trunk_.emplace_back(params_, "trunk.lift", Conv2dSpec{in, c_n, 3, 3, 1, 1, 1});
  }
  res1_ = Conv2d(params_, "trunk.res.conv1", {c_n, c_n, 3, 3, 1, 1, 1});
  res2_ = Conv2d(params_, "trunk.res.conv2", {c_n, c_n, 3, 3, 1, 1, 1});

  fv_se_ = SEGate(params_, "fv.se", c_n, se_hidden(c_n));
  fv_conv_ = Conv2d(params_, "fv.conv", {c_n, c_n, 3, 3, 1, 1, 1});
  depth_se_ = SEGate(params_, "depth.se", c_n, se_hidden(c_n));
  depth_conv_ = Conv2d(params_, "depth.conv", {c_n, d.depth_bins, 3, 3, 1, 1, 1});

  if (config_.fusion == FusionKind::prime) {
    pfe1_ = Conv2d(params_, "fusion.pfe.conv1", {c_n, c_n, 1, 3, 1, 0, 1});
    pfe2_ = Conv2d(params_, "fusion.pfe.conv2", {c_n, c_n, 1, 3, 1, 0, 1});
    dat_conv_ = Conv2d(params_, "fusion.dat.conv", {c_n, 1, 3, 3, 1, 1, 1});
  } else {
    const int h_n = config_.feature_height();
    naive_weight_ = params_.add("fusion.naive.collapse.weight", {c_n, c_n * h_n});
    naive_bias_ = params_.add("fusion.naive.collapse.bias", {c_n});
  }

  const int hc = d.head_channels;
  neck1_ = Conv2d(params_, "head.neck1", {c_n + 2, hc, 3, 3, 1, 1, 1});
  neck2_ = Conv2d(params_, "head.neck2", {hc, hc, 3, 3, 1, 1, 1});
  conf_head_ = Conv2d(params_, "head.confidence", {hc, 1, 1, 1, 1, 0, 0});
  emb_head_ = Conv2d(params_, "head.embedding", {hc, d.embedding, 1, 1, 1, 0, 0});
  xoff_head_ = Conv2d(params_, "head.x_offset", {hc, 1, 1, 1, 1, 0, 0});
  zoff_head_ = Conv2d(params_, "head.z_offset", {hc, 1, 1, 1, 1, 0, 0});
}

void Network::initialize(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1417));
  for (const Conv2d& c : trunk_) c.init(params_, rng);
  res1_.init(params_, rng);
  res2_.init(params_, rng);
  fv_se_.init(params_, rng);
  fv_conv_.init(params_, rng);
  depth_se_.init(params_, rng);
  depth_conv_.init(params_, rng);
  if (config_.fusion == FusionKind::prime) {
    pfe1_.init(params_, rng);
    pfe2_.init(params_, rng);
    dat_conv_.init(params_, rng);
  } else {
    const Tensor& w = params_.value(naive_weight_);
    const double bound = std::sqrt(6.0 / w.dim(1));
    for (double& v : params_.value(naive_weight_).values()) v = rng.uniform(-bound, bound);
  }
  neck1_.init(params_, rng);
  neck2_.init(params_, rng);
  conf_head_.init(params_, rng);
  emb_head_.init(params_, rng);
  xoff_head_.init(params_, rng);
  zoff_head_.init(params_, rng);
  params_.value(conf_head_.bias_id()).fill(kConfidencePriorBias);
}

bool Network::is_backbone_parameter(int id) const {
  const std::string& n = params_.name(id);
  return n.starts_with("trunk.") || n.starts_with("fv.") || n.starts_with("depth.");
}

bool Network::is_depth_branch_parameter(int id) const {
  return params_.name(id).starts_with("depth.");
}

BevResampler Network::resampler_for(const CameraModel& cam) const {
  return BevResampler(cam, config_.depth, config_.grid, config_.feature_width(),
                      config_.dims.downsample);
}

ForwardPass Network::forward(const Sample& sample) const {
  return forward(image_tensor(sample), sample.cam);
}

Tensor Network::run_trunk(const Tensor& image, ForwardPass& pass) const {
  pass.trunk_cache.resize(trunk_.size());
  pass.trunk_out.clear();
  // Ground depth is mostly a function of the image row, which untextured scenes do not reveal locally.
  const Tensor input = concat_channels(image, coordinate_channels(image.dim(1), image.dim(2)));
  const Tensor* x = &input;
  for (std::size_t i = 0; i < trunk_.size(); ++i) {
    pass.trunk_out.push_back(relu(trunk_[i].forward(params_, *x, pass.trunk_cache[i])));
    x = &pass.trunk_out.back();
  }
  pass.res1_out = relu(res1_.forward(params_, *x, pass.res1_cache));
  Tensor sum = res2_.forward(params_, pass.res1_out, pass.res2_cache);
  sum += *x;
  return relu(sum);
}

std::pair<Tensor, Tensor> Network::backbone(const Tensor& image,
                                            std::span<const double> intrinsics) const {
  require_shape(image, {3, config_.dims.image_height, config_.dims.image_width}, "backbone image");
  ForwardPass pass;
  const Tensor trunk = run_trunk(image, pass);
  Tensor fv = relu(fv_conv_.forward(params_, fv_se_.forward(params_, trunk, intrinsics, pass.fv_se_cache),
                                    pass.fv_conv_cache));
  Tensor depth = depth_conv_.forward(
      params_, depth_se_.forward(params_, trunk, intrinsics, pass.depth_se_cache),
      pass.depth_conv_cache);
  return {std::move(fv), std::move(depth)};
}

Tensor Network::pfe(const Tensor& fv_feature) const {
  if (config_.fusion != FusionKind::prime) throw InvalidArgument("model has no PFE module");
  std::vector<int> argmax;
  Conv2d::Cache c1, c2;
  const Tensor pooled = as_row_image(column_max(fv_feature, argmax));
  const Tensor hidden = relu(pfe1_.forward(params_, pooled, c1));
  return as_plane(pfe2_.forward(params_, hidden, c2));
}

Tensor Network::dat(const Tensor& depth_probs, const Tensor& fv_feature) const {
  if (config_.fusion != FusionKind::prime) throw InvalidArgument("model has no DAT module");
  if (depth_probs.rank() != 3 || fv_feature.rank() != 3 || depth_probs.dim(1) != fv_feature.dim(1) ||
      depth_probs.dim(2) != fv_feature.dim(2)) {
    throw ShapeMismatch("DAT inputs disagree in H or W");
  }
  Conv2d::Cache cache;
  Tensor gate = config_.dat_gate ? sigmoid(dat_conv_.forward(params_, fv_feature, cache))
                                 : Tensor({1, fv_feature.dim(1), fv_feature.dim(2)}, 1.0);
  std::vector<int> argmax;
  return gated_column_max(gate, depth_probs, argmax);
}

void Network::run_fusion(ForwardPass& pass) const {
  const int c_n = config_.dims.channels;
  const int d_n = config_.dims.depth_bins;
  const int h_n = pass.fv_feature.dim(1);
  const int w_n = pass.fv_feature.dim(2);
  if (config_.fusion == FusionKind::prime) {
    pass.pfe_pooled = column_max(pass.fv_feature, pass.pfe_argmax);
    pass.pfe_hidden = relu(pfe1_.forward(params_, as_row_image(pass.pfe_pooled), pass.pfe1_cache));
    pass.prime_fv = as_plane(pfe2_.forward(params_, pass.pfe_hidden, pass.pfe2_cache));
    pass.dat_gate = config_.dat_gate ? sigmoid(dat_conv_.forward(params_, pass.fv_feature, pass.dat_cache))
                                     : Tensor({1, h_n, w_n}, 1.0);
    pass.prime_depth = gated_column_max(pass.dat_gate, pass.depth.probs, pass.dat_argmax);
    pass.bev = fuse(pass.prime_depth, pass.prime_fv);
    return;
  }

  // Naive: B(c, d, h, w) = p(d, h, w) F(c, h, w), collapsed over (c, h).
  ConstMatrixMap kernel(params_.value(naive_weight_).data(), c_n, c_n * h_n);
  const Tensor& bias = params_.value(naive_bias_);
  pass.naive_columns.assign(static_cast<std::size_t>(d_n), Tensor());
  Tensor bev({c_n, d_n, w_n});
  RowMatrix out(c_n, w_n);
  for (int d = 0; d < d_n; ++d) {
    Tensor cols({c_n * h_n, w_n});
    for (int c = 0; c < c_n; ++c) {
      for (int h = 0; h < h_n; ++h) {
        for (int w = 0; w < w_n; ++w) {
          cols.at(c * h_n + h, w) = pass.depth.probs.at(d, h, w) * pass.fv_feature.at(c, h, w);
        }
      }
    }
    out.noalias() = kernel * ConstMatrixMap(cols.data(), c_n * h_n, w_n);
    for (int c = 0; c < c_n; ++c) {
      for (int w = 0; w < w_n; ++w) bev.at(c, d, w) = out(c, w) + bias[static_cast<std::size_t>(c)];
    }
    pass.naive_columns[static_cast<std::size_t>(d)] = std::move(cols);
  }
  pass.bev = {std::move(bev)};
}

LanePrediction Network::lane_head(const BEVFeature& bev, const BevResampler& resampler) const {
  ForwardPass pass;
  pass.bev = bev;
  pass.resampler = resampler;
  run_head(pass);
  return pass.prediction;
}

void Network::run_head(ForwardPass& pass) const {
  const Tensor resampled = pass.resampler.forward(pass.bev.values);
  pass.head_input = concat_channels(resampled, coordinate_channels(resampled.dim(1), resampled.dim(2)));
  pass.neck1_out = relu(neck1_.forward(params_, pass.head_input, pass.neck1_cache));
  pass.neck2_out = relu(neck2_.forward(params_, pass.neck1_out, pass.neck2_cache));
  LanePrediction& p = pass.prediction;
  p.confidence = squeeze_channel(sigmoid(conf_head_.forward(params_, pass.neck2_out, pass.conf_cache)));
  p.embedding = emb_head_.forward(params_, pass.neck2_out, pass.emb_cache);
  p.x_offset = squeeze_channel(sigmoid(xoff_head_.forward(params_, pass.neck2_out, pass.xoff_cache)));
  p.z_offset = squeeze_channel(zoff_head_.forward(params_, pass.neck2_out, pass.zoff_cache));
}

ForwardPass Network::forward_depth(const Tensor& image, const CameraModel& cam) const {
  const ModelDims& d = config_.dims;
  require_shape(image, {3, d.image_height, d.image_width}, "network image");
  ForwardPass pass;
  pass.depth_only = true;
  pass.intrinsics = normalized_intrinsics(cam, d.image_height, d.image_width);
  pass.image = image;
  pass.trunk_feature = run_trunk(pass.image, pass);
  pass.depth_gated = depth_se_.forward(params_, pass.trunk_feature, pass.intrinsics, pass.depth_se_cache);
  pass.depth_logits = depth_conv_.forward(params_, pass.depth_gated, pass.depth_conv_cache);
  pass.depth = depth_head(pass.depth_logits);
  return pass;
}

ForwardPass Network::forward(const Tensor& image, const CameraModel& cam) const {
  const ModelDims& d = config_.dims;
  require_shape(image, {3, d.image_height, d.image_width}, "network image");
  ForwardPass pass;
  pass.intrinsics = normalized_intrinsics(cam, d.image_height, d.image_width);
  pass.image = image;
  pass.trunk_feature = run_trunk(pass.image, pass);

  pass.fv_gated = fv_se_.forward(params_, pass.trunk_feature, pass.intrinsics, pass.fv_se_cache);
  pass.fv_feature = relu(fv_conv_.forward(params_, pass.fv_gated, pass.fv_conv_cache));
  pass.depth_gated = depth_se_.forward(params_, pass.trunk_feature, pass.intrinsics, pass.depth_se_cache);
  pass.depth_logits = depth_conv_.forward(params_, pass.depth_gated, pass.depth_conv_cache);
  pass.depth = depth_head(pass.depth_logits);

  run_fusion(pass);
  pass.resampler = resampler_for(cam);
  run_head(pass);
  return pass;
}

void Network::backward(const ForwardPass& pass, const OutputGradients& dout, Gradients& grads) const {
  Tensor dfv_feature(pass.fv_feature.shape());
  Tensor dprobs(pass.depth.probs.shape());
  const bool head_active = !pass.depth_only && (!dout.confidence.empty() || !dout.embedding.empty() ||
                                                !dout.x_offset.empty() || !dout.z_offset.empty());
  if (head_active) backward_head_and_fusion(pass, dout, grads, dfv_feature, dprobs);
  if (!dout.depth_probs.empty()) dprobs += dout.depth_probs;

  // Branches.
  Tensor dtrunk(pass.trunk_feature.shape());
  if (head_active) {
    const Tensor dfv_pre = relu_backward(pass.fv_feature, dfv_feature);
    const Tensor dfv_gated = fv_conv_.backward(params_, pass.fv_conv_cache, dfv_pre, grads);
    dtrunk += fv_se_.backward(params_, pass.trunk_feature, pass.fv_se_cache, dfv_gated, grads);
  }
  const Tensor dlogits = softmax_channels_backward(pass.depth.probs, dprobs);
  const Tensor ddepth_gated = depth_conv_.backward(params_, pass.depth_conv_cache, dlogits, grads);
  dtrunk += depth_se_.backward(params_, pass.trunk_feature, pass.depth_se_cache, ddepth_gated, grads);

  // Trunk.
  const Tensor dsum = relu_backward(pass.trunk_feature, dtrunk);
  const Tensor dres1 = res2_.backward(params_, pass.res2_cache, dsum, grads);
  Tensor dx = res1_.backward(params_, pass.res1_cache, relu_backward(pass.res1_out, dres1), grads);
  dx += dsum;
  for (std::size_t i = trunk_.size(); i-- > 0;) {
    dx = trunk_[i].backward(params_, pass.trunk_cache[i], relu_backward(pass.trunk_out[i], dx), grads);
  }
}

void Network::backward_head_and_fusion(const ForwardPass& pass, const OutputGradients& dout,
                                       Gradients& grads, Tensor& dfv_feature, Tensor& dprobs) const {
  const ModelDims& d = config_.dims;
  const int c_n = d.channels;
  const int d_n = d.depth_bins;
  const LanePrediction& p = pass.prediction;

  // Lane head.
  Tensor dneck2(pass.neck2_out.shape());
  if (!dout.confidence.empty()) {
    const Tensor dpre = unsqueeze_channel(sigmoid_backward(p.confidence, dout.confidence));
    dneck2 += conf_head_.backward(params_, pass.conf_cache, dpre, grads);
  }
  if (!dout.embedding.empty()) dneck2 += emb_head_.backward(params_, pass.emb_cache, dout.embedding, grads);
  if (!dout.x_offset.empty()) {
    const Tensor dpre = unsqueeze_channel(sigmoid_backward(p.x_offset, dout.x_offset));
    dneck2 += xoff_head_.backward(params_, pass.xoff_cache, dpre, grads);
  }
  if (!dout.z_offset.empty()) {
    dneck2 += zoff_head_.backward(params_, pass.zoff_cache, unsqueeze_channel(dout.z_offset), grads);
  }
  const Tensor dneck1 = neck2_.backward(params_, pass.neck2_cache, relu_backward(pass.neck2_out, dneck2), grads);
  const Tensor dhead_in = neck1_.backward(params_, pass.neck1_cache, relu_backward(pass.neck1_out, dneck1), grads);
  const Tensor dbev = pass.resampler.backward(drop_channels(dhead_in, c_n));

  // Fusion.
  if (config_.fusion == FusionKind::prime) {
    Tensor dprime_depth, dprime_fv;
    fuse_backward(pass.prime_depth, pass.prime_fv, dbev, dprime_depth, dprime_fv);

    const Tensor dhidden = pfe2_.backward(params_, pass.pfe2_cache, as_row_image(dprime_fv), grads);
    const Tensor dpooled = pfe1_.backward(params_, pass.pfe1_cache, relu_backward(pass.pfe_hidden, dhidden), grads);
    dfv_feature += column_max_backward(pass.pfe_argmax, pass.fv_feature.shape(), as_plane(dpooled));

    Tensor dgate, dprobs_dat;
    gated_column_max_backward(pass.dat_gate, pass.depth.probs, pass.dat_argmax, dprime_depth, dgate,
                              dprobs_dat);
    dprobs += dprobs_dat;
    if (config_.dat_gate) {
      dfv_feature += dat_conv_.backward(params_, pass.dat_cache, sigmoid_backward(pass.dat_gate, dgate), grads);
    }
  } else {
    const int h_n = pass.fv_feature.dim(1);
    const int w_n = pass.fv_feature.dim(2);
    ConstMatrixMap kernel(params_.value(naive_weight_).data(), c_n, c_n * h_n);
    MatrixMap dkernel(grads[static_cast<std::size_t>(naive_weight_)].data(), c_n, c_n * h_n);
    Tensor& dbias = grads[static_cast<std::size_t>(naive_bias_)];
    RowMatrix dslice(c_n, w_n);
    for (int dd = 0; dd < d_n; ++dd) {
      for (int c = 0; c < c_n; ++c) {
        for (int w = 0; w < w_n; ++w) {
          dslice(c, w) = dbev.at(c, dd, w);
          dbias[static_cast<std::size_t>(c)] += dslice(c, w);
        }
      }
      const Tensor& cols = pass.naive_columns[static_cast<std::size_t>(dd)];
      ConstMatrixMap colm(cols.data(), c_n * h_n, w_n);
      dkernel.noalias() += dslice * colm.transpose();
      const RowMatrix dcols = kernel.transpose() * dslice;
      for (int c = 0; c < c_n; ++c) {
        for (int h = 0; h < h_n; ++h) {
          for (int w = 0; w < w_n; ++w) {
            const double g = dcols(c * h_n + h, w);
            dprobs.at(dd, h, w) += g * pass.fv_feature.at(c, h, w);
            dfv_feature.at(c, h, w) += g * pass.depth.probs.at(dd, h, w);
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------

std::size_t count_parameters(const ModelConfig& config) {
  config.validate();
  const ModelDims& d = config.dims;
  const std::size_t c_n = static_cast<std::size_t>(d.channels);
  auto conv = [](std::size_t in, std::size_t out, std::size_t kh, std::size_t kw) {
    return out * in * kh * kw + out;
  };
  auto linear = [](std::size_t in, std::size_t out) { return out * in + out; };

  std::size_t n = 0;
  std::size_t in = 5;  // RGB plus coordinates
  const int stages = stage_count(d.downsample);
  for (int s = 0; s < stages; ++s) {
    const auto out = static_cast<std::size_t>(stage_channels(s, stages, d.channels));
    n += conv(in, out, 3, 3);
    in = out;
  }
  if (stages == 0) n += conv(in, c_n, 3, 3);
  n += 2 * conv(c_n, c_n, 3, 3);
  const auto hidden = static_cast<std::size_t>(se_hidden(d.channels));
  n += 2 * (linear(c_n + 4, hidden) + linear(hidden, c_n));
  n += conv(c_n, c_n, 3, 3) + conv(c_n, static_cast<std::size_t>(d.depth_bins), 3, 3);
  if (config.fusion == FusionKind::prime) {
    n += 2 * conv(c_n, c_n, 1, 3) + conv(c_n, 1, 3, 3);
  } else {
    n += c_n * c_n * static_cast<std::size_t>(config.feature_height()) + c_n;
  }
  const auto hc = static_cast<std::size_t>(d.head_channels);
  n += conv(c_n + 2, hc, 3, 3) + conv(hc, hc, 3, 3);
  n += conv(hc, 1, 1, 1) * 3 + conv(hc, static_cast<std::size_t>(d.embedding), 1, 1);
  return n;
}

}  // namespace lanebev
