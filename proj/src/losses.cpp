#include "lanebev/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "lanebev/errors.hpp"

namespace lanebev {

void LossWeights::validate() const {
  for (double w : as_array()) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  }
}

bool DepthTarget::supervised(int h, int w) const {
  for (int d = 0; d < bins(); ++d) {
    if (dist.at(d, h, w) != 0.0) return true;
  }
  return false;
}

DepthTarget one_hot_depth_target(int height, int width, int bins, const std::vector<int>& labels) {
  if (labels.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeMismatch("depth labels do not cover the target plane");
  }
  DepthTarget t{Tensor({bins, height, width})};
  for (int h = 0; h < height; ++h) {
    for (int w = 0; w < width; ++w) {
      const int label = labels[static_cast<std::size_t>(h) * width + w];
      if (label < 0) continue;
      if (label >= bins) throw ShapeMismatch("depth label outside the bin range");
      t.dist.at(label, h, w) = 1.0;
    }
  }
  return t;
}

DepthTarget pool_depth_target(const Sample& sample, int downsample) {
  if (downsample < 1 || sample.height % downsample != 0 || sample.width % downsample != 0) {
    throw ShapeMismatch("image size not divisible by the downsample factor");
  }
  const int h_n = sample.height / downsample;
  const int w_n = sample.width / downsample;
  DepthTarget t{Tensor({sample.depth.bins, h_n, w_n})};
  std::vector<int> votes(static_cast<std::size_t>(sample.depth.bins), 0);
  const int block = downsample * downsample;
  for (int fh = 0; fh < h_n; ++fh) {
    for (int fw = 0; fw < w_n; ++fw) {
      std::fill(votes.begin(), votes.end(), 0);
      int valid = 0;
      for (int i = fh * downsample; i < (fh + 1) * downsample; ++i) {
        for (int j = fw * downsample; j < (fw + 1) * downsample; ++j) {
          const std::size_t px = static_cast<std::size_t>(i) * sample.width + j;
          if (sample.ignore[px]) continue;
          ++votes[sample.depth_bin[px]];
          ++valid;
        }
      }
      if (2 * valid < block) continue;
      for (int d = 0; d < sample.depth.bins; ++d) {
        t.dist.at(d, fh, fw) = static_cast<double>(votes[static_cast<std::size_t>(d)]) / valid;
      }
    }
  }
  return t;
}

namespace {

/// Lane point at longitudinal position y, exact at polyline vertices.
std::optional<Point3D> lane_point_at(const Polyline& lane, double y) {
  if (lane.size() < 2 || y < lane.front().y || y > lane.back().y) return std::nullopt;
  if (y == lane.back().y) return lane.back();
  for (std::size_t i = 0; i + 1 < lane.size(); ++i) {
    const Point3D& a = lane[i];
    const Point3D& b = lane[i + 1];
    if (y >= a.y && y < b.y) {
      const double t = (y - a.y) / (b.y - a.y);
      return Point3D{a.x + t * (b.x - a.x), y, a.z + t * (b.z - a.z)};
    }
  }
  return std::nullopt;
}

}  // namespace

LaneTarget make_lane_target(const Sample& sample, const BEVGridSpec& grid) {
  LaneTarget t;
  t.rows = grid.rows;
  t.cols = grid.cols;
  t.confidence = Tensor({grid.rows, grid.cols});
  t.x_offset = Tensor({grid.rows, grid.cols});
  t.z_offset = Tensor({grid.rows, grid.cols});
  t.instance.assign(static_cast<std::size_t>(grid.rows) * grid.cols, 0);
  const double cw = grid.cell_width();
  for (const Polyline& lane : sample.lanes) {
    bool used = false;
    const int id = t.lane_count + 1;
    for (int r = 0; r < grid.rows; ++r) {
      const auto p = lane_point_at(lane, grid.row_center_y(r));
      if (!p) continue;
      const auto cell = bev_cell_of(*p, grid);
      if (!cell) continue;
      const std::size_t idx = static_cast<std::size_t>(cell->row) * grid.cols + cell->col;
      if (t.instance[idx] != 0) continue;  // first lane keeps a shared cell
      t.instance[idx] = id;
      t.confidence.at(cell->row, cell->col) = 1.0;
      t.x_offset.at(cell->row, cell->col) = (p->x - grid.col_left(cell->col)) / cw;
      t.z_offset.at(cell->row, cell->col) = p->z;
      used = true;
    }
    if (used) ++t.lane_count;
  }
  return t;
}

// ---------------------------------------------------------------------------

DepthLoss depth_loss(const DepthDistribution& pred, const DepthTarget& truth) {
  const Tensor& p = pred.probs;
  if (p.shape() != truth.dist.shape()) {
    throw ShapeMismatch("depth loss: prediction " + shape_string(p.shape()) + " vs target " +
                        shape_string(truth.dist.shape()));
  }
  const int d_n = p.dim(0);
  DepthLoss out;
  out.grad = Tensor(p.shape());
  int supervised = 0;
  for (int h = 0; h < truth.height(); ++h) {
    for (int w = 0; w < truth.width(); ++w) {
      if (!truth.supervised(h, w)) continue;
      ++supervised;
      for (int d = 0; d < d_n; ++d) {
        const double t = truth.dist.at(d, h, w);
        if (t == 0.0) continue;
        const double diff = t - p.at(d, h, w);
        out.value += std::abs(diff) * t;
        out.grad.at(d, h, w) = diff > 0.0 ? -t : (diff < 0.0 ? t : 0.0);
      }
    }
  }
  if (supervised == 0) {
    out.no_supervision = true;
    return out;
  }
  out.value /= supervised;
  for (double& g : out.grad.values()) g /= supervised;
  return out;
}

LossTerm conf_loss(const Tensor& pred, const Tensor& truth) {
  require_shape(truth, pred.shape(), "confidence loss target");
  LossTerm out;
  out.grad = Tensor(pred.shape());
  const double n = static_cast<double>(pred.size());
  if (pred.size() == 0) return out;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double raw = pred[i];
    const double q = std::clamp(raw, kConfidenceClamp, 1.0 - kConfidenceClamp);
    const double t = truth[i];
    out.value -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
    if (raw > kConfidenceClamp && raw < 1.0 - kConfidenceClamp) {
      out.grad[i] = (-t / q + (1.0 - t) / (1.0 - q)) / n;
    }
  }
  out.value /= n;
  return out;
}

InstanceLoss instance_loss(const Tensor& embedding, const std::vector<int>& instance,
                           const InstanceLossParams& params) {
  if (embedding.rank() != 3) throw ShapeMismatch("instance loss expects (E, rows, cols)");
  const int e_n = embedding.dim(0);
  const std::size_t plane = static_cast<std::size_t>(embedding.dim(1)) * embedding.dim(2);
  if (instance.size() != plane) throw ShapeMismatch("instance map size differs from embedding plane");

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < plane; ++i) {
    if (instance[i] > 0) members[instance[i]].push_back(i);
  }
  if (members.empty()) throw NoForeground("instance loss needs at least one lane cell");

  InstanceLoss out;
  out.grad = Tensor(embedding.shape());
  out.lanes = static_cast<int>(members.size());
  const double k_n = out.lanes;
  std::vector<std::vector<double>> means;
  std::vector<const std::vector<std::size_t>*> groups;
  for (const auto& [id, cells] : members) {
    std::vector<double> mu(static_cast<std::size_t>(e_n), 0.0);
    for (std::size_t cell : cells) {
      for (int e = 0; e < e_n; ++e) mu[static_cast<std::size_t>(e)] += embedding[e * plane + cell];
    }
    for (double& v : mu) v /= static_cast<double>(cells.size());

    // Pull term: hinge on the distance to the lane mean.
    const double n = static_cast<double>(cells.size());
    std::vector<double> g_sum(static_cast<std::size_t>(e_n), 0.0);
    std::vector<std::vector<double>> g(cells.size(), std::vector<double>(static_cast<std::size_t>(e_n), 0.0));
    for (std::size_t m = 0; m < cells.size(); ++m) {
      double r2 = 0.0;
      for (int e = 0; e < e_n; ++e) {
        const double diff = embedding[e * plane + cells[m]] - mu[static_cast<std::size_t>(e)];
        r2 += diff * diff;
      }
      const double r = std::sqrt(r2);
      const double hinge = std::max(0.0, r - params.pull_margin);
      out.variance += hinge * hinge / (n * k_n);
      if (hinge > 0.0) {
        for (int e = 0; e < e_n; ++e) {
          const double diff = embedding[e * plane + cells[m]] - mu[static_cast<std::size_t>(e)];
          g[m][static_cast<std::size_t>(e)] = 2.0 * hinge * diff / r;
          g_sum[static_cast<std::size_t>(e)] += g[m][static_cast<std::size_t>(e)];
        }
      }
    }
    for (std::size_t m = 0; m < cells.size(); ++m) {
      for (int e = 0; e < e_n; ++e) {
        out.grad[e * plane + cells[m]] +=
            (g[m][static_cast<std::size_t>(e)] - g_sum[static_cast<std::size_t>(e)] / n) / (n * k_n);
      }
    }
    means.push_back(std::move(mu));
    groups.push_back(&cells);
  }
  out.value = out.variance;
  if (means.size() < 2) return out;

  // Push term: reciprocal of the summed pairwise distances between lane means.
  std::vector<std::vector<double>> dmean(means.size(), std::vector<double>(static_cast<std::size_t>(e_n), 0.0));
  for (std::size_t a = 0; a < means.size(); ++a) {
    for (std::size_t b = a + 1; b < means.size(); ++b) {
      double d2 = 0.0;
      for (int e = 0; e < e_n; ++e) {
        const double diff = means[a][static_cast<std::size_t>(e)] - means[b][static_cast<std::size_t>(e)];
        d2 += diff * diff;
      }
      const double dist = std::sqrt(d2);
      out.distance += dist;
      if (dist > 0.0) {
        for (int e = 0; e < e_n; ++e) {
          const double unit = (means[a][static_cast<std::size_t>(e)] - means[b][static_cast<std::size_t>(e)]) / dist;
          dmean[a][static_cast<std::size_t>(e)] += unit;
          dmean[b][static_cast<std::size_t>(e)] -= unit;
        }
      }
    }
  }
  const double denom = out.distance + params.push_epsilon;
  out.value += 1.0 / denom;
  const double scale = -1.0 / (denom * denom);
  for (std::size_t a = 0; a < means.size(); ++a) {
    const double n = static_cast<double>(groups[a]->size());
    for (std::size_t cell : *groups[a]) {
      for (int e = 0; e < e_n; ++e) {
        out.grad[e * plane + cell] += scale * dmean[a][static_cast<std::size_t>(e)] / n;
      }
    }
  }
  return out;
}

OffsetLosses offset_losses(const Tensor& pred_x, const Tensor& pred_z, const LaneTarget& target,
                           double sigma, OffsetLossKind kind) {
  require_shape(pred_x, {target.rows, target.cols}, "x offset prediction");
  require_shape(pred_z, {target.rows, target.cols}, "z offset prediction");
  OffsetLosses out;
  out.x.grad = Tensor(pred_x.shape());
  out.z.grad = Tensor(pred_z.shape());
  for (std::size_t i = 0; i < pred_x.size(); ++i) {
    if (target.confidence[i] > sigma) ++out.masked_cells;
  }
  if (out.masked_cells == 0) return out;
  const double n = out.masked_cells;
  auto accumulate = [&](const Tensor& pred, const Tensor& truth, LossTerm& term) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (!(target.confidence[i] > sigma)) continue;
      const double diff = pred[i] - truth[i];
      if (kind == OffsetLossKind::l1) {
        term.value += std::abs(diff);
        term.grad[i] = (diff > 0.0 ? 1.0 : diff < 0.0 ? -1.0 : 0.0) / n;
      } else {
        term.value += diff * diff;
        term.grad[i] = 2.0 * diff / n;
      }
    }
    term.value /= n;
  };
  accumulate(pred_x, target.x_offset, out.x);
  accumulate(pred_z, target.z_offset, out.z);
  return out;
}

LossBreakdown total_loss(const std::array<double, 5>& parts, const LossWeights& weights) {
  LossBreakdown out;
  out.parts = parts;
  const std::array<double, 5> w = weights.as_array();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!std::isfinite(parts[i])) {
      throw NonFiniteLoss(std::string("loss term ") + kLossNames[i] + " is not finite");
    }
    out.weighted[i] = w[i] * parts[i];
    out.total += out.weighted[i];
  }
  return out;
}

LossBreakdown evaluate_objective(const ForwardPass& pass, const DepthTarget& depth,
                                 const LaneTarget& lanes, const ObjectiveSettings& settings,
                                 OutputGradients& grads) {
  const LanePrediction& pred = pass.prediction;
  const LossWeights& w = settings.weights;
  DepthLoss ld = depth_loss(pass.depth, depth);
  LossTerm lc = conf_loss(pred.confidence, lanes.confidence);
  InstanceLoss li;
  li.grad = Tensor(pred.embedding.shape());
  if (lanes.lane_count > 0) li = instance_loss(pred.embedding, lanes.instance, settings.instance);
  OffsetLosses lo = offset_losses(pred.x_offset, pred.z_offset, lanes, settings.sigma,
                                  settings.offset_kind);

  const LossBreakdown out = total_loss({ld.value, lc.value, li.value, lo.x.value, lo.z.value}, w);
  ld.grad *= w.depth;
  lc.grad *= w.confidence;
  li.grad *= w.instance;
  lo.x.grad *= w.offset_x;
  lo.z.grad *= w.offset_z;
  grads.depth_probs = std::move(ld.grad);
  grads.confidence = std::move(lc.grad);
  grads.embedding = std::move(li.grad);
  grads.x_offset = std::move(lo.x.grad);
  grads.z_offset = std::move(lo.z.grad);
  return out;
}

}  // namespace lanebev
