#include "lanebev/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "lanebev/errors.hpp"

namespace lanebev {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank3(const Tensor& t, const char* what) {
  if (t.rank() != 3) {
    throw ShapeMismatch(std::string(what) + ": expected a (C, H, W) tensor, got " +
                        shape_string(t.shape()));
  }
}

}  // namespace

int ParameterSet::add(std::string name, std::vector<int> shape) {
  if (find(name)) throw InvalidArgument("duplicate parameter name " + name);
  names_.push_back(std::move(name));
  values_.emplace_back(std::move(shape));
  return count() - 1;
}

std::size_t ParameterSet::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

std::optional<int> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::vector<Tensor> ParameterSet::zero_gradients() const {
  std::vector<Tensor> grads;
  grads.reserve(values_.size());
  for (const Tensor& t : values_) grads.push_back(Tensor::zeros_like(t));
  return grads;
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(ParameterSet& params, const std::string& name, Conv2dSpec spec) : spec_(spec) {
  if (spec.in_channels < 1 || spec.out_channels < 1 || spec.kernel_h < 1 || spec.kernel_w < 1 ||
      spec.stride < 1 || spec.pad_h < 0 || spec.pad_w < 0) {
    throw InvalidArgument("invalid convolution spec for " + name);
  }
  weight_ = params.add(name + ".weight", {spec.out_channels,
                                          spec.in_channels * spec.kernel_h * spec.kernel_w});
  bias_ = params.add(name + ".bias", {spec.out_channels});
}

void Conv2d::init(ParameterSet& params, Rng& rng) const {
  const int fan_in = spec_.in_channels * spec_.kernel_h * spec_.kernel_w;
  const double bound = std::sqrt(6.0 / fan_in);
  for (double& w : params.value(weight_).values()) w = rng.uniform(-bound, bound);
  params.value(bias_).fill(0.0);
}

void Conv2d::init_identity(ParameterSet& params) const {
  if (spec_.in_channels != spec_.out_channels || spec_.kernel_h % 2 == 0 ||
      spec_.kernel_w % 2 == 0) {
    throw InvalidArgument("identity init needs square channel map and odd kernel");
  }
  Tensor& w = params.value(weight_);
  w.fill(0.0);
  const int k = spec_.kernel_h * spec_.kernel_w;
  const int center = (spec_.kernel_h / 2) * spec_.kernel_w + spec_.kernel_w / 2;
  for (int c = 0; c < spec_.out_channels; ++c) w.at(c, c * k + center) = 1.0;
  params.value(bias_).fill(0.0);
}

Tensor Conv2d::forward(const ParameterSet& params, const Tensor& x, Cache& cache) const {
  require_rank3(x, "conv2d input");
  if (x.dim(0) != spec_.in_channels) {
    throw ShapeMismatch("conv2d input channels: expected " + std::to_string(spec_.in_channels) +
                        ", got " + std::to_string(x.dim(0)));
  }
  const int in_h = x.dim(1);
  const int in_w = x.dim(2);
  const int oh = out_h(in_h);
  const int ow = out_w(in_w);
  if (oh < 1 || ow < 1) throw ShapeMismatch("conv2d input smaller than kernel");
  const int kh = spec_.kernel_h;
  const int kw = spec_.kernel_w;
  const int k = spec_.in_channels * kh * kw;
  const int n = oh * ow;

  cache.in_h = in_h;
  cache.in_w = in_w;
  cache.columns = Tensor({k, n});
  double* cols = cache.columns.data();
  for (int c = 0; c < spec_.in_channels; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        double* row = cols + static_cast<std::size_t>((c * kh + i) * kw + j) * n;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * spec_.stride - spec_.pad_h + i;
          double* dst = row + oy * ow;
          if (iy < 0 || iy >= in_h) {
            std::fill(dst, dst + ow, 0.0);
            continue;
          }
          const double* src = x.data() + (static_cast<std::size_t>(c) * in_h + iy) * in_w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * spec_.stride - spec_.pad_w + j;
            dst[ox] = (ix >= 0 && ix < in_w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }

  Tensor y({spec_.out_channels, oh, ow});
  ConstMatrixMap w(params.value(weight_).data(), spec_.out_channels, k);
  ConstMatrixMap colm(cols, k, n);
  MatrixMap out(y.data(), spec_.out_channels, n);
  out.noalias() = w * colm;
  const Tensor& b = params.value(bias_);
  for (int o = 0; o < spec_.out_channels; ++o) out.row(o).array() += b[static_cast<std::size_t>(o)];
  return y;
}

Tensor Conv2d::backward(const ParameterSet& params, const Cache& cache, const Tensor& dy,
                        Gradients& grads) const {
  const int oh = out_h(cache.in_h);
  const int ow = out_w(cache.in_w);
  require_shape(dy, {spec_.out_channels, oh, ow}, "conv2d output gradient");
  const int kh = spec_.kernel_h;
  const int kw = spec_.kernel_w;
  const int k = spec_.in_channels * kh * kw;
  const int n = oh * ow;

  ConstMatrixMap dym(dy.data(), spec_.out_channels, n);
  ConstMatrixMap colm(cache.columns.data(), k, n);
  MatrixMap dw(grads[static_cast<std::size_t>(weight_)].data(), spec_.out_channels, k);
  dw.noalias() += dym * colm.transpose();
  Tensor& db = grads[static_cast<std::size_t>(bias_)];
  for (int o = 0; o < spec_.out_channels; ++o) db[static_cast<std::size_t>(o)] += dym.row(o).sum();

  ConstMatrixMap w(params.value(weight_).data(), spec_.out_channels, k);
  RowMatrix dcols = w.transpose() * dym;

  Tensor dx({spec_.in_channels, cache.in_h, cache.in_w});
  for (int c = 0; c < spec_.in_channels; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const double* row = dcols.data() + static_cast<std::size_t>((c * kh + i) * kw + j) * n;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * spec_.stride - spec_.pad_h + i;
          if (iy < 0 || iy >= cache.in_h) continue;
          double* dst = dx.data() + (static_cast<std::size_t>(c) * cache.in_h + iy) * cache.in_w;
          const double* src = row + oy * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * spec_.stride - spec_.pad_w + j;
            if (ix >= 0 && ix < cache.in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

Linear::Linear(ParameterSet& params, const std::string& name, int in, int out)
    : in_(in), out_(out) {
  if (in < 1 || out < 1) throw InvalidArgument("invalid linear layer size for " + name);
  weight_ = params.add(name + ".weight", {out, in});
  bias_ = params.add(name + ".bias", {out});
}

void Linear::init(ParameterSet& params, Rng& rng) const {
  const double bound = std::sqrt(6.0 / in_);
  for (double& w : params.value(weight_).values()) w = rng.uniform(-bound, bound);
  params.value(bias_).fill(0.0);
}

std::vector<double> Linear::forward(const ParameterSet& params, std::span<const double> x) const {
  if (static_cast<int>(x.size()) != in_) throw ShapeMismatch("linear input size");
  const Tensor& w = params.value(weight_);
  const Tensor& b = params.value(bias_);
  std::vector<double> y(static_cast<std::size_t>(out_));
  for (int o = 0; o < out_; ++o) {
    double acc = b[static_cast<std::size_t>(o)];
    for (int i = 0; i < in_; ++i) acc += w.at(o, i) * x[static_cast<std::size_t>(i)];
    y[static_cast<std::size_t>(o)] = acc;
  }
  return y;
}

std::vector<double> Linear::backward(const ParameterSet& params, std::span<const double> x,
                                     std::span<const double> dy, Gradients& grads) const {
  const Tensor& w = params.value(weight_);
  Tensor& dw = grads[static_cast<std::size_t>(weight_)];
  Tensor& db = grads[static_cast<std::size_t>(bias_)];
  std::vector<double> dx(static_cast<std::size_t>(in_), 0.0);
  for (int o = 0; o < out_; ++o) {
    const double g = dy[static_cast<std::size_t>(o)];
    db[static_cast<std::size_t>(o)] += g;
    for (int i = 0; i < in_; ++i) {
      dw.at(o, i) += g * x[static_cast<std::size_t>(i)];
      dx[static_cast<std::size_t>(i)] += g * w.at(o, i);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(y[i] > 0.0)) dx[i] = 0.0;
  }
  return dx;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = sigmoid(v);
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (1.0 - y[i]);
  return dx;
}

Tensor softmax_channels(const Tensor& logits) {
  require_rank3(logits, "softmax input");
  const int k = logits.dim(0);
  const std::size_t plane = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
  Tensor p(logits.shape());
  for (std::size_t px = 0; px < plane; ++px) {
    double mx = logits[px];
    for (int c = 1; c < k; ++c) mx = std::max(mx, logits[c * plane + px]);
    double sum = 0.0;
    for (int c = 0; c < k; ++c) {
      const double e = std::exp(logits[c * plane + px] - mx);
      p[c * plane + px] = e;
      sum += e;
    }
    for (int c = 0; c < k; ++c) p[c * plane + px] /= sum;
  }
  return p;
}

Tensor softmax_channels_backward(const Tensor& probs, const Tensor& dprobs) {
  require_shape(dprobs, probs.shape(), "softmax output gradient");
  const int k = probs.dim(0);
  const std::size_t plane = static_cast<std::size_t>(probs.dim(1)) * probs.dim(2);
  Tensor dx(probs.shape());
  for (std::size_t px = 0; px < plane; ++px) {
    double dot = 0.0;
    for (int c = 0; c < k; ++c) dot += probs[c * plane + px] * dprobs[c * plane + px];
    for (int c = 0; c < k; ++c) {
      dx[c * plane + px] = probs[c * plane + px] * (dprobs[c * plane + px] - dot);
    }
  }
  return dx;
}

Tensor column_max(const Tensor& x, std::vector<int>& argmax) {
  require_rank3(x, "column max input");
  const int c_n = x.dim(0);
  const int h_n = x.dim(1);
  const int w_n = x.dim(2);
  Tensor y({c_n, w_n});
  argmax.assign(static_cast<std::size_t>(c_n) * w_n, 0);
  for (int c = 0; c < c_n; ++c) {
    for (int w = 0; w < w_n; ++w) {
      int best = 0;
      double best_v = x.at(c, 0, w);
      for (int h = 1; h < h_n; ++h) {
        const double v = x.at(c, h, w);
        if (v > best_v) {
          best_v = v;
          best = h;
        }
      }
      y.at(c, w) = best_v;
      argmax[static_cast<std::size_t>(c) * w_n + w] = best;
    }
  }
  return y;
}

Tensor column_max_backward(const std::vector<int>& argmax, const std::vector<int>& in_shape,
                           const Tensor& dy) {
  const int c_n = in_shape[0];
  const int w_n = in_shape[2];
  require_shape(dy, {c_n, w_n}, "column max output gradient");
  Tensor dx(in_shape);
  for (int c = 0; c < c_n; ++c) {
    for (int w = 0; w < w_n; ++w) {
      dx.at(c, argmax[static_cast<std::size_t>(c) * w_n + w], w) += dy.at(c, w);
    }
  }
  return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank3(a, "concat input");
  require_rank3(b, "concat input");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw ShapeMismatch("concat: spatial sizes differ " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
  Tensor y({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.values().begin(), a.values().end(), y.data());
  std::copy(b.values().begin(), b.values().end(), y.data() + a.size());
  return y;
}

}  // namespace lanebev
