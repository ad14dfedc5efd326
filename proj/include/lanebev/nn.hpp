#pragma once

// Differentiable building blocks. Layers own no activations: forward passes
// write what backward needs into caller-provided caches, and backward writes
// into a separate gradient buffer, so one set of weights can serve several
// concurrent inference passes.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lanebev/random.hpp"
#include "lanebev/tensor.hpp"

namespace lanebev {

class ParameterSet {
 public:
  int add(std::string name, std::vector<int> shape);

  int count() const noexcept { return static_cast<int>(values_.size()); }
  std::size_t scalar_count() const noexcept;

  Tensor& value(int id) { return values_.at(static_cast<std::size_t>(id)); }
  const Tensor& value(int id) const { return values_.at(static_cast<std::size_t>(id)); }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(std::string_view name) const;

  /// Zero-filled tensors matching every parameter's shape.
  std::vector<Tensor> zero_gradients() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

using Gradients = std::vector<Tensor>;

struct Conv2dSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;
  int pad_h = 1;
  int pad_w = 1;
};

/// 2D convolution over planar (C, H, W) tensors, lowered to a matrix product.
class Conv2d {
 public:
  struct Cache {
    Tensor columns;
    int in_h = 0;
    int in_w = 0;
  };

  Conv2d() = default;
  Conv2d(ParameterSet& params, const std::string& name, Conv2dSpec spec);

  void init(ParameterSet& params, Rng& rng) const;
  /// Sets a centered identity kernel (requires in == out and odd kernels).
  void init_identity(ParameterSet& params) const;

  Tensor forward(const ParameterSet& params, const Tensor& x, Cache& cache) const;
  Tensor backward(const ParameterSet& params, const Cache& cache, const Tensor& dy,
                  Gradients& grads) const;

  const Conv2dSpec& spec() const noexcept { return spec_; }
  int weight_id() const noexcept { return weight_; }
  int bias_id() const noexcept { return bias_; }
  int out_h(int in_h) const { return (in_h + 2 * spec_.pad_h - spec_.kernel_h) / spec_.stride + 1; }
  int out_w(int in_w) const { return (in_w + 2 * spec_.pad_w - spec_.kernel_w) / spec_.stride + 1; }

 private:
  Conv2dSpec spec_;
  int weight_ = -1;
  int bias_ = -1;
};

/// Fully connected layer on a flat vector.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, int in, int out);

  void init(ParameterSet& params, Rng& rng) const;
  std::vector<double> forward(const ParameterSet& params, std::span<const double> x) const;
  /// Accumulates parameter gradients and returns d(loss)/d(x).
  std::vector<double> backward(const ParameterSet& params, std::span<const double> x,
                               std::span<const double> dy, Gradients& grads) const;

  int in() const noexcept { return in_; }
  int out() const noexcept { return out_; }
  int weight_id() const noexcept { return weight_; }
  int bias_id() const noexcept { return bias_; }

 private:
  int in_ = 0;
  int out_ = 0;
  int weight_ = -1;
  int bias_ = -1;
};

double sigmoid(double x);

Tensor relu(const Tensor& x);
/// `y` is the forward output of relu.
Tensor relu_backward(const Tensor& y, const Tensor& dy);
Tensor sigmoid(const Tensor& x);
/// `y` is the forward output of sigmoid.
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);

/// Normalized exponential along axis 0 of a (K, H, W) tensor.
Tensor softmax_channels(const Tensor& logits);
Tensor softmax_channels_backward(const Tensor& probs, const Tensor& dprobs);

/// Max over the row axis of a (C, H, W) tensor, giving (C, W). `argmax`
/// receives the winning row per (c, w); ties resolve to the lowest row.
Tensor column_max(const Tensor& x, std::vector<int>& argmax);
Tensor column_max_backward(const std::vector<int>& argmax, const std::vector<int>& in_shape,
                           const Tensor& dy);

/// Concatenates planar tensors along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);

}  // namespace lanebev
