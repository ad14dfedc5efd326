#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace lanebev {

/// Dense row-major array of doubles. Feature maps are stored planar,
/// i.e. a rank-3 tensor is indexed (channel, row, column).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int i, int j) { return data_[offset(i, j)]; }
  double at(int i, int j) const { return data_[offset(i, j)]; }
  double& at(int c, int h, int w) { return data_[offset(c, h, w)]; }
  double at(int c, int h, int w) const { return data_[offset(c, h, w)]; }

  void fill(double v);
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

 private:
  std::size_t offset(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) +
           static_cast<std::size_t>(j);
  }
  std::size_t offset(int c, int h, int w) const {
    return (static_cast<std::size_t>(c) * static_cast<std::size_t>(shape_[1]) +
            static_cast<std::size_t>(h)) *
               static_cast<std::size_t>(shape_[2]) +
           static_cast<std::size_t>(w);
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<int>& shape);

/// Throws ShapeMismatch naming `what` when the shapes differ.
void require_shape(const Tensor& t, const std::vector<int>& expected, const char* what);

}  // namespace lanebev
