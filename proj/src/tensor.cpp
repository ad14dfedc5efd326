#include "lanebev/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "lanebev/errors.hpp"

namespace lanebev {

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (int d : shape_) {
    if (d < 0) throw InvalidArgument("negative tensor dimension in " + shape_string(shape_));
    n *= static_cast<std::size_t>(d);
  }
  data_.assign(n, fill);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!same_shape(other)) {
    throw ShapeMismatch("tensor add: " + shape_string(shape_) + " vs " + shape_string(other.shape_));
  }
  std::transform(data_.begin(), data_.end(), other.data_.begin(), data_.begin(), std::plus<>());
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void require_shape(const Tensor& t, const std::vector<int>& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeMismatch(std::string(what) + ": expected " + shape_string(expected) + ", got " +
                        shape_string(t.shape()));
  }
}

}  // namespace lanebev
