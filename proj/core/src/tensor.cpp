#include "marginlab/tensor.hpp"

#include <cmath>
#include <numeric>
#include <utility>

#include "marginlab/errors.hpp"

namespace marginlab {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  if (shape_.empty() || shape_.size() > 4) {
    throw ValidationError("tensor rank must be 1..4");
  }
  for (std::size_t d : shape_) {
    if (d == 0) throw ValidationError("tensor dimensions must be nonzero");
  }
  data_.assign(shape_product(shape_), 0.0);
}

Tensor Tensor::from_values(std::vector<std::size_t> shape,
                           std::vector<double> values) {
  Tensor t(std::move(shape));
  if (values.size() != t.size()) {
    throw ValidationError("tensor value count does not match shape");
  }
  t.data_ = std::move(values);
  return t;
}

void Tensor::fill(double value) {
  for (double& x : data_) x = value;
}

void Tensor::scale(double factor) {
  for (double& x : data_) x *= factor;
}

void Tensor::axpy(double factor, const Tensor& other) {
  if (!same_shape(other)) throw ValidationError("axpy shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) {
    data_[i] += factor * other.data_[i];
  }
}

double Tensor::frobenius_norm() const {
  double s = 0.0;
  for (double x : data_) s += x * x;
  return std::sqrt(s);
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace marginlab
