#include "fedzo/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "fedzo/error.hpp"

namespace fedzo {

std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(std::span<const std::size_t> shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_product(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

std::size_t Tensor::slice_size() const {
  if (shape_.empty()) return 1;
  return shape_product(std::span(shape_).subspan(1));
}

std::span<const double> Tensor::slice(std::size_t i) const {
  const std::size_t s = slice_size();
  return std::span<const double>(data_).subspan(i * s, s);
}

std::span<double> Tensor::slice(std::size_t i) {
  const std::size_t s = slice_size();
  return std::span<double>(data_).subspan(i * s, s);
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const& {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) && {
  return Tensor(std::move(shape), std::move(data_));
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace fedzo
