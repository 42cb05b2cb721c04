// SPDX-License-Identifier: Apache-2.0
#include "rdpb/tensor.hpp"

#include <cmath>
#include <sstream>

#include "rdpb/errors.hpp"

namespace rdpb {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

Tensor::Tensor() : node_(std::make_shared<detail::TensorNode>()) {
  node_->shape = {0};
}

Tensor::Tensor(std::shared_ptr<detail::TensorNode> node)
    : node_(std::move(node)) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::TensorNode>()) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

std::size_t Tensor::rows() const {
  return rank() == 2 ? node_->shape[0] : 1;
}

std::size_t Tensor::cols() const {
  return rank() == 0 ? 1 : node_->shape.back();
}

std::span<double> Tensor::mutable_values() {
  if (node_->recorded) {
    throw StateError("tensor: values of a recorded intermediate are immutable");
  }
  return node_->values;
}

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item: tensor of shape " + shape_string(shape()) +
                         " is not a scalar");
  }
  return node_->values[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return node_->values[row * cols() + col];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

Tensor Tensor::clone() const {
  Tensor t(node_->shape, node_->values, node_->requires_grad);
  return t;
}

Tensor Tensor::detach() const {
  return Tensor(node_->shape, node_->values, false);
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace rdpb
