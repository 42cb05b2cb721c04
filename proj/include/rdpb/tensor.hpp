// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rdpb {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  // Set for tensors produced by a recorded primitive.
  std::uint64_t record_generation = 0;
  bool recorded = false;
};

}  // namespace detail

/// Dense row-major array of doubles. Copies share storage (handle semantics);
/// use `clone()` for a deep copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->values.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return node_->values; }
  /// In-place access for initialization and optimizer updates of leaf
  /// tensors. Throws StateError for tensors produced by a recorded primitive.
  std::span<double> mutable_values();

  double item() const;
  double at(std::size_t i) const { return node_->values[i]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient; zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  std::span<const double> grad_view() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  Tensor clone() const;
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node);
  friend class ComputationRecord;

  std::shared_ptr<detail::TensorNode> node_;
};

bool all_finite(std::span<const double> v);

}  // namespace rdpb
