// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "rdpb/tensor.hpp"

namespace rdpb {

enum class Primitive {
  kAdd,
  kSub,
  kMul,
  kMatmul,
  kRelu,
  kSigmoid,
  kExp,
  kLog,
  kSum,
  kMean,
  kSquare,
  kLogSoftmax,
  kAddBias,
  kClamp,
};

std::string_view primitive_name(Primitive op);

struct PrimitiveArgs {
  /// Reduction axis for kSum/kMean; -1 reduces everything to a scalar.
  int axis = -1;
  /// Bounds for kClamp.
  double lo = 0.0;
  double hi = 0.0;
};

/// Ordered log of primitive applications for one forward pass. Entries are
/// appended in execution order, so every input precedes its consumers;
/// `backward` walks them in exact reverse order and then resets the log.
/// One record per thread: see `current_record()`.
class ComputationRecord {
 public:
  Tensor apply(Primitive op, std::span<const Tensor> inputs,
               const PrimitiveArgs& args = {});

  void backward(const Tensor& loss);

  /// Drops all entries; tensors produced so far can no longer be
  /// differentiated through.
  void clear();

  std::size_t size() const { return entries_.size(); }
  std::uint64_t generation() const { return generation_; }

 private:
  struct Entry {
    Primitive op;
    PrimitiveArgs args;
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::shared_ptr<detail::TensorNode> output;
  };

  static void propagate(const Entry& e);

  std::vector<Entry> entries_;
  std::uint64_t generation_ = 1;
};

ComputationRecord& current_record();

/// While alive, primitives on this thread compute values without recording.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Tensor apply_primitive(Primitive op, std::span<const Tensor> inputs,
                       const PrimitiveArgs& args = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sum(const Tensor& a, int axis = -1);
Tensor mean(const Tensor& a, int axis = -1);
Tensor square(const Tensor& a);
/// Row-wise over the last axis.
Tensor log_softmax(const Tensor& a);
/// x (rows, n) plus bias of shape (n) or (1, n), broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor clamp(const Tensor& a, double lo, double hi);

/// Multiplies by a constant (non-differentiable) scalar.
Tensor scale(const Tensor& a, double factor);

/// Gradient of a scalar loss into every tensor that requires grad, using the
/// current thread's record.
void backward(const Tensor& loss);

/// max_i |analytic_i - central_i| / max(1, |analytic_i|) for a scalar f at x.
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double eps);

/// Same measure over every coordinate of several parameter tensors, which are
/// perturbed in place and restored. `f` must be deterministic between calls.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                  double eps);

}  // namespace rdpb
