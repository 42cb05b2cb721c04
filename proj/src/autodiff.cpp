// SPDX-License-Identifier: Apache-2.0
#include "rdpb/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rdpb/errors.hpp"
#include "rdpb/kernels.hpp"

namespace rdpb {
namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

constexpr std::ptrdiff_t kParallelThreshold = 1 << 15;

thread_local bool t_grad_enabled = true;

template <typename Fn>
void for_each_index(std::size_t n, Fn&& fn) {
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (count > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
}

[[noreturn]] void shape_error(Primitive op, const std::vector<NodePtr>& in) {
  std::string msg = std::string(primitive_name(op)) + ": incompatible shapes";
  for (const auto& n : in) msg += " " + shape_string(n->shape);
  throw DimensionError(msg);
}

std::size_t expected_arity(Primitive op) {
  switch (op) {
    case Primitive::kAdd:
    case Primitive::kSub:
    case Primitive::kMul:
    case Primitive::kMatmul:
    case Primitive::kAddBias:
      return 2;
    default:
      return 1;
  }
}

std::size_t last_extent(const Shape& s) { return s.empty() ? 1 : s.back(); }

std::vector<double>& grad_of(TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.values.size(), 0.0);
  return n.grad;
}

kernels::ConstMatrix as_matrix(const TensorNode& n) {
  return {n.values.data(), n.shape[0], n.shape[1], n.shape[1]};
}

// Computes the forward value of `op`; validates shapes.
NodePtr forward(Primitive op, const std::vector<NodePtr>& in,
                const PrimitiveArgs& args) {
  auto out = std::make_shared<TensorNode>();
  const TensorNode& a = *in[0];
  switch (op) {
    case Primitive::kAdd:
    case Primitive::kSub:
    case Primitive::kMul: {
      const TensorNode& b = *in[1];
      if (a.shape != b.shape) shape_error(op, in);
      out->shape = a.shape;
      out->values.resize(a.values.size());
      const double* x = a.values.data();
      const double* y = b.values.data();
      double* r = out->values.data();
      if (op == Primitive::kAdd) {
        for_each_index(a.values.size(), [&](std::size_t i) { r[i] = x[i] + y[i]; });
      } else if (op == Primitive::kSub) {
        for_each_index(a.values.size(), [&](std::size_t i) { r[i] = x[i] - y[i]; });
      } else {
        for_each_index(a.values.size(), [&](std::size_t i) { r[i] = x[i] * y[i]; });
      }
      break;
    }
    case Primitive::kMatmul: {
      const TensorNode& b = *in[1];
      if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0]) {
        shape_error(op, in);
      }
      out->shape = {a.shape[0], b.shape[1]};
      out->values.assign(a.shape[0] * b.shape[1], 0.0);
      kernels::gemm(kernels::Trans::kNo, kernels::Trans::kNo, 1.0, as_matrix(a),
                    as_matrix(b), 0.0,
                    {out->values.data(), a.shape[0], b.shape[1], b.shape[1]});
      break;
    }
    case Primitive::kAddBias: {
      const TensorNode& b = *in[1];
      const std::size_t n = last_extent(a.shape);
      const bool bias_ok =
          (b.shape.size() == 1 && b.shape[0] == n) ||
          (b.shape.size() == 2 && b.shape[0] == 1 && b.shape[1] == n);
      if (a.shape.size() != 2 || !bias_ok) shape_error(op, in);
      out->shape = a.shape;
      out->values.resize(a.values.size());
      const std::size_t rows = a.shape[0];
      for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.values.data() + r * n;
        double* y = out->values.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) y[j] = x[j] + b.values[j];
      }
      break;
    }
    case Primitive::kRelu:
    case Primitive::kSigmoid:
    case Primitive::kExp:
    case Primitive::kLog:
    case Primitive::kSquare:
    case Primitive::kClamp: {
      out->shape = a.shape;
      out->values.resize(a.values.size());
      const double* x = a.values.data();
      double* r = out->values.data();
      switch (op) {
        case Primitive::kRelu:
          for_each_index(a.values.size(),
                         [&](std::size_t i) { r[i] = x[i] > 0.0 || std::isnan(x[i]) ? x[i] : 0.0; });
          break;
        case Primitive::kSigmoid:
          for_each_index(a.values.size(), [&](std::size_t i) {
            r[i] = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i]))
                               : std::exp(x[i]) / (1.0 + std::exp(x[i]));
          });
          break;
        case Primitive::kExp:
          for_each_index(a.values.size(), [&](std::size_t i) { r[i] = std::exp(x[i]); });
          break;
        case Primitive::kLog:
          for (std::size_t i = 0; i < a.values.size(); ++i) {
            if (x[i] <= 0.0) {  // NaN flows through to the loss check
              throw DomainError("log: non-positive input " + std::to_string(x[i]) +
                                " at index " + std::to_string(i));
            }
            r[i] = std::log(x[i]);
          }
          break;
        case Primitive::kSquare:
          for_each_index(a.values.size(), [&](std::size_t i) { r[i] = x[i] * x[i]; });
          break;
        default:
          if (!(args.lo <= args.hi)) {
            throw ContractError("clamp: lower bound exceeds upper bound");
          }
          for_each_index(a.values.size(),
                         [&](std::size_t i) { r[i] = std::clamp(x[i], args.lo, args.hi); });
          break;
      }
      break;
    }
    case Primitive::kSum:
    case Primitive::kMean: {
      const bool is_mean = op == Primitive::kMean;
      if (args.axis == -1) {
        if (a.values.empty()) shape_error(op, in);
        double s = 0.0;
        for (double v : a.values) s += v;
        out->shape = {1};
        out->values = {is_mean ? s / static_cast<double>(a.values.size()) : s};
      } else {
        if (a.shape.size() != 2 || (args.axis != 0 && args.axis != 1)) {
          shape_error(op, in);
        }
        const std::size_t rows = a.shape[0];
        const std::size_t cols = a.shape[1];
        if (args.axis == 0) {
          out->shape = {1, cols};
          out->values.assign(cols, 0.0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < cols; ++j)
              out->values[j] += a.values[r * cols + j];
          if (is_mean)
            for (double& v : out->values) v /= static_cast<double>(rows);
        } else {
          out->shape = {rows, 1};
          out->values.assign(rows, 0.0);
          for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += a.values[r * cols + j];
            out->values[r] = is_mean ? s / static_cast<double>(cols) : s;
          }
        }
      }
      break;
    }
    case Primitive::kLogSoftmax: {
      if (a.shape.empty() || a.shape.size() > 2 || a.values.empty()) {
        shape_error(op, in);
      }
      out->shape = a.shape;
      out->values.resize(a.values.size());
      const std::size_t n = last_extent(a.shape);
      const std::size_t rows = a.values.size() / n;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.values.data() + r * n;
        double* y = out->values.data() + r * n;
        const double mx = *std::max_element(x, x + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += std::exp(x[j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lse;
      }
      break;
    }
  }
  return out;
}

}  // namespace

std::string_view primitive_name(Primitive op) {
  switch (op) {
    case Primitive::kAdd: return "add";
    case Primitive::kSub: return "sub";
    case Primitive::kMul: return "mul";
    case Primitive::kMatmul: return "matmul";
    case Primitive::kRelu: return "relu";
    case Primitive::kSigmoid: return "sigmoid";
    case Primitive::kExp: return "exp";
    case Primitive::kLog: return "log";
    case Primitive::kSum: return "sum";
    case Primitive::kMean: return "mean";
    case Primitive::kSquare: return "square";
    case Primitive::kLogSoftmax: return "log_softmax";
    case Primitive::kAddBias: return "broadcast_add_bias";
    case Primitive::kClamp: return "clamp";
  }
  return "unknown";
}

Tensor ComputationRecord::apply(Primitive op, std::span<const Tensor> inputs,
                                const PrimitiveArgs& args) {
  if (inputs.size() != expected_arity(op)) {
    throw ContractError(std::string(primitive_name(op)) + ": expected " +
                        std::to_string(expected_arity(op)) + " inputs, got " +
                        std::to_string(inputs.size()));
  }
  std::vector<NodePtr> in;
  in.reserve(inputs.size());
  bool needs_grad = false;
  for (const Tensor& t : inputs) {
    in.push_back(t.node());
    needs_grad = needs_grad || t.requires_grad();
  }
  NodePtr out = forward(op, in, args);
  if (needs_grad && t_grad_enabled) {
    out->requires_grad = true;
    out->recorded = true;
    out->record_generation = generation_;
    entries_.push_back(Entry{op, args, std::move(in), out});
  }
  return Tensor(std::move(out));
}

void ComputationRecord::propagate(const Entry& e) {
  const std::vector<double>& g = e.output->grad;
  TensorNode& a = *e.inputs[0];
  const std::size_t n = e.output->values.size();
  switch (e.op) {
    case Primitive::kAdd:
    case Primitive::kSub: {
      TensorNode& b = *e.inputs[1];
      if (a.requires_grad) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad) {
        auto& gb = grad_of(b);
        const double sign = e.op == Primitive::kAdd ? 1.0 : -1.0;
        for (std::size_t i = 0; i < n; ++i) gb[i] += sign * g[i];
      }
      break;
    }
    case Primitive::kMul: {
      TensorNode& b = *e.inputs[1];
      if (a.requires_grad) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * b.values[i];
      }
      if (b.requires_grad) {
        auto& gb = grad_of(b);
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * a.values[i];
      }
      break;
    }
    case Primitive::kMatmul: {
      TensorNode& b = *e.inputs[1];
      const std::size_t m = a.shape[0];
      const std::size_t k = a.shape[1];
      const std::size_t cols = b.shape[1];
      const kernels::ConstMatrix gm{g.data(), m, cols, cols};
      if (a.requires_grad) {
        auto& ga = grad_of(a);
        kernels::gemm(kernels::Trans::kNo, kernels::Trans::kYes, 1.0, gm,
                      as_matrix(b), 1.0, {ga.data(), m, k, k});
      }
      if (b.requires_grad) {
        auto& gb = grad_of(b);
        kernels::gemm(kernels::Trans::kYes, kernels::Trans::kNo, 1.0,
                      as_matrix(a), gm, 1.0, {gb.data(), k, cols, cols});
      }
      break;
    }
    case Primitive::kAddBias: {
      TensorNode& b = *e.inputs[1];
      if (a.requires_grad) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad) {
        auto& gb = grad_of(b);
        const std::size_t cols = b.values.size();
        const std::size_t rows = n / cols;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < cols; ++j) gb[j] += g[r * cols + j];
      }
      break;
    }
    case Primitive::kRelu: {
      auto& ga = grad_of(a);
      for (std::size_t i = 0; i < n; ++i)
        if (a.values[i] > 0.0) ga[i] += g[i];
      break;
    }
    case Primitive::kSigmoid: {
      auto& ga = grad_of(a);
      const auto& y = e.output->values;
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    }
    case Primitive::kExp: {
      auto& ga = grad_of(a);
      const auto& y = e.output->values;
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i];
      break;
    }
    case Primitive::kLog: {
      auto& ga = grad_of(a);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / a.values[i];
      break;
    }
    case Primitive::kSquare: {
      auto& ga = grad_of(a);
      for (std::size_t i = 0; i < n; ++i) ga[i] += 2.0 * g[i] * a.values[i];
      break;
    }
    case Primitive::kClamp: {
      auto& ga = grad_of(a);
      for (std::size_t i = 0; i < n; ++i) {
        const double x = a.values[i];
        if (x >= e.args.lo && x <= e.args.hi) ga[i] += g[i];
      }
      break;
    }
    case Primitive::kSum:
    case Primitive::kMean: {
      auto& ga = grad_of(a);
      const bool is_mean = e.op == Primitive::kMean;
      if (e.args.axis == -1) {
        const double d = is_mean ? g[0] / static_cast<double>(a.values.size()) : g[0];
        for (double& v : ga) v += d;
      } else {
        const std::size_t rows = a.shape[0];
        const std::size_t cols = a.shape[1];
        if (e.args.axis == 0) {
          const double f = is_mean ? 1.0 / static_cast<double>(rows) : 1.0;
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += f * g[j];
        } else {
          const double f = is_mean ? 1.0 / static_cast<double>(cols) : 1.0;
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += f * g[r];
        }
      }
      break;
    }
    case Primitive::kLogSoftmax: {
      auto& ga = grad_of(a);
      const auto& y = e.output->values;
      const std::size_t cols = last_extent(a.shape);
      const std::size_t rows = n / cols;
      for (std::size_t r = 0; r < rows; ++r) {
        double gs = 0.0;
        for (std::size_t j = 0; j < cols; ++j) gs += g[r * cols + j];
        for (std::size_t j = 0; j < cols; ++j) {
          const std::size_t i = r * cols + j;
          ga[i] += g[i] - std::exp(y[i]) * gs;
        }
      }
      break;
    }
  }
}

void ComputationRecord::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_string(loss.shape()));
  }
  TensorNode& root = *loss.node();
  if (!root.requires_grad) {
    clear();
    return;
  }
  if (!root.recorded) {
    grad_of(root)[0] += 1.0;
    clear();
    return;
  }
  if (root.record_generation != generation_ || entries_.empty()) {
    throw StateError(
        "backward: loss is not part of the live computation record "
        "(backward already ran or the record was cleared; re-run forward)");
  }
  grad_of(root)[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    propagate(*it);
  }
  clear();
}

void ComputationRecord::clear() {
  entries_.clear();
  ++generation_;
}

ComputationRecord& current_record() {
  thread_local ComputationRecord record;
  return record;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor apply_primitive(Primitive op, std::span<const Tensor> inputs,
                       const PrimitiveArgs& args) {
  return current_record().apply(op, inputs, args);
}

namespace {
Tensor unary(Primitive op, const Tensor& a, const PrimitiveArgs& args = {}) {
  const Tensor in[] = {a};
  return apply_primitive(op, in, args);
}
Tensor binary(Primitive op, const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  return apply_primitive(op, in);
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(Primitive::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(Primitive::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(Primitive::kMul, a, b); }
Tensor matmul(const Tensor& a, const Tensor& b) { return binary(Primitive::kMatmul, a, b); }
Tensor relu(const Tensor& a) { return unary(Primitive::kRelu, a); }
Tensor sigmoid(const Tensor& a) { return unary(Primitive::kSigmoid, a); }
Tensor exp(const Tensor& a) { return unary(Primitive::kExp, a); }
Tensor log(const Tensor& a) { return unary(Primitive::kLog, a); }
Tensor sum(const Tensor& a, int axis) {
  return unary(Primitive::kSum, a, PrimitiveArgs{.axis = axis});
}
Tensor mean(const Tensor& a, int axis) {
  return unary(Primitive::kMean, a, PrimitiveArgs{.axis = axis});
}
Tensor square(const Tensor& a) { return unary(Primitive::kSquare, a); }
Tensor log_softmax(const Tensor& a) { return unary(Primitive::kLogSoftmax, a); }
Tensor add_bias(const Tensor& x, const Tensor& bias) {
  return binary(Primitive::kAddBias, x, bias);
}
Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(Primitive::kClamp, a, PrimitiveArgs{.lo = lo, .hi = hi});
}

Tensor scale(const Tensor& a, double factor) {
  return mul(a, Tensor::full(a.shape(), factor));
}

void backward(const Tensor& loss) { current_record().backward(loss); }

namespace {

double scalar_value(const Tensor& y) {
  if (y.size() != 1) {
    throw ContractError("grad_check: function must be scalar-valued, got shape " +
                        shape_string(y.shape()));
  }
  const double v = y.item();
  if (!std::isfinite(v)) throw DomainError("grad_check: f(x) is not finite");
  return v;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps) {
  Tensor p = x.detach();
  p.set_requires_grad(true);
  Tensor params[] = {p};
  return grad_check([&] { return f(p); }, params, eps);
}

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                  double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  for (Tensor& p : params) p.zero_grad();
  current_record().clear();
  const Tensor y = f();
  scalar_value(y);
  backward(y);

  double worst = 0.0;
  NoGradGuard no_grad;
  for (Tensor& p : params) {
    const std::vector<double> analytic = p.grad();
    std::span<double> v = p.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + eps;
      const double fp = scalar_value(f());
      v[i] = orig - eps;
      const double fm = scalar_value(f());
      v[i] = orig;
      worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2.0 * eps)));
    }
  }
  return worst;
}

}  // namespace rdpb
