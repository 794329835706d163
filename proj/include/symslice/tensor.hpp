#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "symslice/error.hpp"

namespace symslice {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= std::size_t(d);
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs that require grad.
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major double tensor. Copies share the underlying node, so a
/// Tensor behaves like a handle into the computation graph.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    node_->value.assign(shape_size(shape), fill);
    node_->shape = std::move(shape);
    set_requires_grad(requires_grad);
  }

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (values.size() != shape_size(shape)) {
      throw Error(ErrorCode::ShapeMismatch, "data length " + std::to_string(values.size()) +
                                                " does not match shape " + shape_str(shape));
    }
    node_->value = std::move(values);
    node_->shape = std::move(shape);
    set_requires_grad(requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return int(node_->shape.size()); }
  int dim(int i) const { return node_->shape.at(std::size_t(i)); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  /// Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }

  double item() const {
    if (size() != 1) throw Error(ErrorCode::NonScalarLoss, "item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) node_->ensure_grad();
  }

  /// Gradient accumulated by backward(); zeros if nothing flowed here.
  std::span<const double> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { std::fill(node_->ensure_grad().begin(), node_->grad.end(), 0.0); }

  /// Fresh leaf holding a copy of the values.
  Tensor detach(bool requires_grad = false) const {
    return Tensor(shape(), node_->value, requires_grad);
  }

  /// Reverse-mode sweep from this scalar. Accumulates into leaf gradients
  /// and releases the intermediate graph.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                          const char* op, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  if (grad_mode()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    for (auto& in : inputs) n->inputs.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(n));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                                              shape_str(b.shape()));
  }
}

}  // namespace detail

inline void Tensor::backward() const {
  auto& root = node_;
  if (root->value.size() != 1) {
    throw Error(ErrorCode::NonScalarLoss, "backward() needs a scalar, got " + shape_str(root->shape));
  }
  if (root->consumed) throw Error(ErrorCode::GraphConsumed, "backward() already ran on this graph");
  root->consumed = true;
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.get(), 0}};
  std::vector<detail::Node*> visited{root.get()};  // kept sorted
  auto mark = [&](detail::Node* n) {
    auto it = std::lower_bound(visited.begin(), visited.end(), n);
    if (it != visited.end() && *it == n) return false;
    visited.insert(it, n);
    return true;
  };
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node* child = n->inputs[next++].get();
      if (child->requires_grad && !child->inputs.empty() && mark(child)) stack.push_back({child, 0});
      continue;
    }
    order.push_back(n);
    stack.pop_back();
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (detail::Node* n : order) {
    n->backward = nullptr;
    n->inputs.clear();
    if (n != root.get()) std::vector<double>().swap(n->grad);
  }
}

// ---------------------------------------------------------------------------
// Elementwise operators

namespace detail {

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv_from_in_out) {
  std::vector<double> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(x.shape(), std::move(out), {x}, op, [deriv_from_in_out](Node& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    auto& g = src.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * deriv_from_in_out(src.value[i], self.value[i]);
    }
  });
}

}  // namespace detail

/// max(x, 0); the subgradient at 0 is 0.
inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, "sigmoid",
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double out) { return out * (1.0 - out); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double out) { return 1.0 - out * out; });
}

inline Tensor scalar_mul(const Tensor& x, double a) {
  return detail::unary(
      x, "scalar_mul", [a](double v) { return a * v; }, [a](double, double) { return a; });
}

inline Tensor add_scalar(const Tensor& x, double a) {
  return detail::unary(
      x, "add_scalar", [a](double v) { return v + a; }, [](double, double) { return 1.0; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(
      x, "square", [](double v) { return v * v; }, [](double in, double) { return 2.0 * in; });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, "add", [](detail::Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, "sub", [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!in->requires_grad) continue;
      double sign = k == 0 ? 1.0 : -1.0;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, "mul", [](detail::Node& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    if (x.requires_grad) {
      auto& g = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      auto& g = y.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

/// Sum of all entries, as a scalar.
inline Tensor sum(const Tensor& x) {
  auto in = x.data();
  double s = std::accumulate(in.begin(), in.end(), 0.0);
  return detail::make_result(Shape{1}, {s}, {x}, "sum", [](detail::Node& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    auto& g = src.ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

/// Mean absolute difference.
inline Tensor l1_mean(const Tensor& pred, const Tensor& target) {
  detail::require_same_shape(pred, target, "l1_mean");
  const double n = double(pred.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return detail::make_result(Shape{1}, {s / n}, {pred, target}, "l1_mean", [n](detail::Node& self) {
    auto& p = *self.inputs[0];
    auto& t = *self.inputs[1];
    const double g0 = self.grad[0] / n;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double diff = p.value[i] - t.value[i];
      double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      if (p.requires_grad) p.ensure_grad()[i] += g0 * sgn;
      if (t.requires_grad) t.ensure_grad()[i] -= g0 * sgn;
    }
  });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw Error(ErrorCode::ShapeMismatch, "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result(std::move(shape), std::move(out), {x}, "reshape", [](detail::Node& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    auto& g = src.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Concatenation along `axis`; all other dimensions must agree.
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  const Shape& ref = parts[0].shape();
  if (axis < 0 || axis >= int(ref.size())) throw Error(ErrorCode::ShapeMismatch, "concat axis out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != int(ref.size())) throw Error(ErrorCode::ShapeMismatch, "concat rank mismatch");
    for (int i = 0; i < p.rank(); ++i) {
      if (i != axis && p.dim(i) != ref[i]) {
        throw Error(ErrorCode::ShapeMismatch, "concat " + shape_str(p.shape()) + " vs " + shape_str(ref));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= std::size_t(ref[i]);
  for (std::size_t i = std::size_t(axis) + 1; i < ref.size(); ++i) inner *= std::size_t(ref[i]);

  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(std::size_t(p.dim(axis)) * inner);
  const std::size_t row = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  std::vector<double> out(outer * row);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto src = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + o * widths[k], widths[k], out.begin() + o * row + col);
    }
    col += widths[k];
  }
  return detail::make_result(out_shape, std::move(out), parts, "concat",
                             [widths, outer, row](detail::Node& self) {
                               std::size_t col = 0;
                               for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                 auto& in = *self.inputs[k];
                                 if (in.requires_grad) {
                                   auto& g = in.ensure_grad();
                                   for (std::size_t o = 0; o < outer; ++o) {
                                     const double* src = self.grad.data() + o * row + col;
                                     double* dst = g.data() + o * widths[k];
                                     for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
                                   }
                                 }
                                 col += widths[k];
                               }
                             });
}

/// [a, b, ...] -> [b, a, ...].
inline Tensor swap_leading_axes(const Tensor& x) {
  if (x.rank() < 2) throw Error(ErrorCode::ShapeMismatch, "swap_leading_axes needs rank >= 2");
  const std::size_t a = std::size_t(x.dim(0)), b = std::size_t(x.dim(1));
  const std::size_t inner = x.size() / (a * b);
  Shape shape = x.shape();
  std::swap(shape[0], shape[1]);
  std::vector<double> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      std::copy_n(in.begin() + (i * b + j) * inner, inner, out.begin() + (j * a + i) * inner);
  return detail::make_result(std::move(shape), std::move(out), {x}, "swap_leading_axes",
                             [a, b, inner](detail::Node& self) {
                               auto& src = *self.inputs[0];
                               if (!src.requires_grad) return;
                               auto& g = src.ensure_grad();
                               for (std::size_t i = 0; i < a; ++i)
                                 for (std::size_t j = 0; j < b; ++j)
                                   for (std::size_t k = 0; k < inner; ++k)
                                     g[(i * b + j) * inner + k] += self.grad[(j * a + i) * inner + k];
                             });
}

// ---------------------------------------------------------------------------
// Convolution and normalization

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;
}  // namespace detail

/// 2D cross-correlation of x [C_in, H, W] with w [C_out, C_in, k, k] plus bias b [C_out].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "conv2d expects x[C,H,W], w[O,C,k,k], b[O]");
  }
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int O = w.dim(0), k = w.dim(2);
  if (w.dim(1) != C || w.dim(3) != k || b.dim(0) != O) {
    throw Error(ErrorCode::ShapeMismatch, "conv2d weight " + shape_str(w.shape()) + " vs input " +
                                              shape_str(x.shape()));
  }
  if (k % 2 == 0 || stride <= 0 || pad < 0) throw Error(ErrorCode::ShapeMismatch, "conv2d needs odd k, stride > 0");
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw Error(ErrorCode::ShapeMismatch, "conv2d output would be empty");
  const int rows = C * k * k, cols_n = Ho * Wo;

  auto cols = std::make_shared<std::vector<double>>(std::size_t(rows) * cols_n, 0.0);
  auto xv = x.data();
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* dst = cols->data() + std::size_t((c * k + ki) * k + kj) * cols_n;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          const double* src = xv.data() + (std::size_t(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) dst[oy * Wo + ox] = src[ix];
          }
        }
      }
    }
  }

  std::vector<double> out(std::size_t(O) * cols_n);
  {
    detail::ConstRowMap wm(w.data().data(), O, rows);
    detail::ConstRowMap cm(cols->data(), rows, cols_n);
    detail::RowMap om(out.data(), O, cols_n);
    om.noalias() = wm * cm;
    for (int o = 0; o < O; ++o) om.row(o).array() += b[std::size_t(o)];
  }

  return detail::make_result(
      Shape{O, Ho, Wo}, std::move(out), {x, w, b}, "conv2d",
      [=](detail::Node& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        detail::ConstRowMap gout(self.grad.data(), O, cols_n);
        if (wn.requires_grad) {
          detail::RowMap gw(wn.ensure_grad().data(), O, rows);
          detail::ConstRowMap cm(cols->data(), rows, cols_n);
          gw.noalias() += gout * cm.transpose();
        }
        if (bn.requires_grad) {
          auto& gb = bn.ensure_grad();
          // plain loop: Eigen's vectorized sum depends on buffer alignment
          for (int o = 0; o < O; ++o) {
            double acc = 0.0;
            for (int j = 0; j < cols_n; ++j) acc += self.grad[std::size_t(o) * cols_n + j];
            gb[std::size_t(o)] += acc;
          }
        }
        if (xn.requires_grad) {
          detail::RowMat gcols(rows, cols_n);
          detail::ConstRowMap wm(wn.value.data(), O, rows);
          gcols.noalias() = wm.transpose() * gout;
          auto& gx = xn.ensure_grad();
          for (int c = 0; c < C; ++c) {
            for (int ki = 0; ki < k; ++ki) {
              for (int kj = 0; kj < k; ++kj) {
                const double* src = gcols.data() + std::size_t((c * k + ki) * k + kj) * cols_n;
                for (int oy = 0; oy < Ho; ++oy) {
                  int iy = oy * stride - pad + ki;
                  if (iy < 0 || iy >= H) continue;
                  double* dst = gx.data() + (std::size_t(c) * H + iy) * W;
                  for (int ox = 0; ox < Wo; ++ox) {
                    int ix = ox * stride - pad + kj;
                    if (ix >= 0 && ix < W) dst[ix] += src[oy * Wo + ox];
                  }
                }
              }
            }
          }
        }
      });
}

/// Group normalization of x [C, H, W] with per-channel affine gamma/beta.
inline Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  if (x.rank() != 3 || groups <= 0 || x.dim(0) % groups != 0) {
    throw Error(ErrorCode::ShapeMismatch, "group_norm: groups must divide channels of " + shape_str(x.shape()));
  }
  const int C = x.dim(0);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw Error(ErrorCode::ShapeMismatch, "group_norm affine parameters must have shape [C]");
  }
  const std::size_t plane = std::size_t(x.dim(1)) * x.dim(2);
  const std::size_t per_group = plane * std::size_t(C / groups);
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(std::size_t(groups));
  std::vector<double> out(x.size());
  auto xv = x.data();
  for (int g = 0; g < groups; ++g) {
    const std::size_t begin = std::size_t(g) * per_group;
    double mean = 0.0;
    for (std::size_t i = 0; i < per_group; ++i) mean += xv[begin + i];
    mean /= double(per_group);
    double var = 0.0;
    for (std::size_t i = 0; i < per_group; ++i) {
      double dv = xv[begin + i] - mean;
      var += dv * dv;
    }
    var /= double(per_group);
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[std::size_t(g)] = is;
    for (std::size_t i = 0; i < per_group; ++i) {
      std::size_t idx = begin + i;
      std::size_t c = idx / plane;
      (*xhat)[idx] = (xv[idx] - mean) * is;
      out[idx] = gamma[c] * (*xhat)[idx] + beta[c];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta}, "group_norm", [=](detail::Node& self) {
        auto& xn = *self.inputs[0];
        auto& gn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        const auto& gy = self.grad;
        if (gn.requires_grad || bn.requires_grad) {
          auto& gg = gn.ensure_grad();
          auto& gb = bn.ensure_grad();
          for (std::size_t i = 0; i < gy.size(); ++i) {
            std::size_t c = i / plane;
            gg[c] += gy[i] * (*xhat)[i];
            gb[c] += gy[i];
          }
        }
        if (!xn.requires_grad) return;
        auto& gx = xn.ensure_grad();
        const double m = double(per_group);
        for (int g = 0; g < groups; ++g) {
          const std::size_t begin = std::size_t(g) * per_group;
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t i = 0; i < per_group; ++i) {
            std::size_t idx = begin + i;
            double dxhat = gy[idx] * gn.value[idx / plane];
            sum_d += dxhat;
            sum_dx += dxhat * (*xhat)[idx];
          }
          const double is = (*inv_std)[std::size_t(g)];
          for (std::size_t i = 0; i < per_group; ++i) {
            std::size_t idx = begin + i;
            double dxhat = gy[idx] * gn.value[idx / plane];
            gx[idx] += is / m * (m * dxhat - sum_d - (*xhat)[idx] * sum_dx);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Least-squares plane head

/// X Xᵀ for X [r, c].
inline Tensor gram(const Tensor& x) {
  if (x.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "gram expects a matrix");
  const int r = x.dim(0), c = x.dim(1);
  std::vector<double> out(std::size_t(r) * r);
  detail::ConstRowMap xm(x.data().data(), r, c);
  detail::RowMap om(out.data(), r, r);
  om.noalias() = xm * xm.transpose();
  return detail::make_result(Shape{r, r}, std::move(out), {x}, "gram", [r, c](detail::Node& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    detail::ConstRowMap g(self.grad.data(), r, r);
    detail::ConstRowMap xm(src.value.data(), r, c);
    detail::RowMap gx(src.ensure_grad().data(), r, c);
    gx.noalias() += (g + g.transpose()) * xm;
  });
}

/// Eigen-decomposition of a symmetric 4x4 matrix, eigenvalues ascending.
struct SymEigen4 {
  Eigen::Vector4d values;
  Eigen::Matrix4d vectors;  ///< column j pairs with values[j]
  int sweeps = 0;
};

/// Cyclic Jacobi; converges when the off-diagonal Frobenius norm drops
/// below 1e-14 relative to the matrix norm, within 100 sweeps.
inline SymEigen4 jacobi_eigen4(const Eigen::Matrix4d& m) {
  constexpr int n = 4;
  Eigen::Matrix4d a = m;
  Eigen::Matrix4d v = Eigen::Matrix4d::Identity();
  const double scale = m.norm();
  int sweep = 0;
  for (;; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
    if (std::sqrt(off) <= 1e-14 * scale || scale == 0.0) break;
    if (sweep >= 100) throw Error(ErrorCode::SolverFailure, "Jacobi eigensolve did not converge in 100 sweeps");
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::array<int, n> idx{0, 1, 2, 3};
  std::sort(idx.begin(), idx.end(), [&](int i, int j) { return a(i, i) < a(j, j); });
  SymEigen4 out;
  out.sweeps = sweep;
  for (int j = 0; j < n; ++j) {
    out.values[j] = a(idx[j], idx[j]);
    out.vectors.col(j) = v.col(idx[j]);
  }
  return out;
}

/// Flips v so that its largest-magnitude entry is positive.
inline Eigen::Vector4d canonical_sign(Eigen::Vector4d v) {
  int imax = 0;
  for (int i = 1; i < 4; ++i)
    if (std::abs(v[i]) > std::abs(v[imax])) imax = i;
  return v[imax] < 0.0 ? Eigen::Vector4d(-v) : v;
}

struct EigenInfo {
  double smallest = 0.0;
  double eigengap = 0.0;
};

constexpr double kMinEigengap = 1e-8;

/// Unit eigenvector of the smallest eigenvalue of a symmetric 4x4 tensor,
/// i.e. the minimizer of ||A beta|| subject to ||beta|| = 1 when M = AᵀA.
/// Backward uses dv = sum_{j>0} (v_jᵀ dM v_0) / (l_0 - l_j) v_j.
inline Tensor smallest_eigenvector(const Tensor& m, EigenInfo* info = nullptr) {
  if (m.shape() != Shape{4, 4}) throw Error(ErrorCode::ShapeMismatch, "smallest_eigenvector expects [4,4]");
  Eigen::Matrix4d mat = Eigen::Map<const Eigen::Matrix<double, 4, 4, Eigen::RowMajor>>(m.data().data());
  if ((mat - mat.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, mat.cwiseAbs().maxCoeff())) {
    throw Error(ErrorCode::ShapeMismatch, "smallest_eigenvector input is not symmetric");
  }
  SymEigen4 eig = jacobi_eigen4(mat);
  const double gap = eig.values[1] - eig.values[0];
  if (info) *info = EigenInfo{eig.values[0], gap};
  if (!(gap >= kMinEigengap)) {
    throw Error(ErrorCode::EigengapTooSmall, "eigengap " + std::to_string(gap) + " below 1e-8");
  }
  Eigen::Vector4d v0 = canonical_sign(eig.vectors.col(0));
  eig.vectors.col(0) = v0;
  std::vector<double> out(v0.data(), v0.data() + 4);
  return detail::make_result(Shape{4}, std::move(out), {m}, "smallest_eigenvector", [eig](detail::Node& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    Eigen::Map<const Eigen::Vector4d> g(self.grad.data());
    const Eigen::Vector4d v0 = eig.vectors.col(0);
    Eigen::Vector4d coeff = Eigen::Vector4d::Zero();
    for (int j = 1; j < 4; ++j) {
      coeff += eig.vectors.col(j) * (eig.vectors.col(j).dot(g) / (eig.values[0] - eig.values[j]));
    }
    Eigen::Map<Eigen::Matrix<double, 4, 4, Eigen::RowMajor>> gm(src.ensure_grad().data());
    gm.noalias() += coeff * v0.transpose();
  });
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradcheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

/// Compares backward() against central differences with step h. The error
/// per coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
/// `probes` limits how many coordinates per input are checked (0 = all).
inline GradcheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 std::vector<Tensor> inputs, double h = 1e-6, std::size_t probes = 0,
                                 std::uint64_t probe_seed = 0) {
  for (auto& in : inputs) {
    if (in.requires_grad()) in.zero_grad();
  }
  Tensor loss = f(inputs);
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) analytic.emplace_back(in.grad().begin(), in.grad().end());

  NoGradGuard no_grad;
  GradcheckResult result;
  std::uint64_t state = probe_seed * 0x9E3779B97F4A7C15ULL + 1;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    auto values = inputs[k].mutable_data();
    std::vector<std::size_t> coords;
    if (probes == 0 || probes >= values.size()) {
      coords.resize(values.size());
      std::iota(coords.begin(), coords.end(), std::size_t{0});
    } else {
      for (std::size_t p = 0; p < probes; ++p) {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        coords.push_back(state % values.size());
      }
    }
    for (std::size_t i : coords) {
      const double orig = values[i];
      values[i] = orig + h;
      double up = f(inputs).item();
      values[i] = orig - h;
      double down = f(inputs).item();
      values[i] = orig;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic[k][i];
      double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      result.max_rel_err = std::max(result.max_rel_err, err);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace symslice
