#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "saved/rng.hpp"

namespace saved {

namespace autograd {

struct Node {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized on demand
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // pushes node.grad into parents

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) {
      grad.assign(value.size(), 0.0);
    }
  }
};

/// Graph recording is on by default; NoGradGuard disables it for pure
/// inference so intermediate nodes carry no parent links and free eagerly.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace autograd

class NoGradGuard {
 public:
  NoGradGuard() : previous_(autograd::grad_mode()) { autograd::grad_mode() = false; }
  ~NoGradGuard() { autograd::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (const std::size_t d : shape) {
    n *= d;
  }
  return n;
}

/// Value-semantics handle to a node in the computation graph.  Ops are free
/// functions; each records its backward rule when any input needs gradients.
class Tensor {
 public:
  Tensor() : node_(std::make_shared<autograd::Node>()) {}

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->value.assign(shape_numel(t.node_->shape), 0.0);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_values(std::vector<std::size_t> shape, std::vector<double> values,
                            bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw std::invalid_argument("Tensor::from_values: shape/data mismatch");
    }
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v) { return from_values({}, {v}); }

  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->numel(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool enabled) { node_->requires_grad = enabled; }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  double item() const {
    if (numel() != 1) {
      throw std::invalid_argument("Tensor::item: tensor is not a scalar");
    }
    return node_->value[0];
  }

  /// Deep copy of the values; the copy is detached from any graph.
  Tensor clone_detached() const {
    Tensor t;
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  std::shared_ptr<autograd::Node> node() const { return node_; }

  explicit Tensor(std::shared_ptr<autograd::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<autograd::Node> node_;
};

namespace autograd {

inline Tensor make_result(std::vector<std::size_t> shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(Node&)> backward_fn) {
  Tensor out = Tensor::from_values(std::move(shape), std::move(value));
  bool needs = false;
  if (grad_mode()) {
    for (const Tensor& p : parents) {
      needs = needs || p.requires_grad();
    }
  }
  if (needs) {
    out.node()->requires_grad = true;
    for (const Tensor& p : parents) {
      out.node()->parents.push_back(p.node());
    }
    out.node()->backward_fn = std::move(backward_fn);
  }
  return out;
}

}  // namespace autograd

/// Reverse-mode pass from a scalar loss.  Gradients accumulate additively
/// into every reachable requires_grad leaf; intermediate (non-leaf) gradients
/// are reset at the start of each call so repeated backward calls add exactly
/// one more unit of upstream seed.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar");
  }
  using autograd::Node;
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next_parent] = stack.back();
    if (next_parent < node->parents.size()) {
      Node* parent = node->parents[next_parent].get();
      ++next_parent;
      if (visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* node : topo) {
    if (node->backward_fn) {  // interior node: reset before reaccumulating
      node->grad.assign(node->value.size(), 0.0);
    } else {
      node->ensure_grad();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->requires_grad) {
      node->backward_fn(*node);
    }
  }
}

// ---------------------------------------------------------------------------
// shape helpers
// ---------------------------------------------------------------------------

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) {
    throw std::invalid_argument(message);
  }
}

// b broadcasts onto a iff b's shape is a suffix of a's shape
inline bool is_suffix_shape(const std::vector<std::size_t>& a,
                            const std::vector<std::size_t>& b) {
  if (b.size() > a.size()) {
    return false;
  }
  const std::size_t offset = a.size() - b.size();
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (a[offset + i] != b[i]) {
      return false;
    }
  }
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and broadcast ops
// ---------------------------------------------------------------------------

/// a + b where b's shape equals a's or is a suffix of it (b is then repeated
/// over a's leading dims, as for bias terms).
inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require(detail::is_suffix_shape(a.shape(), b.shape()),
                  "add: b must match a suffix of a's shape");
  const std::size_t bn = b.numel();
  std::vector<double> value = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < value.size(); ++i) {
    value[i] += bv[i % bn];
  }
  auto a_node = a.node();
  auto b_node = b.node();
  return autograd::make_result(
      a.shape(), std::move(value), {a, b}, [a_node, b_node, bn](autograd::Node& self) {
        if (a_node->requires_grad) {
          a_node->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            a_node->grad[i] += self.grad[i];
          }
        }
        if (b_node->requires_grad) {
          b_node->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            b_node->grad[i % bn] += self.grad[i];
          }
        }
      });
}

/// Elementwise product, with the same suffix-broadcast rule as add.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require(detail::is_suffix_shape(a.shape(), b.shape()),
                  "mul: b must match a suffix of a's shape");
  const std::size_t bn = b.numel();
  std::vector<double> value = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < value.size(); ++i) {
    value[i] *= bv[i % bn];
  }
  auto a_node = a.node();
  auto b_node = b.node();
  return autograd::make_result(
      a.shape(), std::move(value), {a, b}, [a_node, b_node, bn](autograd::Node& self) {
        if (a_node->requires_grad) {
          a_node->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            a_node->grad[i] += self.grad[i] * b_node->value[i % bn];
          }
        }
        if (b_node->requires_grad) {
          b_node->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            b_node->grad[i % bn] += self.grad[i] * a_node->value[i];
          }
        }
      });
}

inline Tensor scalar_mul(const Tensor& a, double c) {
  std::vector<double> value = a.values();
  for (double& v : value) {
    v *= c;
  }
  auto a_node = a.node();
  return autograd::make_result(a.shape(), std::move(value), {a},
                               [a_node, c](autograd::Node& self) {
                                 if (!a_node->requires_grad) {
                                   return;
                                 }
                                 a_node->ensure_grad();
                                 for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   a_node->grad[i] += self.grad[i] * c;
                                 }
                               });
}

inline Tensor scalar_div(const Tensor& a, double c) {
  detail::require(c != 0.0, "scalar_div: divide by zero");
  return scalar_mul(a, 1.0 / c);
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> value = a.values();
  for (double& v : value) {
    v = v > 0.0 ? v : 0.0;
  }
  auto a_node = a.node();
  return autograd::make_result(a.shape(), std::move(value), {a},
                               [a_node](autograd::Node& self) {
                                 if (!a_node->requires_grad) {
                                   return;
                                 }
                                 a_node->ensure_grad();
                                 for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   if (a_node->value[i] > 0.0) {
                                     a_node->grad[i] += self.grad[i];
                                   }
                                 }
                               });
}

inline Tensor exp(const Tensor& a) {
  std::vector<double> value = a.values();
  for (double& v : value) {
    v = std::exp(v);
  }
  auto a_node = a.node();
  return autograd::make_result(a.shape(), std::move(value), {a},
                               [a_node](autograd::Node& self) {
                                 if (!a_node->requires_grad) {
                                   return;
                                 }
                                 a_node->ensure_grad();
                                 for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   a_node->grad[i] += self.grad[i] * self.value[i];
                                 }
                               });
}

inline Tensor log(const Tensor& a) {
  std::vector<double> value = a.values();
  for (double& v : value) {
    v = std::log(v);
  }
  auto a_node = a.node();
  return autograd::make_result(a.shape(), std::move(value), {a},
                               [a_node](autograd::Node& self) {
                                 if (!a_node->requires_grad) {
                                   return;
                                 }
                                 a_node->ensure_grad();
                                 for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   a_node->grad[i] += self.grad[i] / a_node->value[i];
                                 }
                               });
}

/// y[i] = mask[i] ? fill : a[i].  The mask is constant; masked positions pass
/// no gradient.
inline Tensor masked_fill(const Tensor& a,
                          std::shared_ptr<const std::vector<std::uint8_t>> mask,
                          double fill) {
  detail::require(mask && mask->size() == a.numel(), "masked_fill: mask size mismatch");
  std::vector<double> value = a.values();
  for (std::size_t i = 0; i < value.size(); ++i) {
    if ((*mask)[i]) {
      value[i] = fill;
    }
  }
  auto a_node = a.node();
  return autograd::make_result(a.shape(), std::move(value), {a},
                               [a_node, mask](autograd::Node& self) {
                                 if (!a_node->requires_grad) {
                                   return;
                                 }
                                 a_node->ensure_grad();
                                 for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   if (!(*mask)[i]) {
                                     a_node->grad[i] += self.grad[i];
                                   }
                                 }
                               });
}

inline Tensor masked_fill(const Tensor& a, const std::vector<std::uint8_t>& mask,
                          double fill) {
  return masked_fill(a, std::make_shared<const std::vector<std::uint8_t>>(mask), fill);
}

/// Inverted dropout: drops entries with probability rate and scales the
/// survivors by 1/(1-rate) at train time; identity in eval mode.
inline Tensor dropout(const Tensor& a, double rate, bool train, RandomStream& rng) {
  detail::require(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0,1)");
  if (!train || rate == 0.0) {
    return a;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(a.numel());
  for (double& m : *mask) {
    m = rng.bernoulli(rate) ? 0.0 : keep_scale;
  }
  std::vector<double> value = a.values();
  for (std::size_t i = 0; i < value.size(); ++i) {
    value[i] *= (*mask)[i];
  }
  auto a_node = a.node();
  return autograd::make_result(a.shape(), std::move(value), {a},
                               [a_node, mask](autograd::Node& self) {
                                 if (!a_node->requires_grad) {
                                   return;
                                 }
                                 a_node->ensure_grad();
                                 for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   a_node->grad[i] += self.grad[i] * (*mask)[i];
                                 }
                               });
}

// ---------------------------------------------------------------------------
// reductions and structure ops
// ---------------------------------------------------------------------------

/// Mean over one dim; the dim is removed from the shape.
inline Tensor mean(const Tensor& a, std::size_t dim) {
  detail::require(dim < a.rank(), "mean: dim out of range");
  const auto& shape = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < dim; ++i) {
    outer *= shape[i];
  }
  for (std::size_t i = dim + 1; i < shape.size(); ++i) {
    inner *= shape[i];
  }
  const std::size_t count = shape[dim];
  detail::require(count > 0, "mean: empty dim");
  std::vector<std::size_t> out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != dim) {
      out_shape.push_back(shape[i]);
    }
  }
  std::vector<double> value(outer * inner, 0.0);
  const auto& av = a.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t base = (o * count + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        value[o * inner + i] += av[base + i];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(count);
  for (double& v : value) {
    v *= inv;
  }
  auto a_node = a.node();
  return autograd::make_result(
      std::move(out_shape), std::move(value), {a},
      [a_node, outer, inner, count, inv](autograd::Node& self) {
        if (!a_node->requires_grad) {
          return;
        }
        a_node->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t c = 0; c < count; ++c) {
            const std::size_t base = (o * count + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              a_node->grad[base + i] += self.grad[o * inner + i] * inv;
            }
          }
        }
      });
}

/// Sum over the last dim (used by the loss's log-sum-exp).
inline Tensor sum_lastdim(const Tensor& a) {
  detail::require(a.rank() >= 1, "sum_lastdim: needs rank >= 1");
  Tensor m = mean(a, a.rank() - 1);
  return scalar_mul(m, static_cast<double>(a.shape().back()));
}

/// Transpose of the last two dims.
inline Tensor transpose_last2(const Tensor& a) {
  detail::require(a.rank() >= 2, "transpose_last2: needs rank >= 2");
  const auto& shape = a.shape();
  const std::size_t rows = shape[shape.size() - 2];
  const std::size_t cols = shape[shape.size() - 1];
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < shape.size(); ++i) {
    batch *= shape[i];
  }
  std::vector<std::size_t> out_shape = shape;
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  std::vector<double> value(a.numel());
  const auto& av = a.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * rows * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        value[base + c * rows + r] = av[base + r * cols + c];
      }
    }
  }
  auto a_node = a.node();
  return autograd::make_result(
      std::move(out_shape), std::move(value), {a},
      [a_node, batch, rows, cols](autograd::Node& self) {
        if (!a_node->requires_grad) {
          return;
        }
        a_node->ensure_grad();
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = b * rows * cols;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
              a_node->grad[base + r * cols + c] += self.grad[base + c * rows + r];
            }
          }
        }
      });
}

/// Concatenation along dim 0; all parts must agree on the trailing dims.
inline Tensor concat0(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat0: no inputs");
  std::vector<std::size_t> out_shape = parts[0].shape();
  detail::require(!out_shape.empty(), "concat0: scalars cannot be concatenated");
  std::size_t dim0 = 0;
  for (const Tensor& p : parts) {
    detail::require(p.rank() == out_shape.size(), "concat0: rank mismatch");
    for (std::size_t i = 1; i < out_shape.size(); ++i) {
      detail::require(p.shape()[i] == out_shape[i], "concat0: trailing shape mismatch");
    }
    dim0 += p.shape()[0];
  }
  out_shape[0] = dim0;
  std::vector<double> value;
  value.reserve(shape_numel(out_shape));
  for (const Tensor& p : parts) {
    value.insert(value.end(), p.values().begin(), p.values().end());
  }
  std::vector<std::shared_ptr<autograd::Node>> part_nodes;
  for (const Tensor& p : parts) {
    part_nodes.push_back(p.node());
  }
  return autograd::make_result(std::move(out_shape), std::move(value), parts,
                               [part_nodes](autograd::Node& self) {
                                 std::size_t offset = 0;
                                 for (const auto& p : part_nodes) {
                                   if (p->requires_grad) {
                                     p->ensure_grad();
                                     for (std::size_t i = 0; i < p->value.size(); ++i) {
                                       p->grad[i] += self.grad[offset + i];
                                     }
                                   }
                                   offset += p->value.size();
                                 }
                               });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

// C[m,n] += A[m,k] * B[k,n], ikj order for contiguous accumulation
inline void gemm_accumulate(const double* a, const double* b, double* c,
                            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aval = a[i * k + p];
      if (aval == 0.0) {
        continue;
      }
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += aval * brow[j];
      }
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
inline void gemm_bt_accumulate(const double* a, const double* b, double* c,
                               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      const double* arow = a + i * k;
      const double* brow = b + j * k;
      for (std::size_t p = 0; p < k; ++p) {
        acc += arow[p] * brow[p];
      }
      c[i * n + j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
inline void gemm_at_accumulate(const double* a, const double* b, double* c,
                               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aval = arow[p];
      if (aval == 0.0) {
        continue;
      }
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += aval * brow[j];
      }
    }
  }
}

}  // namespace detail

/// Matrix product.  a is [..., m, k]; b is either [k, n] (repeated over a's
/// leading dims) or [..., k, n] with identical leading dims.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() >= 2 && b.rank() >= 2, "matmul: inputs need rank >= 2");
  const auto& ashape = a.shape();
  const auto& bshape = b.shape();
  const std::size_t m = ashape[ashape.size() - 2];
  const std::size_t k = ashape[ashape.size() - 1];
  const std::size_t n = bshape[bshape.size() - 1];
  detail::require(bshape[bshape.size() - 2] == k, "matmul: inner dim mismatch");
  const bool b_broadcast = b.rank() == 2 && a.rank() > 2;
  if (!b_broadcast) {
    detail::require(ashape.size() == bshape.size(), "matmul: rank mismatch");
    for (std::size_t i = 0; i + 2 < ashape.size(); ++i) {
      detail::require(ashape[i] == bshape[i], "matmul: leading dim mismatch");
    }
  }
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < ashape.size(); ++i) {
    batch *= ashape[i];
  }
  std::vector<std::size_t> out_shape(ashape.begin(), ashape.end() - 1);
  out_shape.push_back(n);
  std::vector<double> value(batch * m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t t = 0; t < batch; ++t) {
    detail::gemm_accumulate(av.data() + t * m * k,
                            bv.data() + (b_broadcast ? 0 : t * k * n),
                            value.data() + t * m * n, m, k, n);
  }
  auto a_node = a.node();
  auto b_node = b.node();
  return autograd::make_result(
      std::move(out_shape), std::move(value), {a, b},
      [a_node, b_node, batch, m, k, n, b_broadcast](autograd::Node& self) {
        for (std::size_t t = 0; t < batch; ++t) {
          const double* g = self.grad.data() + t * m * n;
          const double* bvals = b_node->value.data() + (b_broadcast ? 0 : t * k * n);
          const double* avals = a_node->value.data() + t * m * k;
          if (a_node->requires_grad) {
            a_node->ensure_grad();
            // dA = dC * B^T
            detail::gemm_bt_accumulate(g, bvals, a_node->grad.data() + t * m * k, m, n, k);
          }
          if (b_node->requires_grad) {
            b_node->ensure_grad();
            // dB = A^T * dC (summed over batch when broadcast)
            detail::gemm_at_accumulate(avals, g,
                                       b_node->grad.data() + (b_broadcast ? 0 : t * k * n),
                                       m, k, n);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// normalization ops
// ---------------------------------------------------------------------------

/// Numerically stabilized softmax over the last dim.
inline Tensor softmax_lastdim(const Tensor& a) {
  detail::require(a.rank() >= 1 && a.shape().back() > 0, "softmax: empty last dim");
  const std::size_t width = a.shape().back();
  const std::size_t rows = a.numel() / width;
  std::vector<double> value(a.numel());
  const auto& av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * width;
    double mx = av[base];
    for (std::size_t i = 1; i < width; ++i) {
      mx = std::max(mx, av[base + i]);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      const double e = std::exp(av[base + i] - mx);
      value[base + i] = e;
      total += e;
    }
    for (std::size_t i = 0; i < width; ++i) {
      value[base + i] /= total;
    }
  }
  auto a_node = a.node();
  return autograd::make_result(
      a.shape(), std::move(value), {a}, [a_node, rows, width](autograd::Node& self) {
        if (!a_node->requires_grad) {
          return;
        }
        a_node->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * width;
          double dot = 0.0;
          for (std::size_t i = 0; i < width; ++i) {
            dot += self.grad[base + i] * self.value[base + i];
          }
          for (std::size_t i = 0; i < width; ++i) {
            a_node->grad[base + i] +=
                self.value[base + i] * (self.grad[base + i] - dot);
          }
        }
      });
}

/// Layer normalization over the last dim with learnable scale/shift.
/// Uses eps = 1e-10 so in double precision the normalized output's variance
/// sits within 1e-8 of 1 for well-scaled inputs.
inline Tensor layer_norm_lastdim(const Tensor& a, const Tensor& gamma, const Tensor& beta) {
  constexpr double kEps = 1e-10;
  detail::require(a.rank() >= 1, "layer_norm: needs rank >= 1");
  const std::size_t width = a.shape().back();
  detail::require(gamma.numel() == width && beta.numel() == width,
                  "layer_norm: gamma/beta must match last dim");
  const std::size_t rows = a.numel() / width;
  std::vector<double> value(a.numel());
  auto xhat = std::make_shared<std::vector<double>>(a.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& av = a.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * width;
    double mu = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      mu += av[base + i];
    }
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      const double d = av[base + i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(width);
    const double inv = 1.0 / std::sqrt(var + kEps);
    (*inv_std)[r] = inv;
    for (std::size_t i = 0; i < width; ++i) {
      const double xh = (av[base + i] - mu) * inv;
      (*xhat)[base + i] = xh;
      value[base + i] = xh * gv[i] + bv[i];
    }
  }
  auto a_node = a.node();
  auto g_node = gamma.node();
  auto b_node = beta.node();
  return autograd::make_result(
      a.shape(), std::move(value), {a, gamma, beta},
      [a_node, g_node, b_node, xhat, inv_std, rows, width](autograd::Node& self) {
        const double w = static_cast<double>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * width;
          if (g_node->requires_grad) {
            g_node->ensure_grad();
            for (std::size_t i = 0; i < width; ++i) {
              g_node->grad[i] += self.grad[base + i] * (*xhat)[base + i];
            }
          }
          if (b_node->requires_grad) {
            b_node->ensure_grad();
            for (std::size_t i = 0; i < width; ++i) {
              b_node->grad[i] += self.grad[base + i];
            }
          }
          if (a_node->requires_grad) {
            a_node->ensure_grad();
            double sum_dxhat = 0.0;
            double sum_dxhat_xhat = 0.0;
            for (std::size_t i = 0; i < width; ++i) {
              const double dxhat = self.grad[base + i] * g_node->value[i];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * (*xhat)[base + i];
            }
            const double inv = (*inv_std)[r];
            for (std::size_t i = 0; i < width; ++i) {
              const double dxhat = self.grad[base + i] * g_node->value[i];
              a_node->grad[base + i] +=
                  inv * (dxhat - sum_dxhat / w - (*xhat)[base + i] * sum_dxhat_xhat / w);
            }
          }
        }
      });
}

/// Row-wise L2 normalization over the last dim.  Rows with norm below 1e-12
/// are rejected: silently flooring them would hide a collapsed embedding.
inline Tensor l2_normalize_lastdim(const Tensor& a) {
  detail::require(a.rank() >= 1 && a.shape().back() > 0, "l2_normalize: empty last dim");
  const std::size_t width = a.shape().back();
  const std::size_t rows = a.numel() / width;
  std::vector<double> value(a.numel());
  auto norms = std::make_shared<std::vector<double>>(rows);
  const auto& av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * width;
    double sq = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      sq += av[base + i] * av[base + i];
    }
    const double norm = std::sqrt(sq);
    if (!(norm >= 1e-12)) {
      throw std::invalid_argument("l2_normalize: zero-norm row");
    }
    (*norms)[r] = norm;
    for (std::size_t i = 0; i < width; ++i) {
      value[base + i] = av[base + i] / norm;
    }
  }
  auto a_node = a.node();
  return autograd::make_result(
      a.shape(), std::move(value), {a}, [a_node, norms, rows, width](autograd::Node& self) {
        if (!a_node->requires_grad) {
          return;
        }
        a_node->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * width;
          double dot = 0.0;
          for (std::size_t i = 0; i < width; ++i) {
            dot += self.grad[base + i] * self.value[base + i];
          }
          const double inv = 1.0 / (*norms)[r];
          for (std::size_t i = 0; i < width; ++i) {
            a_node->grad[base + i] +=
                inv * (self.grad[base + i] - self.value[base + i] * dot);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// embedding lookup
// ---------------------------------------------------------------------------

/// Gathers rows of table (shape [v, d]) by id; output shape is
/// prefix_shape + [d].  Gradients scatter-add into the looked-up rows.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<std::uint32_t>& ids,
                               std::vector<std::size_t> prefix_shape) {
  detail::require(table.rank() == 2, "embedding_lookup: table must be [v, d]");
  detail::require(shape_numel(prefix_shape) == ids.size(),
                  "embedding_lookup: prefix shape / id count mismatch");
  const std::size_t v = table.dim(0);
  const std::size_t d = table.dim(1);
  for (const std::uint32_t id : ids) {
    detail::require(id < v, "embedding_lookup: id out of vocabulary range");
  }
  std::vector<std::size_t> out_shape = std::move(prefix_shape);
  out_shape.push_back(d);
  std::vector<double> value(ids.size() * d);
  const auto& tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, value.data() + i * d);
  }
  auto table_node = table.node();
  auto ids_copy = std::make_shared<std::vector<std::uint32_t>>(ids);
  return autograd::make_result(
      std::move(out_shape), std::move(value), {table},
      [table_node, ids_copy, d](autograd::Node& self) {
        if (!table_node->requires_grad) {
          return;
        }
        table_node->ensure_grad();
        for (std::size_t i = 0; i < ids_copy->size(); ++i) {
          double* dst = table_node->grad.data() +
                        static_cast<std::size_t>((*ids_copy)[i]) * d;
          const double* src = self.grad.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) {
            dst[j] += src[j];
          }
        }
      });
}

}  // namespace saved
