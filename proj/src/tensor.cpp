#include "qfc/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

namespace qfc {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

constexpr double kInf = std::numeric_limits<double>::infinity();

thread_local bool t_grad_enabled = true;
thread_local std::vector<char>* t_relu_recorder = nullptr;

using detail::Node;

std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError(std::string(op) + ": axis out of range");
  return static_cast<std::size_t>(a);
}

// True when `suffix` equals the trailing dims of `full`.
bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

enum class Bin { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, Bin kind, const char* op) {
  check_defined(a, op);
  check_defined(b, op);
  if (!is_suffix(a.shape(), b.shape())) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(b.shape()) + " onto " +
                     shape_string(a.shape()));
  }
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  if (m == 0 && n != 0) throw ShapeError(std::string(op) + ": empty operand");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i], y = bv[m ? i % m : 0];
    out[i] = kind == Bin::kAdd ? x + y : kind == Bin::kSub ? x - y : x * y;
  }
  Node* an = a.node();
  Node* bn = b.node();
  return make_tensor(a.shape(), std::move(out), {a, b}, [an, bn, kind, n, m](const Node& self) {
    const auto& g = self.grad;
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      if (kind == Bin::kMul) {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bn->value[i % m];
      } else {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      const double sign = kind == Bin::kSub ? -1.0 : 1.0;
      if (kind == Bin::kMul) {
        for (std::size_t i = 0; i < n; ++i) gb[i % m] += g[i] * an->value[i];
      } else {
        for (std::size_t i = 0; i < n; ++i) gb[i % m] += sign * g[i];
      }
    }
  });
}

template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D deriv_from_out_in) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  Node* an = a.node();
  return make_tensor(a.shape(), std::move(out), {a}, [an, deriv_from_out_in](const Node& self) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] += self.grad[i] * deriv_from_out_in(self.value[i], an->value[i]);
    }
  });
}

}  // namespace

std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                     shape_string(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

std::size_t Tensor::dim(int i) const { return shape()[norm_axis(i, rank(), "Tensor::dim")]; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::backward() {
  if (!defined()) throw std::invalid_argument("backward: undefined tensor");
  if (size() != 1) throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(shape()));
  if (node_->consumed) throw std::logic_error("backward: already called on this graph");
  node_->consumed = true;
  if (!node_->requires_grad) return;

  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->adjoint && !n->grad.empty()) n->adjoint(*n);
  }
}

Tensor make_tensor(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(const detail::Node&)> adjoint) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  if (t_grad_enabled) {
    for (const Tensor& t : inputs) {
      if (t.node()->requires_grad) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    for (Tensor& t : inputs) n->parents.push_back(t.node_ptr());
    n->adjoint = std::move(adjoint);
  }
  return Tensor(std::move(n));
}

bool grad_enabled() { return t_grad_enabled; }

void detail::set_relu_recorder(std::vector<char>* recorder) { t_relu_recorder = recorder; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands need rank >= 2");
  const std::size_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Shape out_shape = a.shape();
  out_shape.back() = n;
  const std::size_t batch = a.size() / (m * k == 0 ? 1 : m * k);
  const bool shared = b.rank() == 2;
  if (!shared) {
    if (b.rank() != a.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      throw ShapeError("matmul: batch dimensions differ " + shape_string(a.shape()) + " x " +
                       shape_string(b.shape()));
    }
  }
  std::vector<double> out(shape_size(out_shape));
  const auto ei = [](std::size_t x) { return static_cast<Eigen::Index>(x); };
  if (shared) {
    MapM(out.data(), ei(batch * m), ei(n)).noalias() =
        MapC(a.values().data(), ei(batch * m), ei(k)) * MapC(b.values().data(), ei(k), ei(n));
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      MapM(out.data() + i * m * n, ei(m), ei(n)).noalias() =
          MapC(a.values().data() + i * m * k, ei(m), ei(k)) * MapC(b.values().data() + i * k * n, ei(k), ei(n));
    }
  }
  Node* an = a.node();
  Node* bn = b.node();
  return make_tensor(std::move(out_shape), std::move(out), {a, b},
                     [an, bn, shared, batch, m, k, n, ei](const Node& self) {
    const double* g = self.grad.data();
    if (shared) {
      const MapC gm(g, ei(batch * m), ei(n));
      if (an->requires_grad) {
        MapM(an->grad_buffer().data(), ei(batch * m), ei(k)).noalias() +=
            gm * MapC(bn->value.data(), ei(k), ei(n)).transpose();
      }
      if (bn->requires_grad) {
        MapM(bn->grad_buffer().data(), ei(k), ei(n)).noalias() +=
            MapC(an->value.data(), ei(batch * m), ei(k)).transpose() * gm;
      }
      return;
    }
    for (std::size_t i = 0; i < batch; ++i) {
      const MapC gm(g + i * m * n, ei(m), ei(n));
      if (an->requires_grad) {
        MapM(an->grad_buffer().data() + i * m * k, ei(m), ei(k)).noalias() +=
            gm * MapC(bn->value.data() + i * k * n, ei(k), ei(n)).transpose();
      }
      if (bn->requires_grad) {
        MapM(bn->grad_buffer().data() + i * k * n, ei(k), ei(n)).noalias() +=
            MapC(an->value.data() + i * m * k, ei(m), ei(k)).transpose() * gm;
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  check_defined(a, "transpose");
  if (a.rank() < 2) throw ShapeError("transpose: rank must be >= 2");
  const std::size_t r = a.dim(-2), c = a.dim(-1);
  const std::size_t batch = r * c == 0 ? 0 : a.size() / (r * c);
  Shape s = a.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  std::vector<double> out(a.size());
  const auto& v = a.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t off = b * r * c;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[off + j * r + i] = v[off + i * c + j];
    }
  }
  Node* an = a.node();
  return make_tensor(std::move(s), std::move(out), {a}, [an, batch, r, c](const Node& self) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = b * r * c;
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga[off + i * c + j] += self.grad[off + j * r + i];
      }
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_defined(a, "reshape");
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  Node* an = a.node();
  return make_tensor(std::move(shape), a.values(), {a}, [an](const Node& self) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Bin::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Bin::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Bin::kMul, "mul"); }

Tensor affine(const Tensor& a, double alpha, double beta) {
  check_defined(a, "affine");
  return unary(a, [alpha, beta](double x) { return alpha * x + beta; },
               [alpha](double, double) { return alpha; });
}

Tensor scale(const Tensor& a, double s) { return affine(a, s, 0.0); }

Tensor relu(const Tensor& a) {
  check_defined(a, "relu");
  if (t_relu_recorder != nullptr) {
    for (double x : a.values()) t_relu_recorder->push_back(x > 0.0 ? 1 : 0);
  }
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double, double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  check_defined(a, "tanh");
  return unary(a, [](double x) { return std::tanh(x); }, [](double y, double) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  check_defined(a, "sigmoid");
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double y, double) { return y * (1.0 - y); });
}

Tensor softmax(const Tensor& a, int axis) {
  check_defined(a, "softmax");
  if (a.rank() == 0) throw ShapeError("softmax: scalar input");
  if (norm_axis(axis, a.rank(), "softmax") != a.rank() - 1) {
    throw ShapeError("softmax: only the last axis is supported");
  }
  const std::size_t n = a.dim(-1);
  if (n == 0) throw ShapeError("softmax: axis of size 0");
  const std::size_t rows = a.size() / n;
  const auto& v = a.values();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = v.data() + r * n;
    double* y = out.data() + r * n;
    if (std::any_of(x, x + n, [](double t) { return std::isnan(t) || t == kInf; })) {
      std::fill(y, y + n, std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double mx = *std::max_element(x, x + n);
    if (mx == -kInf) throw std::domain_error("softmax: row " + std::to_string(r) + " is fully masked");
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (y[i] = std::exp(x[i] - mx));
    for (std::size_t i = 0; i < n; ++i) y[i] /= s;
  }
  Node* an = a.node();
  return make_tensor(a.shape(), std::move(out), {a}, [an, rows, n](const Node& self) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += y[i] * g[i];
      for (std::size_t i = 0; i < n; ++i) ga[r * n + i] += y[i] * (g[i] - dot);
    }
  });
}

Tensor add_constant(const Tensor& a, std::span<const double> c, const Shape& c_shape) {
  check_defined(a, "add_constant");
  if (!is_suffix(a.shape(), c_shape) || shape_size(c_shape) != c.size()) {
    throw ShapeError("add_constant: cannot broadcast " + shape_string(c_shape) + " onto " +
                     shape_string(a.shape()));
  }
  const std::size_t m = c.size();
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i % m];
  Node* an = a.node();
  return make_tensor(a.shape(), std::move(out), {a}, [an](const Node& self) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  check_defined(x, "layer_norm");
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t n = x.dim(-1);
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw ShapeError("layer_norm: gain/bias must have shape (" + std::to_string(n) + ")");
  }
  const std::size_t rows = n == 0 ? 0 : x.size() / n;
  const auto& v = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = v.data() + r * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += xr[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const double h = (xr[i] - mu) * is;
      xhat[r * n + i] = h;
      out[r * n + i] = h * gv[i] + bv[i];
    }
  }
  Node* xn = x.node();
  Node* gn = gain.node();
  Node* bn = bias.node();
  return make_tensor(x.shape(), std::move(out), {x, gain, bias},
                     [xn, gn, bn, rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Node& self) {
    const auto& g = self.grad;
    if (gn->requires_grad || bn->requires_grad) {
      auto* gg = gn->requires_grad ? gn->grad_buffer().data() : nullptr;
      auto* gb = bn->requires_grad ? bn->grad_buffer().data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < n; ++i) {
          if (gg) gg[i] += g[r * n + i] * xhat[r * n + i];
          if (gb) gb[i] += g[r * n + i];
        }
      }
    }
    if (!xn->requires_grad) return;
    auto& gx = xn->grad_buffer();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double dh = g[r * n + i] * gn->value[i];
        s1 += dh;
        s2 += dh * xhat[r * n + i];
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double dh = g[r * n + i] * gn->value[i];
        gx[r * n + i] += inv_std[r] * (dh - inv_n * s1 - xhat[r * n + i] * inv_n * s2);
      }
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> indices, const Shape& index_shape) {
  check_defined(table, "embedding");
  if (table.rank() != 2) throw ShapeError("embedding: table must be [V, D]");
  if (shape_size(index_shape) != indices.size()) throw ShapeError("embedding: index shape mismatch");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= vocab) {
      throw std::out_of_range("embedding: index " + std::to_string(idx[i]) + " >= vocab " + std::to_string(vocab));
    }
    std::copy_n(table.values().data() + idx[i] * d, d, out.data() + i * d);
  }
  Shape s = index_shape;
  s.push_back(d);
  Node* tn = table.node();
  return make_tensor(std::move(s), std::move(out), {table}, [tn, d, idx = std::move(idx)](const Node& self) {
    if (!tn->requires_grad) return;
    auto& gt = tn->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) gt[idx[i] * d + j] += self.grad[i * d + j];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  for (const Tensor& p : parts) check_defined(p, "concat");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = norm_axis(axis, s0.size(), "concat");
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != s0[i]) throw ShapeError("concat: shapes differ off the concat axis");
    }
    total += s[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s0[i];
  for (std::size_t i = ax + 1; i < s0.size(); ++i) inner *= s0[i];
  Shape out_shape = s0;
  out_shape[ax] = total;
  std::vector<double> out(outer * total * inner);
  std::vector<Node*> nodes;
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape()[ax] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.values().data() + o * w, w, out.data() + o * total * inner + off);
    }
    off += w;
    nodes.push_back(p.node());
    widths.push_back(w);
  }
  return make_tensor(std::move(out_shape), std::move(out), parts,
                     [nodes = std::move(nodes), widths = std::move(widths), outer, row = total * inner](const Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const std::size_t w = widths[k];
      if (nodes[k]->requires_grad) {
        auto& g = nodes[k]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < w; ++j) g[o * w + j] += self.grad[o * row + off + j];
        }
      }
      off += w;
    }
  });
}

Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length) {
  check_defined(a, "slice");
  const Shape& s = a.shape();
  const std::size_t ax = norm_axis(axis, s.size(), "slice");
  if (start + length > s[ax]) throw ShapeError("slice: range exceeds axis length");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t row = s[ax] * inner, w = length * inner, off = start * inner;
  Shape out_shape = s;
  out_shape[ax] = length;
  std::vector<double> out(outer * w);
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(a.values().data() + o * row + off, w, out.data() + o * w);
  Node* an = a.node();
  return make_tensor(std::move(out_shape), std::move(out), {a}, [an, outer, row, w, off](const Node& self) {
    if (!an->requires_grad) return;
    auto& g = an->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < w; ++j) g[o * row + off + j] += self.grad[o * w + j];
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  check_defined(logits, "cross_entropy");
  if (logits.rank() == 0) throw ShapeError("cross_entropy: logits need rank >= 1");
  const std::size_t v = logits.dim(-1);
  const std::size_t rows = v == 0 ? 0 : logits.size() / v;
  if (targets.size() != rows || rows == 0) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) +
                     " rows");
  }
  std::vector<double> probs(logits.size());
  double loss = 0.0;
  const auto& x = logits.values();
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= v) throw std::out_of_range("cross_entropy: target outside vocabulary");
    const double* xr = x.data() + r * v;
    const double mx = *std::max_element(xr, xr + v);
    double s = 0.0;
    for (std::size_t i = 0; i < v; ++i) s += (probs[r * v + i] = std::exp(xr[i] - mx));
    for (std::size_t i = 0; i < v; ++i) probs[r * v + i] /= s;
    loss += std::log(s) + mx - xr[targets[r]];
  }
  loss /= static_cast<double>(rows);
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  Node* ln = logits.node();
  return make_tensor({}, {loss}, {logits}, [ln, v, rows, probs = std::move(probs), tg = std::move(tg)](const Node& self) {
    if (!ln->requires_grad) return;
    auto& g = ln->grad_buffer();
    const double s = self.grad[0] / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < v; ++i) g[r * v + i] += s * probs[r * v + i];
      g[r * v + tg[r]] -= s;
    }
  });
}

Tensor sum(const Tensor& a) {
  check_defined(a, "sum");
  const double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  Node* an = a.node();
  return make_tensor({}, {s}, {a}, [an](const Node& self) {
    if (!an->requires_grad) return;
    for (double& g : an->grad_buffer()) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  check_defined(a, "mean");
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor dropout(const Tensor& a, double p, RngStream& rng, bool training) {
  check_defined(a, "dropout");
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return a;
  const double keep = 1.0 / (1.0 - p);
  std::vector<double> mask(a.size());
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * mask[i];
  Node* an = a.node();
  return make_tensor(a.shape(), std::move(out), {a}, [an, mask = std::move(mask)](const Node& self) {
    if (!an->requires_grad) return;
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, const GradCheckOptions& options) {
  for (Tensor& p : params) p.zero_grad();
  Tensor loss = f();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (const Tensor& p : params) analytic.push_back(p.grad());

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      if (!options.skip || !options.skip(i, j)) coords.emplace_back(i, j);
    }
  }
  if (options.max_coords != 0 && coords.size() > options.max_coords) {
    RngStream rng(options.seed, 0x6772616463ULL);
    for (std::size_t i = 0; i < options.max_coords; ++i) {
      std::swap(coords[i], coords[i + rng.uniform_index(coords.size() - i)]);
    }
    coords.resize(options.max_coords);
  }

  NoGradGuard no_grad;
  std::vector<char> base_signs, signs;
  const auto eval = [&](std::vector<char>* rec) {
    if (rec != nullptr) rec->clear();
    detail::set_relu_recorder(options.exclude_relu_kinks ? rec : nullptr);
    const double v = f().item();
    detail::set_relu_recorder(nullptr);
    return v;
  };
  eval(&base_signs);
  double worst = 0.0;
  for (const auto& [i, j] : coords) {
    double& x = params[i].mutable_values()[j];
    const double x0 = x;
    x = x0 + options.h;
    const double fp = eval(&signs);
    bool kink = signs != base_signs;
    x = x0 - options.h;
    const double fm = eval(&signs);
    kink = kink || signs != base_signs;
    x = x0;
    if (options.exclude_relu_kinks && kink) {
      if (options.n_kinks != nullptr) ++*options.n_kinks;
      continue;
    }
    const double central = (fp - fm) / (2.0 * options.h);
    const double err = std::abs(analytic[i][j] - central) / std::max(options.denominator_floor, std::abs(central));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace qfc
