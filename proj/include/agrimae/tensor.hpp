#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "agrimae/errors.hpp"

namespace agrimae {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

// One tape node. Children own their parents, so the graph is a DAG of
// shared_ptrs rooted at whatever handles are still alive.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized iff requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

  std::size_t numel() const { return data.size(); }
  bool leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

inline bool& autograd_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables tape recording for the enclosing scope (forward-only evaluation).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::autograd_enabled()) { detail::autograd_enabled() = false; }
  ~NoGradGuard() { detail::autograd_enabled() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense row-major f64 tensor handle with reverse-mode gradient tracking.
// Copies share the underlying node (value semantics over immutable results;
// only leaf data and grad/optimizer buffers are ever mutated).
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    }
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), value);
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }

  static Tensor scalar(double v) { return from_data({1}, {v}); }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  // 2-D helpers.
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(1); }

  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    if (v) node_->ensure_grad();
    return *this;
  }

  const std::vector<double>& grad() const { return node_->grad; }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
  }

  double value() const {
    if (numel() != 1) throw ShapeError("value() requires a scalar, got shape " + shape_str(shape()));
    return node_->data[0];
  }

  double at(std::size_t i, std::size_t j) const {
    return node_->data[i * cols() + j];
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op_result(Shape shape, std::vector<double> data,
                               std::vector<Tensor> parents,
                               std::function<void(detail::Node&)> backprop);
};

inline Tensor make_op_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                             std::function<void(detail::Node&)> backprop) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool track = detail::autograd_enabled();
  if (track) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    track = any;
  }
  if (track) {
    n->requires_grad = true;
    n->ensure_grad();
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
  }
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  auto pa = a.node().get();
  auto pb = b.node().get();
  return make_op_result(a.shape(), std::move(out), {a, b}, [pa, pb](detail::Node& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  auto pa = a.node().get();
  auto pb = b.node().get();
  return make_op_result(a.shape(), std::move(out), {a, b}, [pa, pb](detail::Node& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  auto pa = a.node().get();
  auto pb = b.node().get();
  return make_op_result(a.shape(), std::move(out), {a, b}, [pa, pb](detail::Node& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->data[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  const auto& ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * c;
  auto pa = a.node().get();
  return make_op_result(a.shape(), std::move(out), {a}, [pa, c](detail::Node& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * c;
  });
}

// The one permitted broadcast: bias added along the last dimension.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() < 1 || bias.dim(0) != x.shape().back()) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match last dim of " +
                     shape_str(x.shape()));
  }
  const std::size_t d = bias.dim(0);
  const std::size_t outer = x.numel() / d;
  std::vector<double> out(x.numel());
  const auto& xd = x.data();
  const auto& bd = bias.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < d; ++j) out[o * d + j] = xd[o * d + j] + bd[j];
  }
  auto px = x.node().get();
  auto pb = bias.node().get();
  return make_op_result(x.shape(), std::move(out), {x, bias}, [px, pb, d, outer](detail::Node& self) {
    if (px->requires_grad) {
      px->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < d; ++j) pb->grad[j] += self.grad[o * d + j];
    }
  });
}

// ---- matmul / transpose ----------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out.data();
    for (std::size_t i = 0; i < m; ++i) {
      double* c = C + i * n;
      const double* arow = A + i * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        const double* brow = B + kk * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
      }
    }
  }
  auto pa = a.node().get();
  auto pb = b.node().get();
  return make_op_result({m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](detail::Node& self) {
    const double* G = self.grad.data();
    if (pa->requires_grad) {
      pa->ensure_grad();
      const double* B = pb->data.data();
      double* dA = pa->grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        double* darow = dA + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double* brow = B + kk * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          darow[kk] += s;
        }
      }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      const double* A = pa->data.data();
      double* dB = pb->grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        const double* arow = A + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double av = arow[kk];
          double* dbrow = dB + kk * n;
          for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
        }
      }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_2d(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto& ad = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
  auto pa = a.node().get();
  return make_op_result({n, m}, std::move(out), {a}, [pa, m, n](detail::Node& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pa->grad[i * n + j] += self.grad[j * m + i];
  });
}

// ---- data movement ---------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: element count mismatch, " + shape_str(a.shape()) + " to " +
                     shape_str(shape));
  }
  std::vector<double> out = a.data();
  auto pa = a.node().get();
  return make_op_result(std::move(shape), std::move(out), {a}, [pa](detail::Node& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
  });
}

inline Tensor gather_rows(const Tensor& a, std::vector<std::size_t> idx) {
  detail::require_2d(a, "gather_rows");
  const std::size_t n = a.rows(), d = a.cols(), m = idx.size();
  for (std::size_t r : idx) {
    if (r >= n) throw ShapeError("gather_rows: index " + std::to_string(r) + " out of range for " +
                                 shape_str(a.shape()));
  }
  std::vector<double> out(m * d);
  const auto& ad = a.data();
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(ad.begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  auto pa = a.node().get();
  return make_op_result({m, d}, std::move(out), {a},
                        [pa, d, idx = std::move(idx)](detail::Node& self) {
                          if (!pa->requires_grad) return;
                          pa->ensure_grad();
                          for (std::size_t r = 0; r < idx.size(); ++r) {
                            const double* g = self.grad.data() + r * d;
                            double* dst = pa->grad.data() + idx[r] * d;
                            for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
                          }
                        });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_rows");
    if (p.cols() != d) {
      throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(rows * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<detail::Node*> raw;
  raw.reserve(parts.size());
  for (const auto& p : parts) raw.push_back(p.node().get());
  return make_op_result({rows, d}, std::move(out), parts, [raw, d](detail::Node& self) {
    std::size_t offset = 0;
    for (detail::Node* p : raw) {
      const std::size_t cnt = p->data.size();
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < cnt; ++i) p->grad[i] += self.grad[offset + i];
      }
      offset += cnt;
    }
    (void)d;
  });
}

inline Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t len) {
  detail::require_2d(a, "slice_cols");
  if (start + len > a.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(n * len);
  const auto& ad = a.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < len; ++j) out[i * len + j] = ad[i * d + start + j];
  auto pa = a.node().get();
  return make_op_result({n, len}, std::move(out), {a}, [pa, start, len, n, d](detail::Node& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < len; ++j) pa->grad[i * d + start + j] += self.grad[i * len + j];
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::size_t d = 0;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_cols");
    if (p.rows() != n) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    d += p.cols();
  }
  std::vector<double> out(n * d);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t pd = p.cols();
    const auto& pdat = p.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < pd; ++j) out[i * d + col + j] = pdat[i * pd + j];
    col += pd;
  }
  std::vector<std::pair<detail::Node*, std::size_t>> raw;  // node, its col offset
  col = 0;
  for (const auto& p : parts) {
    raw.emplace_back(p.node().get(), col);
    col += p.cols();
  }
  return make_op_result({n, d}, std::move(out), parts, [raw, n, d](detail::Node& self) {
    for (auto [p, off] : raw) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      const std::size_t pd = p->shape[1];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < pd; ++j) p->grad[i * pd + j] += self.grad[i * d + off + j];
    }
  });
}

// Repeats a length-D vector (or 1xD matrix) into n identical rows.
inline Tensor repeat_row(const Tensor& v, std::size_t n) {
  std::size_t d = 0;
  if (v.rank() == 1) {
    d = v.dim(0);
  } else if (v.rank() == 2 && v.rows() == 1) {
    d = v.cols();
  } else {
    throw ShapeError("repeat_row: expected [D] or [1xD], got " + shape_str(v.shape()));
  }
  std::vector<double> out(n * d);
  const auto& vd = v.data();
  for (std::size_t i = 0; i < n; ++i) std::copy_n(vd.begin(), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  auto pv = v.node().get();
  return make_op_result({n, d}, std::move(out), {v}, [pv, n, d](detail::Node& self) {
    if (!pv->requires_grad) return;
    pv->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) pv->grad[j] += self.grad[i * d + j];
  });
}

// Multiplies row i of x by the constant weight w[i]. w is not differentiated.
inline Tensor scale_rows(const Tensor& x, std::vector<double> w) {
  detail::require_2d(x, "scale_rows");
  if (w.size() != x.rows()) {
    throw ShapeError("scale_rows: weight length " + std::to_string(w.size()) +
                     " does not match rows of " + shape_str(x.shape()));
  }
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> out(n * d);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xd[i * d + j] * w[i];
  auto px = x.node().get();
  return make_op_result({n, d}, std::move(out), {x}, [px, n, d, w = std::move(w)](detail::Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) px->grad[i * d + j] += self.grad[i * d + j] * w[i];
  });
}

// ---- nonlinearities / normalization ----------------------------------------

inline Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1 || x.shape().back() < 1) {
    throw ShapeError("softmax_lastdim: need last dimension >= 1, got " + shape_str(x.shape()));
  }
  const std::size_t d = x.shape().back();
  const std::size_t outer = x.numel() / d;
  std::vector<double> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const double* row = xd.data() + o * d;
    double mx = row[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    if (!std::isfinite(mx)) throw NumericError("softmax_lastdim: non-finite input");
    double sum = 0.0;
    double* orow = out.data() + o * d;
    for (std::size_t j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < d; ++j) orow[j] *= inv;
  }
  auto px = x.node().get();
  // ds_i = s_i * (g_i - sum_j g_j s_j), computed from the saved output.
  return make_op_result(x.shape(), std::move(out), {x}, [px, d, outer](detail::Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      const double* s = self.data.data() + o * d;
      const double* g = self.grad.data() + o * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += g[j] * s[j];
      double* dx = px->grad.data() + o * d;
      for (std::size_t j = 0; j < d; ++j) dx[j] += s[j] * (g[j] - dot);
    }
  });
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  const std::size_t d = x.shape().back();
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != d || bias.dim(0) != d) {
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                     shape_str(bias.shape()) + " do not match last dim of " + shape_str(x.shape()));
  }
  const std::size_t outer = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_sigma(outer);
  const auto& xd = x.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const double* row = xd.data() + o * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[o] = inv;
    double* hrow = xhat.data() + o * d;
    double* orow = out.data() + o * d;
    for (std::size_t j = 0; j < d; ++j) {
      hrow[j] = (row[j] - mean) * inv;
      orow[j] = hrow[j] * gd[j] + bd[j];
    }
  }
  auto px = x.node().get();
  auto pg = gain.node().get();
  auto pb = bias.node().get();
  return make_op_result(
      x.shape(), std::move(out), {x, gain, bias},
      [px, pg, pb, d, outer, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](detail::Node& self) {
        const double* gd = pg->data.data();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* g = self.grad.data() + o * d;
          const double* h = xhat.data() + o * d;
          if (pg->requires_grad) {
            pg->ensure_grad();
            for (std::size_t j = 0; j < d; ++j) pg->grad[j] += g[j] * h[j];
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t j = 0; j < d; ++j) pb->grad[j] += g[j];
          }
          if (px->requires_grad) {
            px->ensure_grad();
            // dxhat = g * gain; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[j] * gd[j];
              m1 += dh;
              m2 += dh * h[j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            double* dx = px->grad.data() + o * d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[j] * gd[j];
              dx[j] += inv_sigma[o] * (dh - m1 - h[j] * m2);
            }
          }
        }
      });
}

inline Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  std::vector<double> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xd[i] * 0.5 * (1.0 + std::erf(xd[i] * inv_sqrt2));
  }
  auto px = x.node().get();
  return make_op_result(x.shape(), std::move(out), {x}, [px](detail::Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    constexpr double c_inv_sqrt2 = 0.7071067811865475244;
    constexpr double c_inv_sqrt2pi = 0.3989422804014326779;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = px->data[i];
      const double phi = 0.5 * (1.0 + std::erf(v * c_inv_sqrt2));
      const double pdf = c_inv_sqrt2pi * std::exp(-0.5 * v * v);
      px->grad[i] += self.grad[i] * (phi + v * pdf);
    }
  });
}

// ---- reductions ------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto px = x.node().get();
  return make_op_result({1}, {s}, {x}, [px](detail::Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < px->grad.size(); ++i) px->grad[i] += g;
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// Scalar dot product with a constant weight array (w is not differentiated).
inline Tensor weighted_sum(const Tensor& x, std::vector<double> w) {
  if (w.size() != x.numel()) {
    throw ShapeError("weighted_sum: weight length " + std::to_string(w.size()) +
                     " does not match " + shape_str(x.shape()));
  }
  double s = 0.0;
  const auto& xd = x.data();
  for (std::size_t i = 0; i < w.size(); ++i) s += xd[i] * w[i];
  auto px = x.node().get();
  return make_op_result({1}, {s}, {x}, [px, w = std::move(w)](detail::Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < w.size(); ++i) px->grad[i] += g * w[i];
  });
}

// ---- reverse-mode sweep ------------------------------------------------------

// Propagates d(loss)/d(node) through the tape. Leaf (parameter) grads
// accumulate across calls; interior grads are reset each sweep.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ShapeError("backward: loss does not require grad (no parameters reachable)");
  }
  // Iterative post-order DFS.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (detail::Node* n : order) {
    if (!n->leaf()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

}  // namespace agrimae
