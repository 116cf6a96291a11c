#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "inat/common.hpp"
#include "inat/memtrack.hpp"
#include "inat/rng.hpp"

namespace inat {

namespace detail {

// Thread-local switch: when disabled, operations compute values but record
// nothing on the tape, so temporaries are reclaimed as soon as they go out of
// scope. Inference paths run under NoGradGuard.
inline thread_local bool grad_enabled = true;

template <typename Real>
struct Node {
  Shape shape;
  TrackedVec<Real> data;
  TrackedVec<Real> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> grad_fn;

  int64_t numel() const { return shape_numel(shape); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(static_cast<size_t>(numel()), Real(0));
  }
};

}  // namespace detail

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_mode_enabled() { return detail::grad_enabled; }

// Dense row-major tensor handle with reverse-mode autodiff. Copies share the
// underlying node. Operations building new tensors live as free functions
// below; each records its backward rule on the tape when gradients are wanted.
template <typename Real>
class Tensor {
public:
  using Scalar = Real;

  Tensor() = default;

  static Tensor uninit(Shape shape) {
    Tensor t;
    t.node_ = std::make_shared<detail::Node<Real>>();
    t.node_->shape = std::move(shape);
    for (int64_t d : t.node_->shape) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(t.node_->shape));
    }
    t.node_->data.resize(static_cast<size_t>(t.node_->numel()));
    return t;
  }

  static Tensor zeros(Shape shape) {
    Tensor t = uninit(std::move(shape));
    std::fill(t.node_->data.begin(), t.node_->data.end(), Real(0));
    return t;
  }

  static Tensor full(Shape shape, Real value) {
    Tensor t = uninit(std::move(shape));
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
  }

  static Tensor from_vector(Shape shape, const std::vector<Real>& values) {
    Tensor t = uninit(std::move(shape));
    if (static_cast<int64_t>(values.size()) != t.numel())
      throw ShapeError("from_vector: " + std::to_string(values.size()) + " values for shape " +
                       shape_str(t.shape()));
    std::copy(values.begin(), values.end(), t.node_->data.begin());
    return t;
  }

  static Tensor scalar(Real value) { return full({}, value); }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0) {
    Tensor t = uninit(std::move(shape));
    for (auto& x : t.node_->data) x = static_cast<Real>(rng.normal(mean, stddev));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return node_->numel(); }
  int64_t rows() const { return rank() == 0 ? 1 : dim(0); }
  int64_t cols() const { return rank() == 0 ? 1 : numel() / dim(0); }

  std::span<const Real> data() const { return {node_->data.data(), node_->data.size()}; }
  std::span<Real> mutable_data() { return {node_->data.data(), node_->data.size()}; }
  Real item() const {
    if (numel() != 1) throw ShapeError("item: tensor with shape " + shape_str(shape()) + " is not a scalar");
    return node_->data[0];
  }
  Real at(int64_t r, int64_t c) const { return node_->data[static_cast<size_t>(r * cols() + c)]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return {node_->grad.data(), node_->grad.size()}; }
  std::span<Real> mutable_grad() {
    node_->ensure_grad();
    return {node_->grad.data(), node_->grad.size()};
  }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
  }

  // Reverse pass from a scalar. Traversal order is a fixed function of the
  // graph construction order, so gradient accumulation is deterministic.
  void backward() const {
    if (!node_ || numel() != 1)
      throw ShapeError("backward: loss must be a scalar tensor, got shape " +
                       (node_ ? shape_str(shape()) : std::string("<null>")));
    using NodeT = detail::Node<Real>;
    NodeT* root = node_.get();
    root->ensure_grad();
    root->grad[0] = Real(1);
    if (!root->grad_fn && !root->requires_grad) return;

    std::vector<NodeT*> topo;
    std::unordered_set<NodeT*> visited;
    struct Frame {
      NodeT* n;
      size_t next;
    };
    std::vector<Frame> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.n->parents.size()) {
        NodeT* p = f.n->parents[f.next++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        topo.push_back(f.n);
        stack.pop_back();
      }
    }
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      if ((*it)->grad_fn) (*it)->grad_fn(**it);
    }
  }

  std::shared_ptr<detail::Node<Real>>& node() { return node_; }
  const std::shared_ptr<detail::Node<Real>>& node() const { return node_; }

private:
  std::shared_ptr<detail::Node<Real>> node_;
};

namespace detail {

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatMap = Eigen::Map<Mat<Real>>;
template <typename Real>
using CMatMap = Eigen::Map<const Mat<Real>>;
template <typename Real>
using ArrMap = Eigen::Map<Eigen::Array<Real, Eigen::Dynamic, 1>>;
template <typename Real>
using CArrMap = Eigen::Map<const Eigen::Array<Real, Eigen::Dynamic, 1>>;

template <typename Real>
MatMap<Real> as_matrix(Node<Real>& n, int64_t r, int64_t c) {
  return MatMap<Real>(n.data.data(), r, c);
}
template <typename Real>
CMatMap<Real> as_cmatrix(const Node<Real>& n, int64_t r, int64_t c) {
  return CMatMap<Real>(n.data.data(), r, c);
}
template <typename Real>
MatMap<Real> grad_matrix(Node<Real>& n, int64_t r, int64_t c) {
  n.ensure_grad();
  return MatMap<Real>(n.grad.data(), r, c);
}
template <typename Real>
CMatMap<Real> out_grad(const Node<Real>& n, int64_t r, int64_t c) {
  return CMatMap<Real>(n.grad.data(), r, c);
}

template <typename Real>
void check_finite(const char* op, const Node<Real>& n) {
  CArrMap<Real> a(n.data.data(), static_cast<Eigen::Index>(n.data.size()));
  if (!a.allFinite()) throw NumericError(std::string(op) + ": non-finite value in result");
}

// Attaches parents and a backward rule when grad recording is active.
template <typename Real, typename Fn>
void attach(Tensor<Real>& out, std::vector<Tensor<Real>> parents, Fn&& fn) {
  if (!grad_enabled) return;
  bool wants = false;
  for (const auto& p : parents) wants = wants || p.requires_grad();
  if (!wants) return;
  auto& node = *out.node();
  node.requires_grad = true;
  node.parents.reserve(parents.size());
  for (auto& p : parents) node.parents.push_back(p.node());
  node.grad_fn = std::forward<Fn>(fn);
}

template <typename Real>
void require_same_shape(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename Real>
void require_rank2(const char* op, const Tensor<Real>& t) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got shape " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural operations
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape("add", a, b);
  auto out = Tensor<Real>::uninit(a.shape());
  const int64_t n = a.numel();
  detail::ArrMap<Real>(out.node()->data.data(), n) =
      detail::CArrMap<Real>(a.data().data(), n) + detail::CArrMap<Real>(b.data().data(), n);
  detail::check_finite("add", *out.node());
  detail::attach(out, {a, b}, [n](detail::Node<Real>& self) {
    detail::CArrMap<Real> g(self.grad.data(), n);
    for (int i = 0; i < 2; ++i) {
      auto& p = *self.parents[static_cast<size_t>(i)];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      detail::ArrMap<Real>(p.grad.data(), n) += g;
    }
  });
  return out;
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape("sub", a, b);
  auto out = Tensor<Real>::uninit(a.shape());
  const int64_t n = a.numel();
  detail::ArrMap<Real>(out.node()->data.data(), n) =
      detail::CArrMap<Real>(a.data().data(), n) - detail::CArrMap<Real>(b.data().data(), n);
  detail::check_finite("sub", *out.node());
  detail::attach(out, {a, b}, [n](detail::Node<Real>& self) {
    detail::CArrMap<Real> g(self.grad.data(), n);
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      detail::ArrMap<Real>(pa.grad.data(), n) += g;
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      detail::ArrMap<Real>(pb.grad.data(), n) -= g;
    }
  });
  return out;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape("mul", a, b);
  auto out = Tensor<Real>::uninit(a.shape());
  const int64_t n = a.numel();
  detail::ArrMap<Real>(out.node()->data.data(), n) =
      detail::CArrMap<Real>(a.data().data(), n) * detail::CArrMap<Real>(b.data().data(), n);
  detail::check_finite("mul", *out.node());
  detail::attach(out, {a, b}, [n](detail::Node<Real>& self) {
    detail::CArrMap<Real> g(self.grad.data(), n);
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      detail::ArrMap<Real>(pa.grad.data(), n) += g * detail::CArrMap<Real>(pb.data.data(), n);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      detail::ArrMap<Real>(pb.grad.data(), n) += g * detail::CArrMap<Real>(pa.data.data(), n);
    }
  });
  return out;
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
  auto out = Tensor<Real>::uninit(a.shape());
  const int64_t n = a.numel();
  detail::ArrMap<Real>(out.node()->data.data(), n) = detail::CArrMap<Real>(a.data().data(), n) * factor;
  detail::check_finite("scale", *out.node());
  detail::attach(out, {a}, [n, factor](detail::Node<Real>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    detail::ArrMap<Real>(p.grad.data(), n) += detail::CArrMap<Real>(self.grad.data(), n) * factor;
  });
  return out;
}

// Adds a length-n row vector to every row of an [m, n] tensor.
template <typename Real>
Tensor<Real> add_rowvec(const Tensor<Real>& x, const Tensor<Real>& b) {
  detail::require_rank2("add_rowvec", x);
  if (b.rank() != 1 || b.dim(0) != x.dim(1))
    throw ShapeError("add_rowvec: bias shape " + shape_str(b.shape()) + " does not match " +
                     shape_str(x.shape()));
  const int64_t m = x.dim(0), n = x.dim(1);
  auto out = Tensor<Real>::uninit(x.shape());
  detail::as_matrix(*out.node(), m, n) =
      detail::as_cmatrix(*x.node(), m, n).rowwise() +
      Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(b.data().data(), n);
  detail::check_finite("add_rowvec", *out.node());
  detail::attach(out, {x, b}, [m, n](detail::Node<Real>& self) {
    auto g = detail::out_grad(self, m, n);
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    if (px.requires_grad) {
      px.ensure_grad();
      detail::grad_matrix(px, m, n) += g;
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>(pb.grad.data(), n) += g.colwise().sum();
    }
  });
  return out;
}

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_rank2("matmul", a);
  detail::require_rank2("matmul", b);
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = Tensor<Real>::uninit({m, n});
  detail::as_matrix(*out.node(), m, n).noalias() =
      detail::as_cmatrix(*a.node(), m, k) * detail::as_cmatrix(*b.node(), k, n);
  detail::check_finite("matmul", *out.node());
  detail::attach(out, {a, b}, [m, k, n](detail::Node<Real>& self) {
    auto g = detail::out_grad(self, m, n);
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      detail::grad_matrix(pa, m, k).noalias() += g * detail::as_cmatrix(pb, k, n).transpose();
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      detail::grad_matrix(pb, k, n).noalias() += detail::as_cmatrix(pa, m, k).transpose() * g;
    }
  });
  return out;
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
  detail::require_rank2("transpose", a);
  const int64_t m = a.dim(0), n = a.dim(1);
  auto out = Tensor<Real>::uninit({n, m});
  detail::as_matrix(*out.node(), n, m) = detail::as_cmatrix(*a.node(), m, n).transpose();
  detail::attach(out, {a}, [m, n](detail::Node<Real>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    detail::grad_matrix(p, m, n) += detail::out_grad(self, n, m).transpose();
  });
  return out;
}

// Rows [r0, r1) of a rank-2 tensor (slicing along the sequence axis).
template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& a, int64_t r0, int64_t r1) {
  detail::require_rank2("slice_rows", a);
  if (r0 < 0 || r1 > a.dim(0) || r0 >= r1)
    throw ShapeError("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                     ") invalid for shape " + shape_str(a.shape()));
  const int64_t n = a.dim(1), rows = r1 - r0;
  auto out = Tensor<Real>::uninit({rows, n});
  detail::as_matrix(*out.node(), rows, n) = detail::as_cmatrix(*a.node(), a.dim(0), n).middleRows(r0, rows);
  detail::attach(out, {a}, [r0, rows, n](detail::Node<Real>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    detail::grad_matrix(p, p.shape[0], n).middleRows(r0, rows) += detail::out_grad(self, rows, n);
  });
  return out;
}

// Columns [c0, c1) of a rank-2 tensor (slicing out one attention head).
template <typename Real>
Tensor<Real> slice_cols(const Tensor<Real>& a, int64_t c0, int64_t c1) {
  detail::require_rank2("slice_cols", a);
  if (c0 < 0 || c1 > a.dim(1) || c0 >= c1)
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                     ") invalid for shape " + shape_str(a.shape()));
  const int64_t m = a.dim(0), n = a.dim(1), cols = c1 - c0;
  auto out = Tensor<Real>::uninit({m, cols});
  detail::as_matrix(*out.node(), m, cols) = detail::as_cmatrix(*a.node(), m, n).middleCols(c0, cols);
  detail::attach(out, {a}, [m, n, c0, cols](detail::Node<Real>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    detail::grad_matrix(p, m, n).middleCols(c0, cols) += detail::out_grad(self, m, cols);
  });
  return out;
}

template <typename Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no tensors given");
  const int64_t m = parts[0].rank() == 2 ? parts[0].dim(0) : -1;
  int64_t cols = 0;
  for (const auto& p : parts) {
    detail::require_rank2("concat_cols", p);
    if (p.dim(0) != m)
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    cols += p.dim(1);
  }
  auto out = Tensor<Real>::uninit({m, cols});
  auto mat = detail::as_matrix(*out.node(), m, cols);
  int64_t c = 0;
  for (const auto& p : parts) {
    mat.middleCols(c, p.dim(1)) = detail::as_cmatrix(*p.node(), m, p.dim(1));
    c += p.dim(1);
  }
  detail::attach(out, parts, [m, cols](detail::Node<Real>& self) {
    auto g = detail::out_grad(self, m, cols);
    int64_t c = 0;
    for (auto& pp : self.parents) {
      auto& p = *pp;
      const int64_t pc = p.shape[1];
      if (p.requires_grad) {
        p.ensure_grad();
        detail::grad_matrix(p, m, pc) += g.middleCols(c, pc);
      }
      c += pc;
    }
  });
  return out;
}

template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no tensors given");
  const int64_t n = parts[0].rank() == 2 ? parts[0].dim(1) : -1;
  int64_t rows = 0;
  for (const auto& p : parts) {
    detail::require_rank2("concat_rows", p);
    if (p.dim(1) != n)
      throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    rows += p.dim(0);
  }
  auto out = Tensor<Real>::uninit({rows, n});
  auto m = detail::as_matrix(*out.node(), rows, n);
  int64_t r = 0;
  for (const auto& p : parts) {
    m.middleRows(r, p.dim(0)) = detail::as_cmatrix(*p.node(), p.dim(0), n);
    r += p.dim(0);
  }
  detail::attach(out, parts, [rows, n](detail::Node<Real>& self) {
    auto g = detail::out_grad(self, rows, n);
    int64_t r = 0;
    for (auto& pp : self.parents) {
      auto& p = *pp;
      int64_t pr = p.shape[0];
      if (p.requires_grad) {
        p.ensure_grad();
        detail::grad_matrix(p, pr, n) += g.middleRows(r, pr);
      }
      r += pr;
    }
  });
  return out;
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  auto out = Tensor<Real>::uninit(std::move(shape));
  if (out.numel() != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(out.shape()));
  std::copy(a.data().begin(), a.data().end(), out.mutable_data().begin());
  detail::attach(out, {a}, [](detail::Node<Real>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions (fixed left-to-right accumulation)
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real acc = 0;
  for (Real v : a.data()) acc += v;
  auto out = Tensor<Real>::scalar(acc);
  detail::check_finite("sum", *out.node());
  detail::attach(out, {a}, [](detail::Node<Real>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const Real g = self.grad[0];
    for (auto& x : p.grad) x += g;
  });
  return out;
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  Real acc = 0;
  for (Real v : a.data()) acc += v;
  const Real inv = Real(1) / static_cast<Real>(a.numel());
  auto out = Tensor<Real>::scalar(acc * inv);
  detail::check_finite("mean", *out.node());
  detail::attach(out, {a}, [inv](detail::Node<Real>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const Real g = self.grad[0] * inv;
    for (auto& x : p.grad) x += g;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

namespace detail {
template <typename Real>
inline Real gelu_value(Real x) {
  return Real(0.5) * x * (Real(1) + std::erf(x * Real(M_SQRT1_2)));
}
template <typename Real>
inline Real gelu_deriv(Real x) {
  const Real phi = std::exp(Real(-0.5) * x * x) * Real(0.3989422804014326779);
  return Real(0.5) * (Real(1) + std::erf(x * Real(M_SQRT1_2))) + x * phi;
}
}  // namespace detail

template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& a) {
  auto out = Tensor<Real>::uninit(a.shape());
  const auto src = a.data();
  auto dst = out.mutable_data();
  for (size_t i = 0; i < src.size(); ++i) dst[i] = detail::gelu_value(src[i]);
  detail::check_finite("gelu", *out.node());
  detail::attach(out, {a}, [](detail::Node<Real>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < p.data.size(); ++i) p.grad[i] += self.grad[i] * detail::gelu_deriv(p.data[i]);
  });
  return out;
}

}  // namespace inat
