#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "inat/mask.hpp"
#include "inat/tensor.hpp"

namespace inat {

using KeySpan = std::pair<int64_t, int64_t>;

namespace detail {

template <typename Real>
void softmax_forward_spans(const Real* x, Real* y, int64_t m, int64_t n,
                           const std::vector<KeySpan>& spans) {
  for (int64_t i = 0; i < m; ++i) {
    const auto [lo, hi] = spans[static_cast<size_t>(i)];
    if (lo < 0 || hi > n || lo >= hi)
      throw MaskError("softmax_rows: row " + std::to_string(i) + " has degenerate key span [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + ")");
    const Real* xr = x + i * n;
    Real* yr = y + i * n;
    Real mx = xr[lo];
    for (int64_t j = lo + 1; j < hi; ++j) mx = std::max(mx, xr[j]);
    Real denom = 0;
    for (int64_t j = 0; j < lo; ++j) yr[j] = Real(0);
    for (int64_t j = lo; j < hi; ++j) {
      const Real e = std::exp(xr[j] - mx);
      yr[j] = e;
      denom += e;
    }
    for (int64_t j = hi; j < n; ++j) yr[j] = Real(0);
    const Real inv = Real(1) / denom;
    for (int64_t j = lo; j < hi; ++j) yr[j] *= inv;
  }
}

}  // namespace detail

// Row softmax restricted to one contiguous key span per row; entries outside
// the span are exactly zero and receive no gradient.
template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& x, const std::vector<KeySpan>& spans) {
  detail::require_rank2("softmax_rows", x);
  const int64_t m = x.dim(0), n = x.dim(1);
  if (static_cast<int64_t>(spans.size()) != m)
    throw ShapeError("softmax_rows: " + std::to_string(spans.size()) + " spans for " +
                     std::to_string(m) + " rows");
  auto out = Tensor<Real>::uninit(x.shape());
  detail::softmax_forward_spans(x.data().data(), out.mutable_data().data(), m, n, spans);
  detail::check_finite("softmax_rows", *out.node());
  detail::attach(out, {x}, [m, n, spans](detail::Node<Real>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t i = 0; i < m; ++i) {
      const auto [lo, hi] = spans[static_cast<size_t>(i)];
      const Real* y = self.data.data() + i * n;
      const Real* g = self.grad.data() + i * n;
      Real* dx = p.grad.data() + i * n;
      Real dot = 0;
      for (int64_t j = lo; j < hi; ++j) dot += g[j] * y[j];
      for (int64_t j = lo; j < hi; ++j) dx[j] += y[j] * (g[j] - dot);
    }
  });
  return out;
}

template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& x, const MaskSpec& mask) {
  detail::require_rank2("softmax_rows", x);
  if (x.dim(0) != mask.query_rows() || x.dim(1) != mask.seq_len())
    throw ShapeError("softmax_rows: score shape " + shape_str(x.shape()) + " does not match mask (" +
                     std::to_string(mask.query_rows()) + " query rows over " +
                     std::to_string(mask.seq_len()) + " keys)");
  std::vector<KeySpan> spans;
  spans.reserve(static_cast<size_t>(x.dim(0)));
  for (int64_t t = 0; t < x.dim(0); ++t) spans.push_back(mask.key_range(t));
  return softmax_rows(x, spans);
}

template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& x) {
  detail::require_rank2("softmax_rows", x);
  return softmax_rows(x, std::vector<KeySpan>(static_cast<size_t>(x.dim(0)), {0, x.dim(1)}));
}

// Per-row standardization followed by the affine map gain ⊙ xhat + bias.
template <typename Real>
Tensor<Real> layer_norm_rows(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                             Real eps) {
  detail::require_rank2("layer_norm_rows", x);
  const int64_t m = x.dim(0), n = x.dim(1);
  if (gain.rank() != 1 || gain.dim(0) != n || bias.rank() != 1 || bias.dim(0) != n)
    throw ShapeError("layer_norm_rows: gain/bias shapes " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
  if (!(eps > Real(0))) throw ConfigError("layer_norm_rows: eps must be positive");
  auto out = Tensor<Real>::uninit(x.shape());
  const Real* xd = x.data().data();
  const Real* gd = gain.data().data();
  const Real* bd = bias.data().data();
  Real* yd = out.mutable_data().data();
  const Real invn = Real(1) / static_cast<Real>(n);
  for (int64_t i = 0; i < m; ++i) {
    const Real* xr = xd + i * n;
    Real* yr = yd + i * n;
    Real mu = 0;
    for (int64_t j = 0; j < n; ++j) mu += xr[j];
    mu *= invn;
    Real var = 0;
    for (int64_t j = 0; j < n; ++j) {
      const Real c = xr[j] - mu;
      var += c * c;
    }
    var *= invn;
    const Real rstd = Real(1) / std::sqrt(var + eps);
    for (int64_t j = 0; j < n; ++j) yr[j] = (xr[j] - mu) * rstd * gd[j] + bd[j];
  }
  detail::check_finite("layer_norm_rows", *out.node());
  detail::attach(out, {x, gain, bias}, [m, n, eps, invn](detail::Node<Real>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    if (px.requires_grad) px.ensure_grad();
    if (pg.requires_grad) pg.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    AlignedVec<Real> xhat(static_cast<size_t>(n));
    for (int64_t i = 0; i < m; ++i) {
      const Real* xr = px.data.data() + i * n;
      const Real* g = self.grad.data() + i * n;
      Real mu = 0;
      for (int64_t j = 0; j < n; ++j) mu += xr[j];
      mu *= invn;
      Real var = 0;
      for (int64_t j = 0; j < n; ++j) {
        const Real c = xr[j] - mu;
        var += c * c;
      }
      var *= invn;
      const Real rstd = Real(1) / std::sqrt(var + eps);
      for (int64_t j = 0; j < n; ++j) xhat[static_cast<size_t>(j)] = (xr[j] - mu) * rstd;
      if (pg.requires_grad)
        for (int64_t j = 0; j < n; ++j) pg.grad[static_cast<size_t>(j)] += g[j] * xhat[static_cast<size_t>(j)];
      if (pb.requires_grad)
        for (int64_t j = 0; j < n; ++j) pb.grad[static_cast<size_t>(j)] += g[j];
      if (px.requires_grad) {
        Real sum_dxhat = 0, sum_dxhat_xhat = 0;
        const Real* gd2 = pg.data.data();
        for (int64_t j = 0; j < n; ++j) {
          const Real dxh = g[j] * gd2[j];
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xhat[static_cast<size_t>(j)];
        }
        Real* dx = px.grad.data() + i * n;
        for (int64_t j = 0; j < n; ++j) {
          const Real dxh = g[j] * gd2[j];
          dx[j] += rstd * (dxh - invn * sum_dxhat - xhat[static_cast<size_t>(j)] * invn * sum_dxhat_xhat);
        }
      }
    }
  });
  return out;
}

// Gathers table rows by token id; the backward pass scatter-adds into the
// table gradient in fixed ascending row order.
template <typename Real>
Tensor<Real> embedding_rows(const Tensor<Real>& table, const std::vector<int32_t>& ids) {
  detail::require_rank2("embedding_rows", table);
  if (ids.empty()) throw ShapeError("embedding_rows: empty id list");
  const int64_t V = table.dim(0), d = table.dim(1);
  for (size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || ids[i] >= V)
      throw Error("embedding_rows: token id " + std::to_string(ids[i]) + " at position " +
                  std::to_string(i) + " out of range [0, " + std::to_string(V) + ")");
  const int64_t T = static_cast<int64_t>(ids.size());
  auto out = Tensor<Real>::uninit({T, d});
  const Real* src = table.data().data();
  Real* dst = out.mutable_data().data();
  for (int64_t i = 0; i < T; ++i)
    std::copy(src + ids[static_cast<size_t>(i)] * d, src + (ids[static_cast<size_t>(i)] + 1) * d,
              dst + i * d);
  detail::attach(out, {table}, [ids, d](detail::Node<Real>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i) {
      const Real* g = self.grad.data() + static_cast<int64_t>(i) * d;
      Real* dst2 = p.grad.data() + ids[i] * d;
      for (int64_t j = 0; j < d; ++j) dst2[j] += g[j];
    }
  });
  return out;
}

// Mean cross-entropy of logits rows against integer targets, with the
// log-sum-exp evaluated max-subtracted.
template <typename Real>
Tensor<Real> cross_entropy_mean(const Tensor<Real>& logits, const std::vector<int32_t>& targets) {
  detail::require_rank2("cross_entropy_mean", logits);
  const int64_t N = logits.dim(0), V = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != N)
    throw ShapeError("cross_entropy_mean: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(N) + " logit rows");
  for (size_t i = 0; i < targets.size(); ++i)
    if (targets[i] < 0 || targets[i] >= V)
      throw Error("cross_entropy_mean: target id " + std::to_string(targets[i]) + " at row " +
                  std::to_string(i) + " out of range [0, " + std::to_string(V) + ")");
  const Real* xd = logits.data().data();
  Real acc = 0;
  for (int64_t i = 0; i < N; ++i) {
    const Real* xr = xd + i * V;
    Real mx = xr[0];
    for (int64_t j = 1; j < V; ++j) mx = std::max(mx, xr[j]);
    Real denom = 0;
    for (int64_t j = 0; j < V; ++j) denom += std::exp(xr[j] - mx);
    acc += mx + std::log(denom) - xr[targets[static_cast<size_t>(i)]];
  }
  auto out = Tensor<Real>::scalar(acc / static_cast<Real>(N));
  detail::check_finite("cross_entropy_mean", *out.node());
  detail::attach(out, {logits}, [targets, N, V](detail::Node<Real>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const Real scale = self.grad[0] / static_cast<Real>(N);
    for (int64_t i = 0; i < N; ++i) {
      const Real* xr = p.data.data() + i * V;
      Real* dx = p.grad.data() + i * V;
      Real mx = xr[0];
      for (int64_t j = 1; j < V; ++j) mx = std::max(mx, xr[j]);
      Real denom = 0;
      for (int64_t j = 0; j < V; ++j) denom += std::exp(xr[j] - mx);
      const Real inv = Real(1) / denom;
      for (int64_t j = 0; j < V; ++j) dx[j] += scale * std::exp(xr[j] - mx) * inv;
      dx[targets[static_cast<size_t>(i)]] -= scale;
    }
  });
  return out;
}

// Rotary position rotation applied in place across heads: x is [T, H·head_dim]
// and pair (2j, 2j+1) of each head's leading rotary_dim lanes is rotated by
// pos·base^(−2j/rotary_dim). Angles are evaluated in double regardless of Real.
template <typename Real>
Tensor<Real> rope_rows(const Tensor<Real>& x, const std::vector<int64_t>& positions, int64_t head_dim,
                       int64_t rotary_dim, double base) {
  detail::require_rank2("rope_rows", x);
  const int64_t T = x.dim(0), width = x.dim(1);
  if (rotary_dim % 2 != 0) throw ConfigError("rope_rows: rotary_dim must be even, got " + std::to_string(rotary_dim));
  if (rotary_dim < 2 || rotary_dim > head_dim)
    throw ConfigError("rope_rows: rotary_dim " + std::to_string(rotary_dim) + " outside [2, head_dim=" +
                      std::to_string(head_dim) + "]");
  if (head_dim < 1 || width % head_dim != 0)
    throw ShapeError("rope_rows: width " + std::to_string(width) + " not a multiple of head_dim " +
                     std::to_string(head_dim));
  if (static_cast<int64_t>(positions.size()) != T)
    throw ShapeError("rope_rows: " + std::to_string(positions.size()) + " positions for " +
                     std::to_string(T) + " rows");
  for (size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] < 0) throw ConfigError("rope_rows: negative position " + std::to_string(positions[i]));
    if (i > 0 && positions[i] <= positions[i - 1])
      throw ConfigError("rope_rows: positions must be strictly increasing");
  }
  const int64_t H = width / head_dim, half = rotary_dim / 2;
  // cos/sin per (row, pair); shared across heads.
  AlignedVec<Real> cs(static_cast<size_t>(T * half)), sn(static_cast<size_t>(T * half));
  for (int64_t t = 0; t < T; ++t)
    for (int64_t j = 0; j < half; ++j) {
      const double theta = static_cast<double>(positions[static_cast<size_t>(t)]) *
                           std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(rotary_dim));
      cs[static_cast<size_t>(t * half + j)] = static_cast<Real>(std::cos(theta));
      sn[static_cast<size_t>(t * half + j)] = static_cast<Real>(std::sin(theta));
    }
  auto out = Tensor<Real>::uninit(x.shape());
  const Real* src = x.data().data();
  Real* dst = out.mutable_data().data();
  std::copy(src, src + x.numel(), dst);
  for (int64_t t = 0; t < T; ++t)
    for (int64_t h = 0; h < H; ++h) {
      Real* row = dst + t * width + h * head_dim;
      for (int64_t j = 0; j < half; ++j) {
        const Real c = cs[static_cast<size_t>(t * half + j)], s = sn[static_cast<size_t>(t * half + j)];
        const Real a = row[2 * j], b = row[2 * j + 1];
        row[2 * j] = a * c - b * s;
        row[2 * j + 1] = a * s + b * c;
      }
    }
  detail::check_finite("rope_rows", *out.node());
  detail::attach(out, {x}, [T, H, width, head_dim, half, cs, sn](detail::Node<Real>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t t = 0; t < T; ++t)
      for (int64_t h = 0; h < H; ++h) {
        const Real* g = self.grad.data() + t * width + h * head_dim;
        Real* dx = p.grad.data() + t * width + h * head_dim;
        for (int64_t j = 0; j < half; ++j) {
          const Real c = cs[static_cast<size_t>(t * half + j)], s = sn[static_cast<size_t>(t * half + j)];
          dx[2 * j] += g[2 * j] * c + g[2 * j + 1] * s;
          dx[2 * j + 1] += -g[2 * j] * s + g[2 * j + 1] * c;
        }
        for (int64_t j = 2 * half; j < head_dim; ++j) dx[j] += g[j];
      }
  });
  return out;
}

}  // namespace inat
