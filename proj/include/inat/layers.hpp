#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "inat/mask.hpp"
#include "inat/nn_ops.hpp"
#include "inat/tensor.hpp"

namespace inat {

// Counts (query, key) score computations while active. Disabled by default;
// the accounting layer arms it around a forward pass to audit how much
// attention work a code path actually performs.
class PairTally {
public:
  static PairTally& instance() {
    thread_local PairTally tally;
    return tally;
  }

  void arm(int64_t layers) {
    per_layer_.assign(static_cast<size_t>(layers), 0);
    layer_ = 0;
    active_ = true;
  }
  void disarm() {
    active_ = false;
    per_layer_.clear();
  }
  bool active() const { return active_; }
  void set_layer(int64_t l) { layer_ = l; }
  void add(int64_t pairs) {
    if (active_) per_layer_[static_cast<size_t>(layer_)] += pairs;
  }
  const std::vector<int64_t>& per_layer() const { return per_layer_; }
  int64_t total() const { return std::accumulate(per_layer_.begin(), per_layer_.end(), int64_t{0}); }

private:
  PairTally() = default;
  std::vector<int64_t> per_layer_;
  int64_t layer_ = 0;
  bool active_ = false;
};

template <typename Real>
struct LayerNormParams {
  Tensor<Real> gain;
  Tensor<Real> bias;
  Real eps = Real(1e-5);
};

template <typename Real>
struct AttentionParams {
  Tensor<Real> w_q, b_q;
  Tensor<Real> w_k, b_k;
  Tensor<Real> w_v, b_v;
  Tensor<Real> w_o, b_o;
  int64_t heads = 1;

  int64_t width() const { return w_q.dim(0); }
  int64_t head_dim() const { return width() / heads; }
};

template <typename Real>
struct MlpParams {
  Tensor<Real> w_in, b_in;
  Tensor<Real> w_out, b_out;
};

struct RopeConfig {
  double base = 10000.0;
  int64_t rotary_dim = 0;  // must be set to an even value <= head_dim
};

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const LayerNormParams<Real>& p) {
  return layer_norm_rows(x, p.gain, p.bias, p.eps);
}

// Rotary rotation over one sequence's rows; positions must be the absolute
// token indices, strictly increasing.
template <typename Real>
Tensor<Real> rope_apply(const Tensor<Real>& x, const std::vector<int64_t>& positions, int64_t head_dim,
                        const RopeConfig& rope) {
  return rope_rows(x, positions, head_dim, rope.rotary_dim, rope.base);
}

template <typename Real>
Tensor<Real> sdpa(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                  const MaskSpec& mask, Real scale) {
  detail::require_rank2("sdpa", q);
  detail::require_rank2("sdpa", k);
  detail::require_rank2("sdpa", v);
  if (k.dim(0) != v.dim(0))
    throw ShapeError("sdpa: key/value row counts differ, " + shape_str(k.shape()) + " vs " +
                     shape_str(v.shape()));
  if (q.dim(1) != k.dim(1))
    throw ShapeError("sdpa: query/key widths differ, " + shape_str(q.shape()) + " vs " +
                     shape_str(k.shape()));
  auto scores = scale == Real(1) ? matmul(q, transpose(k)) : inat::scale(matmul(q, transpose(k)), scale);
  return matmul(softmax_rows(scores, mask), v);
}

namespace detail {

template <typename Real>
Tensor<Real> project(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
  return add_rowvec(matmul(x, w), b);
}

// Per-head attention over already-projected (and rotated, where applicable)
// q/k/v, followed by head concatenation and the output projection. All heads'
// probability matrices are materialized before mixing — the full masked score
// block, no tiling.
template <typename Real>
Tensor<Real> heads_attend(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                          const AttentionParams<Real>& p, const MaskSpec& mask) {
  // One (query, key) pair per position pair, however many heads score it.
  PairTally::instance().add(mask.total_pairs());
  const int64_t dk = p.head_dim();
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dk));
  std::vector<Tensor<Real>> probs, outs;
  probs.reserve(static_cast<size_t>(p.heads));
  outs.reserve(static_cast<size_t>(p.heads));
  for (int64_t h = 0; h < p.heads; ++h) {
    const int64_t c0 = h * dk, c1 = c0 + dk;
    auto scores = inat::scale(matmul(slice_cols(q, c0, c1), transpose(slice_cols(k, c0, c1))), scale);
    probs.push_back(softmax_rows(scores, mask));
  }
  for (int64_t h = 0; h < p.heads; ++h)
    outs.push_back(matmul(probs[static_cast<size_t>(h)], slice_cols(v, h * dk, (h + 1) * dk)));
  return project(p.heads == 1 ? outs[0] : concat_cols(outs), p.w_o, p.b_o);
}

template <typename Real>
void check_attention(const char* op, const Tensor<Real>& x, const AttentionParams<Real>& p) {
  require_rank2(op, x);
  if (x.dim(1) != p.width())
    throw ShapeError(std::string(op) + ": input width " + std::to_string(x.dim(1)) +
                     " does not match projection width " + std::to_string(p.width()));
  if (p.width() % p.heads != 0)
    throw ConfigError(std::string(op) + ": width " + std::to_string(p.width()) +
                      " not divisible by head count " + std::to_string(p.heads));
}

}  // namespace detail

// Q, K, V all projected from x; RoPE on q and k; causal or sliding mask.
template <typename Real>
Tensor<Real> dense_self_attention(const Tensor<Real>& x, const AttentionParams<Real>& p,
                                  const RopeConfig& rope, const MaskSpec& mask) {
  detail::check_attention("dense_self_attention", x, p);
  if (mask.kind() == MaskKind::InattentionInference)
    throw MaskError("dense_self_attention: mask must be causal or sliding-window");
  if (mask.seq_len() != x.dim(0))
    throw ShapeError("dense_self_attention: mask length " + std::to_string(mask.seq_len()) +
                     " vs sequence length " + std::to_string(x.dim(0)));
  std::vector<int64_t> positions(static_cast<size_t>(x.dim(0)));
  std::iota(positions.begin(), positions.end(), int64_t{0});
  const int64_t dk = p.head_dim();
  auto q = rope_apply(detail::project(x, p.w_q, p.b_q), positions, dk, rope);
  auto k = rope_apply(detail::project(x, p.w_k, p.b_k), positions, dk, rope);
  auto v = detail::project(x, p.w_v, p.b_v);
  return detail::heads_attend(q, k, v, p, mask);
}

// Queries from the hidden states; keys and values from the layer-normed
// initial embeddings, which carry their original positions into RoPE.
template <typename Real>
Tensor<Real> in_attention(const Tensor<Real>& x_hidden, const Tensor<Real>& y_initial,
                          const AttentionParams<Real>& p, const LayerNormParams<Real>& normn,
                          const RopeConfig& rope, const MaskSpec& mask) {
  detail::check_attention("in_attention", x_hidden, p);
  if (x_hidden.shape() != y_initial.shape())
    throw ShapeError("in_attention: hidden shape " + shape_str(x_hidden.shape()) +
                     " differs from initial-state shape " + shape_str(y_initial.shape()));
  if (mask.kind() != MaskKind::DenseCausal)
    throw MaskError("in_attention: mask must be dense-causal");
  if (mask.seq_len() != x_hidden.dim(0))
    throw ShapeError("in_attention: mask length " + std::to_string(mask.seq_len()) +
                     " vs sequence length " + std::to_string(x_hidden.dim(0)));
  std::vector<int64_t> positions(static_cast<size_t>(x_hidden.dim(0)));
  std::iota(positions.begin(), positions.end(), int64_t{0});
  const int64_t dk = p.head_dim();
  auto y = layer_norm(y_initial, normn);
  auto q = rope_apply(detail::project(x_hidden, p.w_q, p.b_q), positions, dk, rope);
  auto k = rope_apply(detail::project(y, p.w_k, p.b_k), positions, dk, rope);
  auto v = detail::project(y, p.w_v, p.b_v);
  return detail::heads_attend(q, k, v, p, mask);
}

template <typename Real>
Tensor<Real> mlp(const Tensor<Real>& x, const MlpParams<Real>& p) {
  return detail::project(gelu(detail::project(x, p.w_in, p.b_in)), p.w_out, p.b_out);
}

}  // namespace inat
