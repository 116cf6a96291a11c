#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "inat/layers.hpp"
#include "inat/mask.hpp"
#include "inat/nn_ops.hpp"
#include "inat/rng.hpp"
#include "inat/tensor.hpp"

namespace inat {

enum class Variant { Dense, Inattention };

inline const char* variant_name(Variant v) { return v == Variant::Dense ? "dense" : "inattention"; }

inline Variant variant_from_name(const std::string& s) {
  if (s == "dense") return Variant::Dense;
  if (s == "inattention") return Variant::Inattention;
  throw ConfigError("unknown variant '" + s + "' (expected dense or inattention)");
}

enum class ElemWidth { F32, F64 };

inline int64_t width_bytes(ElemWidth w) { return w == ElemWidth::F32 ? 4 : 8; }
inline const char* width_name(ElemWidth w) { return w == ElemWidth::F32 ? "f32" : "f64"; }
inline ElemWidth width_from_name(const std::string& s) {
  if (s == "f32") return ElemWidth::F32;
  if (s == "f64") return ElemWidth::F64;
  throw ConfigError("unknown element width '" + s + "' (expected f32 or f64)");
}

struct ModelConfig {
  Variant variant = Variant::Dense;
  int64_t d = 128;
  int64_t f = 4;
  int64_t L = 4;
  int64_t H = 4;
  int64_t vocab = 257;
  RopeConfig rope{10000.0, 0};  // rotary_dim 0 = full head, resolved by validate()
  double ln_eps = 1e-5;
  ElemWidth width = ElemWidth::F32;

  int64_t head_dim() const { return d / H; }

  void validate() {
    if (d < 2) throw ConfigError("model: d must be >= 2, got " + std::to_string(d));
    if (H < 1) throw ConfigError("model: H must be >= 1, got " + std::to_string(H));
    if (d % H != 0)
      throw ConfigError("model: d=" + std::to_string(d) + " not divisible by H=" + std::to_string(H));
    if (L < 1) throw ConfigError("model: L must be >= 1, got " + std::to_string(L));
    if (f < 1) throw ConfigError("model: f must be >= 1, got " + std::to_string(f));
    if (vocab < 1) throw ConfigError("model: vocab must be >= 1, got " + std::to_string(vocab));
    if (!(ln_eps > 0)) throw ConfigError("model: ln_eps must be positive");
    if (rope.rotary_dim == 0) rope.rotary_dim = head_dim();
    if (rope.rotary_dim % 2 != 0 || rope.rotary_dim < 2 || rope.rotary_dim > head_dim())
      throw ConfigError("model: rotary_dim " + std::to_string(rope.rotary_dim) +
                        " must be even and in [2, " + std::to_string(head_dim()) + "]");
    if (!(rope.base > 0)) throw ConfigError("model: rope base must be positive");
  }
};

template <typename Real>
struct BlockParams {
  LayerNormParams<Real> ln1;
  std::optional<LayerNormParams<Real>> normn;  // inattention only
  AttentionParams<Real> attn;
  LayerNormParams<Real> ln2;
  MlpParams<Real> mlp;
};

template <typename Real>
struct ModelParams {
  ModelConfig config;
  Tensor<Real> embedding;  // [V, d]
  std::vector<BlockParams<Real>> blocks;
  LayerNormParams<Real> final_ln;
  Tensor<Real> decoder;  // [d, V], no bias, untied

  // Canonical parameter order: checkpoint manifests, the optimizer, and
  // gradient walks all iterate this way.
  template <typename Fn>
  void for_each(Fn&& fn) {
    fn("embedding", embedding);
    for (size_t i = 0; i < blocks.size(); ++i) {
      auto& b = blocks[i];
      const std::string prefix = "blocks." + std::to_string(i) + ".";
      fn(prefix + "ln1.gain", b.ln1.gain);
      fn(prefix + "ln1.bias", b.ln1.bias);
      if (b.normn) {
        fn(prefix + "normn.gain", b.normn->gain);
        fn(prefix + "normn.bias", b.normn->bias);
      }
      fn(prefix + "attn.w_q", b.attn.w_q);
      fn(prefix + "attn.b_q", b.attn.b_q);
      fn(prefix + "attn.w_k", b.attn.w_k);
      fn(prefix + "attn.b_k", b.attn.b_k);
      fn(prefix + "attn.w_v", b.attn.w_v);
      fn(prefix + "attn.b_v", b.attn.b_v);
      fn(prefix + "attn.w_o", b.attn.w_o);
      fn(prefix + "attn.b_o", b.attn.b_o);
      fn(prefix + "ln2.gain", b.ln2.gain);
      fn(prefix + "ln2.bias", b.ln2.bias);
      fn(prefix + "mlp.w_in", b.mlp.w_in);
      fn(prefix + "mlp.b_in", b.mlp.b_in);
      fn(prefix + "mlp.w_out", b.mlp.w_out);
      fn(prefix + "mlp.b_out", b.mlp.b_out);
    }
    fn("final_ln.gain", final_ln.gain);
    fn("final_ln.bias", final_ln.bias);
    fn("decoder", decoder);
  }

  void set_requires_grad(bool v) {
    for_each([v](const std::string&, Tensor<Real>& t) { t.set_requires_grad(v); });
  }

  void zero_grad() {
    for_each([](const std::string&, Tensor<Real>& t) { t.zero_grad(); });
  }

  int64_t count() const {
    int64_t n = 0;
    const_cast<ModelParams*>(this)->for_each([&n](const std::string&, Tensor<Real>& t) { n += t.numel(); });
    return n;
  }
};

namespace detail {

template <typename Real>
LayerNormParams<Real> make_layer_norm(int64_t d, double eps) {
  return {Tensor<Real>::full({d}, Real(1)), Tensor<Real>::zeros({d}), static_cast<Real>(eps)};
}

}  // namespace detail

// Weights ~ Normal(0, 0.02); LayerNorm gains 1, biases 0; projection biases 0.
// normn draws nothing, so both variants consume the identical random stream
// and share every common tensor bit-for-bit under the same seed.
template <typename Real>
ModelParams<Real> init_params(ModelConfig config, uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const auto w = [&rng](int64_t r, int64_t c) { return Tensor<Real>::randn({r, c}, rng, 0.02); };
  ModelParams<Real> p;
  p.config = config;
  const int64_t d = config.d, fd = config.f * config.d, V = config.vocab;
  p.embedding = w(V, d);
  p.blocks.resize(static_cast<size_t>(config.L));
  for (auto& b : p.blocks) {
    b.ln1 = detail::make_layer_norm<Real>(d, config.ln_eps);
    if (config.variant == Variant::Inattention) b.normn = detail::make_layer_norm<Real>(d, config.ln_eps);
    b.attn = {w(d, d), Tensor<Real>::zeros({d}), w(d, d), Tensor<Real>::zeros({d}),
              w(d, d), Tensor<Real>::zeros({d}), w(d, d), Tensor<Real>::zeros({d}), config.H};
    b.ln2 = detail::make_layer_norm<Real>(d, config.ln_eps);
    b.mlp = {w(d, fd), Tensor<Real>::zeros({fd}), w(fd, d), Tensor<Real>::zeros({d})};
  }
  p.final_ln = detail::make_layer_norm<Real>(d, config.ln_eps);
  p.decoder = w(d, V);
  return p;
}

struct ParamBreakdown {
  int64_t embedding = 0;
  int64_t attention = 0;  // all layers
  int64_t mlp = 0;        // all layers
  int64_t norms = 0;      // ln1 + ln2 + normn + final
  int64_t decoder = 0;
  int64_t total() const { return embedding + attention + mlp + norms + decoder; }
};

inline ParamBreakdown param_breakdown(ModelConfig config) {
  config.validate();
  const int64_t d = config.d, fd = config.f * config.d;
  ParamBreakdown b;
  b.embedding = config.vocab * d;
  b.attention = config.L * 4 * (d * d + d);
  b.mlp = config.L * (d * fd + fd + fd * d + d);
  b.norms = config.L * 2 * (2 * d) + 2 * d;
  if (config.variant == Variant::Inattention) b.norms += config.L * 2 * d;
  b.decoder = d * config.vocab;
  return b;
}

inline int64_t param_count(const ModelConfig& config) { return param_breakdown(config).total(); }

namespace detail {

template <typename Real>
Tensor<Real> block_forward(const Tensor<Real>& x, const Tensor<Real>& y_initial, BlockParams<Real>& b,
                           const RopeConfig& rope, const MaskSpec& mask, Variant variant) {
  auto h = layer_norm(x, b.ln1);
  auto attn_out = variant == Variant::Dense
                      ? dense_self_attention(h, b.attn, rope, mask)
                      : in_attention(h, y_initial, b.attn, *b.normn, rope, mask);
  auto mid = add(x, attn_out);
  return add(mid, mlp(layer_norm(mid, b.ln2), b.mlp));
}

}  // namespace detail

// Full training/prefill forward: logits for every position.
template <typename Real>
Tensor<Real> forward_full(ModelParams<Real>& params, const std::vector<int32_t>& tokens) {
  const auto& cfg = params.config;
  auto x = embedding_rows(params.embedding, tokens);
  const auto y_initial = x;  // inattention: initial states, fixed across layers
  const auto mask = MaskSpec::dense_causal(static_cast<int64_t>(tokens.size()));
  auto& tally = PairTally::instance();
  for (int64_t i = 0; i < cfg.L; ++i) {
    tally.set_layer(i);
    x = detail::block_forward(x, y_initial, params.blocks[static_cast<size_t>(i)], cfg.rope, mask,
                              cfg.variant);
  }
  return matmul(layer_norm(x, params.final_ln), params.decoder);
}

// Logits of the final position only. The dense variant has no shortcut and
// delegates to forward_full; the inattention variant builds K/V from all T
// initial embeddings but walks a single residual tower, L·T attention pairs.
template <typename Real>
Tensor<Real> forward_last(ModelParams<Real>& params, const std::vector<int32_t>& tokens) {
  const auto& cfg = params.config;
  const int64_t T = static_cast<int64_t>(tokens.size());
  if (cfg.variant == Variant::Dense) {
    auto logits = forward_full(params, tokens);
    return reshape(slice_rows(logits, T - 1, T), {cfg.vocab});
  }
  auto y_initial = embedding_rows(params.embedding, tokens);
  auto tower = slice_rows(y_initial, T - 1, T);  // [1, d]
  const auto mask = MaskSpec::inattention_inference(T);
  std::vector<int64_t> all_pos(static_cast<size_t>(T));
  std::iota(all_pos.begin(), all_pos.end(), int64_t{0});
  const std::vector<int64_t> last_pos{T - 1};
  const int64_t dk = cfg.head_dim();
  auto& tally = PairTally::instance();
  for (int64_t i = 0; i < cfg.L; ++i) {
    tally.set_layer(i);
    auto& b = params.blocks[static_cast<size_t>(i)];
    auto q = rope_apply(detail::project(layer_norm(tower, b.ln1), b.attn.w_q, b.attn.b_q), last_pos, dk,
                        cfg.rope);
    auto y = layer_norm(y_initial, *b.normn);
    auto k = rope_apply(detail::project(y, b.attn.w_k, b.attn.b_k), all_pos, dk, cfg.rope);
    auto v = detail::project(y, b.attn.w_v, b.attn.b_v);
    auto mid = add(tower, detail::heads_attend(q, k, v, b.attn, mask));
    tower = add(mid, mlp(layer_norm(mid, b.ln2), b.mlp));
  }
  auto logits = matmul(layer_norm(tower, params.final_ln), params.decoder);
  return reshape(logits, {cfg.vocab});
}

// ---------------------------------------------------------------------------
// Incremental decoding
// ---------------------------------------------------------------------------

enum class CachePolicy { A, B };  // A: initial embeddings only; B: per-layer K/V of initial states

template <typename Real>
struct DecodeCache {
  Variant variant;
  CachePolicy policy = CachePolicy::A;
  int64_t length = 0;
  // dense: rotated per-layer keys + per-layer values of hidden states.
  // inattention policy B: per-layer keys/values of the normed initial states.
  std::vector<Tensor<Real>> keys, values;
  // inattention policy A: raw initial embeddings.
  Tensor<Real> embeddings;

  static DecodeCache make(const ModelConfig& cfg, CachePolicy policy = CachePolicy::A) {
    DecodeCache c;
    c.variant = cfg.variant;
    c.policy = cfg.variant == Variant::Dense ? CachePolicy::B : policy;
    if (cfg.variant == Variant::Dense || policy == CachePolicy::B) {
      c.keys.resize(static_cast<size_t>(cfg.L));
      c.values.resize(static_cast<size_t>(cfg.L));
    }
    return c;
  }

  int64_t element_count() const {
    int64_t n = 0;
    for (const auto& t : keys)
      if (t.defined()) n += t.numel();
    for (const auto& t : values)
      if (t.defined()) n += t.numel();
    if (embeddings.defined()) n += embeddings.numel();
    return n;
  }
};

namespace detail {

template <typename Real>
void cache_append(Tensor<Real>& slot, const Tensor<Real>& row) {
  slot = slot.defined() ? concat_rows<Real>({slot, row}) : row;
}

}  // namespace detail

// Appends one token and returns next-token logits over the grown prefix.
template <typename Real>
Tensor<Real> decode_step(ModelParams<Real>& params, DecodeCache<Real>& cache, int32_t token) {
  const auto& cfg = params.config;
  if (cache.variant != cfg.variant)
    throw ConfigError(std::string("decode_step: cache built for ") + variant_name(cache.variant) +
                      " fed to a " + variant_name(cfg.variant) + " model");
  NoGradGuard ng;
  const int64_t pos = cache.length, dk = cfg.head_dim();
  const std::vector<int64_t> step_pos{pos};
  const auto mask = MaskSpec::inattention_inference(pos + 1);
  auto x = embedding_rows(params.embedding, {token});  // [1, d]
  auto& tally = PairTally::instance();

  if (cfg.variant == Variant::Dense) {
    for (int64_t i = 0; i < cfg.L; ++i) {
      tally.set_layer(i);
      auto& b = params.blocks[static_cast<size_t>(i)];
      auto h = layer_norm(x, b.ln1);
      auto q = rope_apply(detail::project(h, b.attn.w_q, b.attn.b_q), step_pos, dk, cfg.rope);
      auto k_new = rope_apply(detail::project(h, b.attn.w_k, b.attn.b_k), step_pos, dk, cfg.rope);
      auto v_new = detail::project(h, b.attn.w_v, b.attn.b_v);
      detail::cache_append(cache.keys[static_cast<size_t>(i)], k_new);
      detail::cache_append(cache.values[static_cast<size_t>(i)], v_new);
      auto mid = add(x, detail::heads_attend(q, cache.keys[static_cast<size_t>(i)],
                                             cache.values[static_cast<size_t>(i)], b.attn, mask));
      x = add(mid, mlp(layer_norm(mid, b.ln2), b.mlp));
    }
  } else {
    if (cache.policy == CachePolicy::A) {
      detail::cache_append(cache.embeddings, x);
    } else {
      for (int64_t i = 0; i < cfg.L; ++i) {
        auto& b = params.blocks[static_cast<size_t>(i)];
        auto y = layer_norm(x, *b.normn);
        detail::cache_append(cache.keys[static_cast<size_t>(i)],
                             rope_apply(detail::project(y, b.attn.w_k, b.attn.b_k), step_pos, dk, cfg.rope));
        detail::cache_append(cache.values[static_cast<size_t>(i)],
                             detail::project(y, b.attn.w_v, b.attn.b_v));
      }
    }
    std::vector<int64_t> all_pos(static_cast<size_t>(pos + 1));
    std::iota(all_pos.begin(), all_pos.end(), int64_t{0});
    for (int64_t i = 0; i < cfg.L; ++i) {
      tally.set_layer(i);
      auto& b = params.blocks[static_cast<size_t>(i)];
      auto q = rope_apply(detail::project(layer_norm(x, b.ln1), b.attn.w_q, b.attn.b_q), step_pos, dk,
                          cfg.rope);
      Tensor<Real> k, v;
      if (cache.policy == CachePolicy::A) {
        auto y = layer_norm(cache.embeddings, *b.normn);
        k = rope_apply(detail::project(y, b.attn.w_k, b.attn.b_k), all_pos, dk, cfg.rope);
        v = detail::project(y, b.attn.w_v, b.attn.b_v);
      } else {
        k = cache.keys[static_cast<size_t>(i)];
        v = cache.values[static_cast<size_t>(i)];
      }
      auto mid = add(x, detail::heads_attend(q, k, v, b.attn, mask));
      x = add(mid, mlp(layer_norm(mid, b.ln2), b.mlp));
    }
  }
  cache.length = pos + 1;
  auto logits = matmul(layer_norm(x, params.final_ln), params.decoder);
  return reshape(logits, {cfg.vocab});
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

class Sampler {
public:
  enum class Mode { Greedy, Temperature };

  static Sampler greedy() { return Sampler(Mode::Greedy, 1.0, 0); }
  static Sampler temperature(double t, uint64_t seed) {
    if (!(t > 0)) throw ConfigError("sampler: temperature must be positive");
    return Sampler(Mode::Temperature, t, seed);
  }

  Mode mode() const { return mode_; }

  template <typename Real>
  int32_t sample(const Tensor<Real>& logits) {
    const auto x = logits.data();
    if (mode_ == Mode::Greedy) {
      size_t best = 0;
      for (size_t i = 1; i < x.size(); ++i)
        if (x[i] > x[best]) best = i;
      return static_cast<int32_t>(best);
    }
    // softmax(logits / t) accumulated in double, inverse-CDF draw
    double mx = static_cast<double>(x[0]);
    for (size_t i = 1; i < x.size(); ++i) mx = std::max(mx, static_cast<double>(x[i]));
    std::vector<double> cdf(x.size());
    double acc = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      acc += std::exp((static_cast<double>(x[i]) - mx) / temp_);
      cdf[i] = acc;
    }
    const double u = rng_.uniform() * acc;
    for (size_t i = 0; i < cdf.size(); ++i)
      if (u < cdf[i]) return static_cast<int32_t>(i);
    return static_cast<int32_t>(cdf.size() - 1);
  }

private:
  Sampler(Mode m, double t, uint64_t seed) : mode_(m), temp_(t), rng_(seed) {}
  Mode mode_;
  double temp_;
  Rng rng_;
};

template <typename Real>
std::vector<int32_t> generate(ModelParams<Real>& params, const std::vector<int32_t>& prompt,
                              int64_t n_tokens, Sampler sampler,
                              CachePolicy policy = CachePolicy::A) {
  if (n_tokens < 0) throw ConfigError("generate: n_tokens must be >= 0");
  std::vector<int32_t> out = prompt;
  if (n_tokens == 0) return out;
  if (prompt.empty()) throw Error("generate: empty prompt");
  auto cache = DecodeCache<Real>::make(params.config, policy);
  Tensor<Real> logits;
  for (int32_t tok : prompt) logits = decode_step(params, cache, tok);
  for (int64_t i = 0; i < n_tokens; ++i) {
    const int32_t next = sampler.sample(logits);
    out.push_back(next);
    if (i + 1 < n_tokens) logits = decode_step(params, cache, next);
  }
  return out;
}

}  // namespace inat
