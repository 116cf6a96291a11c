#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "inat/data_io.hpp"
#include "inat/model.hpp"
#include "inat/nn_ops.hpp"
#include "inat/tensor.hpp"

namespace inat {

struct TrainConfig {
  double lr_init = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double lr_floor = 0.0;
  int64_t steps = 1000;             // total optimizer steps
  int64_t grad_accumulation = 1;    // micro-batches per optimizer step
  int64_t batch_size = 16;          // sequences per micro-batch
  int64_t context_length = 32;
  int64_t checkpoint_every = 0;     // 0: final checkpoint only
  uint64_t seed = 0;

  void validate() const {
    if (!(lr_init > 0)) throw ConfigError("train: lr_init must be positive");
    if (steps < 1) throw ConfigError("train: steps must be >= 1, got " + std::to_string(steps));
    if (context_length < 2)
      throw ConfigError("train: context length must be >= 2, got " + std::to_string(context_length));
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (grad_accumulation < 1) throw ConfigError("train: grad_accumulation must be >= 1");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
      throw ConfigError("train: betas must lie in [0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("train: adam_eps must be positive");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
    if (lr_floor < 0 || lr_floor > lr_init) throw ConfigError("train: lr_floor must lie in [0, lr_init]");
    if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
  }
};

template <typename Real>
struct OptimizerState {
  int64_t step = 0;
  std::vector<AlignedVec<Real>> m, v;  // canonical parameter order

  template <typename Params>
  static OptimizerState init(Params& params) {
    OptimizerState s;
    params.for_each([&s](const std::string&, Tensor<Real>& t) {
      s.m.emplace_back(static_cast<size_t>(t.numel()), Real(0));
      s.v.emplace_back(static_cast<size_t>(t.numel()), Real(0));
    });
    return s;
  }
};

struct EvalPoint {
  int64_t context_length = 0;
  double mean_loss = 0;
  int64_t token_count = 0;
};

struct EvalReport {
  std::string variant;
  std::string checkpoint_id;
  std::vector<EvalPoint> points;
};

struct LossPoint {
  int64_t step = 0;
  double lr = 0;
  double loss = 0;
};

// Mean cross-entropy of rows 0..T-2 predicting tokens 1..T-1.
template <typename Real>
Tensor<Real> next_token_loss(const Tensor<Real>& logits, const std::vector<int32_t>& tokens) {
  const int64_t T = static_cast<int64_t>(tokens.size());
  if (T < 2) throw ShapeError("next_token_loss: need at least 2 tokens, got " + std::to_string(T));
  if (logits.rank() != 2 || logits.dim(0) != T)
    throw ShapeError("next_token_loss: logits shape " + shape_str(logits.shape()) + " for " +
                     std::to_string(T) + " tokens");
  std::vector<int32_t> targets(tokens.begin() + 1, tokens.end());
  return cross_entropy_mean(slice_rows(logits, 0, T - 1), targets);
}

inline double cosine_lr(int64_t step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.steps)
    throw ConfigError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(cfg.steps) + "]");
  const double phase = static_cast<double>(step) / static_cast<double>(cfg.steps);
  return cfg.lr_floor + 0.5 * (cfg.lr_init - cfg.lr_floor) * (1.0 + std::cos(M_PI * phase));
}

// Bias-corrected Adam with decoupled weight decay. Decay touches only rank-2
// parameters (projection matrices, embedding, decoder) — never gains/biases.
template <typename Real>
void adamw_step(ModelParams<Real>& params, OptimizerState<Real>& state, double lr,
                const TrainConfig& cfg) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  size_t idx = 0;
  params.for_each([&](const std::string& name, Tensor<Real>& t) {
    if (idx >= state.m.size() || state.m[idx].size() != static_cast<size_t>(t.numel()))
      throw ShapeError("adamw_step: optimizer state does not match parameter " + name);
    auto w = t.mutable_data();
    auto g = t.mutable_grad();
    auto& m = state.m[idx];
    auto& v = state.v[idx];
    const bool decay = t.rank() == 2;
    for (size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      double delta = lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps);
      if (decay) delta += lr * cfg.weight_decay * static_cast<double>(w[i]);
      w[i] = static_cast<Real>(static_cast<double>(w[i]) - delta);
    }
    ++idx;
  });
}

using CheckpointSink = std::function<void(int64_t step, bool final)>;

// Full training loop: per optimizer step, `grad_accumulation` micro-batches of
// `batch_size` sequences each, gradients averaged over all of them, AdamW with
// the cosine schedule. Chunk order reshuffles per epoch off the seed.
template <typename Real>
std::vector<LossPoint> train(ModelParams<Real>& params, const std::vector<int32_t>& corpus,
                             const TrainConfig& cfg, const CheckpointSink& on_checkpoint = {}) {
  cfg.validate();
  auto chunks = batchify(corpus, cfg.context_length, cfg.seed);
  if (chunks.empty())
    throw Error("train: corpus yields no batch at context length " + std::to_string(cfg.context_length));
  params.set_requires_grad(true);
  auto state = OptimizerState<Real>::init(params);
  std::vector<LossPoint> curve;
  curve.reserve(static_cast<size_t>(cfg.steps));
  const int64_t seqs_per_step = cfg.batch_size * cfg.grad_accumulation;
  const Real loss_scale = Real(1) / static_cast<Real>(seqs_per_step);
  size_t cursor = 0;
  uint64_t epoch = 0;
  const auto next_chunk = [&]() -> const std::vector<int32_t>& {
    if (cursor == chunks.size()) {
      cursor = 0;
      ++epoch;
      chunks = batchify(corpus, cfg.context_length, cfg.seed + epoch);
    }
    return chunks[cursor++];
  };
  for (int64_t step = 0; step < cfg.steps; ++step) {
    const double lr = cosine_lr(step, cfg);
    params.zero_grad();
    double step_loss = 0;
    for (int64_t micro = 0; micro < cfg.grad_accumulation; ++micro) {
      Tensor<Real> micro_loss;
      for (int64_t s = 0; s < cfg.batch_size; ++s) {
        const auto& seq = next_chunk();
        auto loss = next_token_loss(forward_full(params, seq), seq);
        micro_loss = micro_loss.defined() ? add(micro_loss, loss) : loss;
      }
      micro_loss = scale(micro_loss, loss_scale);
      micro_loss.backward();
      step_loss += static_cast<double>(micro_loss.item());
    }
    adamw_step(params, state, lr, cfg);
    curve.push_back({state.step, lr, step_loss});
    if (on_checkpoint && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 &&
        state.step != cfg.steps)
      on_checkpoint(state.step, false);
  }
  if (on_checkpoint) on_checkpoint(state.step, true);
  return curve;
}

// Same loop with fresh optimizer state at a longer context; the caller sets
// ft_cfg.lr_init (the command layer defaults it to pretrain lr / 10).
template <typename Real>
std::vector<LossPoint> finetune(ModelParams<Real>& params, const std::vector<int32_t>& corpus,
                                const TrainConfig& ft_cfg, int64_t pretrain_context_length,
                                const CheckpointSink& on_checkpoint = {}) {
  if (ft_cfg.context_length <= pretrain_context_length)
    throw ConfigError("finetune: new context length " + std::to_string(ft_cfg.context_length) +
                      " must exceed the pretrain context length " +
                      std::to_string(pretrain_context_length));
  return train(params, corpus, ft_cfg, on_checkpoint);
}

// Mean loss over the corpus rebatched at each requested length, unshuffled,
// accumulated in double.
template <typename Real>
EvalReport eval_sweep(ModelParams<Real>& params, const std::vector<int32_t>& corpus,
                      const std::vector<int64_t>& lengths) {
  EvalReport report;
  report.variant = variant_name(params.config.variant);
  NoGradGuard ng;
  for (int64_t len : lengths) {
    if (len < 2) throw ConfigError("eval_sweep: context length must be >= 2, got " + std::to_string(len));
    const int64_t n_chunks = static_cast<int64_t>(corpus.size()) / len;
    if (n_chunks == 0)
      throw Error("eval_sweep: corpus too small for context length " + std::to_string(len));
    double acc = 0;
    for (int64_t c = 0; c < n_chunks; ++c) {
      const std::vector<int32_t> seq(corpus.begin() + c * len, corpus.begin() + (c + 1) * len);
      acc += static_cast<double>(next_token_loss(forward_full(params, seq), seq).item());
    }
    report.points.push_back({len, acc / static_cast<double>(n_chunks), n_chunks * (len - 1)});
  }
  return report;
}

// ---------------------------------------------------------------------------
// CSV emission (single formatting authority so reruns are byte-identical)
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string loss_curve_csv(const std::vector<LossPoint>& curve) {
  std::string out = "step,lr,loss\n";
  for (const auto& p : curve)
    out += std::to_string(p.step) + "," + format_double(p.lr) + "," + format_double(p.loss) + "\n";
  return out;
}

inline std::string eval_report_csv(const EvalReport& report) {
  std::string out = "context_length,mean_loss,token_count\n";
  for (const auto& p : report.points)
    out += std::to_string(p.context_length) + "," + format_double(p.mean_loss) + "," +
           std::to_string(p.token_count) + "\n";
  return out;
}

}  // namespace inat
