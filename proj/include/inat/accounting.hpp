#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "inat/layers.hpp"
#include "inat/mask.hpp"
#include "inat/memtrack.hpp"
#include "inat/model.hpp"
#include "inat/rng.hpp"

namespace inat {

enum class Phase { Train, Prefill, Decode };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Train: return "train";
    case Phase::Prefill: return "prefill";
    case Phase::Decode: return "decode";
  }
  return "?";
}

inline Phase phase_from_name(const std::string& s) {
  if (s == "train") return Phase::Train;
  if (s == "prefill") return Phase::Prefill;
  if (s == "decode") return Phase::Decode;
  throw ConfigError("unknown phase '" + s + "' (expected train, prefill or decode)");
}

struct PairCountReport {
  std::string mask_kind;
  std::string phase;
  int64_t T = 0;
  int64_t L = 0;
  std::vector<int64_t> per_layer;
  int64_t total = 0;
};

// Attention pairs per phase. Training always scores causally; the
// inattention fast path scores one query row per layer; a cached decode step
// at length T scores T keys per layer for either variant. Sliding windows
// have no cached decode rule here.
inline PairCountReport pair_count(const MaskSpec& mask, int64_t L, Phase phase) {
  if (L < 1) throw ConfigError("pair_count: L must be >= 1, got " + std::to_string(L));
  const int64_t T = mask.seq_len();
  int64_t per = 0;
  switch (mask.kind()) {
    case MaskKind::DenseCausal:
      per = phase == Phase::Decode ? T : MaskSpec::dense_causal(T).total_pairs();
      break;
    case MaskKind::Sliding:
      if (phase == Phase::Decode)
        throw MaskError("pair_count: decode phase is not defined for sliding-window masks");
      per = MaskSpec::sliding(T, mask.window()).total_pairs();
      break;
    case MaskKind::InattentionInference:
      per = phase == Phase::Train ? MaskSpec::dense_causal(T).total_pairs() : T;
      break;
  }
  PairCountReport r;
  r.mask_kind = mask_kind_name(mask.kind());
  r.phase = phase_name(phase);
  r.T = T;
  r.L = L;
  r.per_layer.assign(static_cast<size_t>(L), per);
  r.total = per * L;
  return r;
}

// Sliding-window reach through a stack: band width times layer count.
inline int64_t effective_context(int64_t w, int64_t L) {
  if (w < 1) throw ConfigError("effective_context: w must be >= 1, got " + std::to_string(w));
  if (L < 1) throw ConfigError("effective_context: L must be >= 1, got " + std::to_string(L));
  return w * L;
}

struct MemoryReport {
  std::string variant;
  std::string phase;
  int64_t T = 0;
  int64_t elem_bytes = 0;
  int64_t param_bytes = 0;
  int64_t activation_bytes = 0;  // analytic
  int64_t cache_bytes = 0;       // analytic, decode only
  int64_t measured_peak = 0;     // 0 until measured

  int64_t analytic_total() const { return param_bytes + activation_bytes + cache_bytes; }
};

// Closed-form live-byte model of this implementation's allocation pattern
// (documented constants, see README):
//   dense prefill      E·((H+1)·T² + 8·T·d + 2·f·T·d + T·V)
//   inattention last   E·(5·T·d + (H+1)·T + (2·f+6)·d + V)
//   train (per layer kept on tape)
//                      E·L·(2·H·T² + (12+2·f)·T·d) + E·T·V
//   decode step        transient of the matching prefill row at length T,
//                      plus the cache: dense 2·L·T·d, policy A T·d, policy B 2·L·T·d
inline MemoryReport analytic_activation_bytes(ModelConfig config, int64_t T, Phase phase,
                                              CachePolicy policy = CachePolicy::A) {
  config.validate();
  if (T < 1) throw ConfigError("analytic_activation_bytes: T must be >= 1");
  const int64_t E = width_bytes(config.width);
  const int64_t d = config.d, f = config.f, H = config.H, L = config.L, V = config.vocab;
  MemoryReport r;
  r.variant = variant_name(config.variant);
  r.phase = phase_name(phase);
  r.T = T;
  r.elem_bytes = E;
  r.param_bytes = param_count(config) * E;
  const bool dense = config.variant == Variant::Dense;
  switch (phase) {
    case Phase::Train:
      r.activation_bytes = E * (L * (2 * H * T * T + (12 + 2 * f) * T * d) + T * V);
      break;
    case Phase::Prefill:
      r.activation_bytes = dense ? E * ((H + 1) * T * T + 8 * T * d + 2 * f * T * d + T * V)
                                 : E * (5 * T * d + (H + 1) * T + (2 * f + 6) * d + V);
      break;
    case Phase::Decode:
      r.activation_bytes = E * (5 * T * d + (H + 1) * T + (2 * f + 6) * d + V);
      r.cache_bytes = E * (dense || policy == CachePolicy::B ? 2 * L * T * d : T * d);
      break;
  }
  return r;
}

enum class Workload { DenseForwardFull, InattentionForwardLast, DecodeLoop };

struct MeasureSpec {
  ModelConfig config;
  int64_t T = 0;
  Workload workload = Workload::DenseForwardFull;
  CachePolicy policy = CachePolicy::A;
  uint64_t seed = 1;
};

namespace detail {

inline std::vector<int32_t> synthetic_tokens(int64_t T, int64_t vocab, uint64_t seed) {
  Rng rng(seed);
  std::vector<int32_t> toks(static_cast<size_t>(T));
  for (auto& t : toks) t = static_cast<int32_t>(rng.uniform_int(static_cast<uint64_t>(vocab)));
  return toks;
}

}  // namespace detail

// Runs one workload with every tensor buffer counted and reports the live-byte
// peak (parameters included — the scope opens after they exist).
template <typename Real>
MemoryReport measure_peak(MeasureSpec spec) {
  spec.config.validate();
  if (spec.T < 1) throw ConfigError("measure_peak: T must be >= 1");
  const bool dense_wl = spec.workload == Workload::DenseForwardFull;
  if (dense_wl && spec.config.variant != Variant::Dense)
    throw ConfigError("measure_peak: dense forward_full workload needs a dense config");
  if (spec.workload == Workload::InattentionForwardLast && spec.config.variant != Variant::Inattention)
    throw ConfigError("measure_peak: forward_last workload needs an inattention config");

  const Phase phase = spec.workload == Workload::DecodeLoop ? Phase::Decode : Phase::Prefill;
  MemoryReport report = analytic_activation_bytes(spec.config, spec.T, phase, spec.policy);

  auto params = init_params<Real>(spec.config, spec.seed);
  const auto tokens = detail::synthetic_tokens(spec.T, spec.config.vocab, spec.seed + 1);
  auto& tracker = MemoryTracker::instance();
  tracker.begin_scope();
  {
    NoGradGuard ng;
    switch (spec.workload) {
      case Workload::DenseForwardFull: {
        auto logits = forward_full(params, tokens);
        break;
      }
      case Workload::InattentionForwardLast: {
        auto logits = forward_last(params, tokens);
        break;
      }
      case Workload::DecodeLoop: {
        auto cache = DecodeCache<Real>::make(spec.config, spec.policy);
        Tensor<Real> logits;
        for (int32_t t : tokens) logits = decode_step(params, cache, t);
        break;
      }
    }
  }
  report.measured_peak = static_cast<int64_t>(tracker.peak_bytes());
  return report;
}

struct ScalingRow {
  int64_t T = 0;
  std::string variant;
  std::string phase;
  int64_t analytic_bytes = 0;
  std::optional<int64_t> measured_bytes;  // empty = skipped_budget
  int64_t total_pairs = 0;
};

inline constexpr int64_t kDefaultMemBudget = int64_t{4} * 1024 * 1024 * 1024;

// Prefill scaling rows for both variants at each T. Workloads whose analytic
// total exceeds the budget are not run, mirroring an OOM row.
template <typename Real>
std::vector<ScalingRow> scaling_report(ModelConfig base, const std::vector<int64_t>& T_list,
                                       int64_t budget_bytes = kDefaultMemBudget) {
  if (budget_bytes < 1) throw ConfigError("scaling_report: budget must be positive");
  std::vector<ScalingRow> rows;
  for (int64_t T : T_list) {
    for (Variant variant : {Variant::Dense, Variant::Inattention}) {
      ModelConfig cfg = base;
      cfg.variant = variant;
      const bool dense = variant == Variant::Dense;
      ScalingRow row;
      row.T = T;
      row.variant = variant_name(variant);
      row.phase = "prefill";
      const auto analytic = analytic_activation_bytes(cfg, T, Phase::Prefill);
      row.analytic_bytes = analytic.analytic_total();
      row.total_pairs =
          pair_count(dense ? MaskSpec::dense_causal(T) : MaskSpec::inattention_inference(T), cfg.L,
                     Phase::Prefill)
              .total;
      if (row.analytic_bytes <= budget_bytes) {
        MeasureSpec ms{cfg, T, dense ? Workload::DenseForwardFull : Workload::InattentionForwardLast};
        row.measured_bytes = measure_peak<Real>(ms).measured_peak;
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline std::string scaling_csv(const std::vector<ScalingRow>& rows) {
  std::string out = "T,variant,phase,analytic_bytes,measured_bytes,total_pairs\n";
  for (const auto& r : rows)
    out += std::to_string(r.T) + "," + r.variant + "," + r.phase + "," +
           std::to_string(r.analytic_bytes) + "," +
           (r.measured_bytes ? std::to_string(*r.measured_bytes) : std::string("skipped_budget")) + "," +
           std::to_string(r.total_pairs) + "\n";
  return out;
}

inline std::string pair_count_text(const PairCountReport& r) {
  std::string out = "mask=" + r.mask_kind + " phase=" + r.phase + " T=" + std::to_string(r.T) +
                    " L=" + std::to_string(r.L) + "\n";
  for (size_t i = 0; i < r.per_layer.size(); ++i)
    out += "layer " + std::to_string(i) + ": " + std::to_string(r.per_layer[i]) + "\n";
  out += "total: " + std::to_string(r.total) + "\n";
  return out;
}

}  // namespace inat
