#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "inat/common.hpp"

namespace inat {

enum class MaskKind { DenseCausal, Sliding, InattentionInference };

inline const char* mask_kind_name(MaskKind k) {
  switch (k) {
    case MaskKind::DenseCausal: return "dense";
    case MaskKind::Sliding: return "sliding";
    case MaskKind::InattentionInference: return "inattention";
  }
  return "?";
}

// Which keys each query row may attend. Every kind yields one contiguous key
// range per row:
//   dense-causal             sigma(t) = t+1, keys [0, t+1)
//   sliding(w)               sigma(t) = 1 + min(t, w), keys [t-min(t,w), t+1)
//   inattention-inference    one query row over all T keys, sigma = T
class MaskSpec {
public:
  static MaskSpec dense_causal(int64_t T) { return MaskSpec(MaskKind::DenseCausal, T, 0); }

  static MaskSpec sliding(int64_t T, int64_t w) {
    if (w < 1) throw MaskError("sliding mask: window must be >= 1, got " + std::to_string(w));
    return MaskSpec(MaskKind::Sliding, T, w);
  }

  static MaskSpec inattention_inference(int64_t T) {
    return MaskSpec(MaskKind::InattentionInference, T, 0);
  }

  MaskKind kind() const { return kind_; }
  int64_t seq_len() const { return T_; }
  int64_t window() const { return w_; }

  // Number of query rows a score matrix under this mask has.
  int64_t query_rows() const { return kind_ == MaskKind::InattentionInference ? 1 : T_; }

  int64_t sigma(int64_t t) const {
    check_row(t);
    switch (kind_) {
      case MaskKind::DenseCausal: return t + 1;
      case MaskKind::Sliding: return 1 + std::min(t, w_);
      case MaskKind::InattentionInference: return T_;
    }
    return 0;
  }

  // Attended key interval [lo, hi) for query row t.
  std::pair<int64_t, int64_t> key_range(int64_t t) const {
    check_row(t);
    switch (kind_) {
      case MaskKind::DenseCausal: return {0, t + 1};
      case MaskKind::Sliding: return {t - std::min(t, w_), t + 1};
      case MaskKind::InattentionInference: return {0, T_};
    }
    return {0, 0};
  }

  int64_t total_pairs() const {
    int64_t total = 0;
    for (int64_t t = 0; t < query_rows(); ++t) total += sigma(t);
    return total;
  }

private:
  MaskSpec(MaskKind kind, int64_t T, int64_t w) : kind_(kind), T_(T), w_(w) {
    if (T < 1) throw MaskError("mask: sequence length must be >= 1, got " + std::to_string(T));
  }

  void check_row(int64_t t) const {
    if (t < 0 || t >= query_rows())
      throw MaskError("mask: query row " + std::to_string(t) + " out of range [0, " +
                      std::to_string(query_rows()) + ")");
  }

  MaskKind kind_;
  int64_t T_;
  int64_t w_;
};

}  // namespace inat
