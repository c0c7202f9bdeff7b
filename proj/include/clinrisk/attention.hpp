#pragma once

#include <cstdint>
#include <vector>

#include "clinrisk/tape.hpp"
#include "clinrisk/tensor.hpp"

namespace clinrisk {

/// Multi-head geometry plus the local window width. The window is the
/// total width: a token attends window/2 positions to each side.
struct AttentionConfig {
  std::int64_t num_heads = 4;
  std::int64_t head_dim = 32;
  std::int64_t window = 64;

  std::int64_t hidden() const { return num_heads * head_dim; }
  void validate() const;
};

/// Per-position roles. padding[i] marks a real token; global[i] marks a
/// token that attends to, and is attended by, every valid position.
/// A global position must be a real token.
struct AttentionMask {
  std::vector<std::uint8_t> padding;
  std::vector<std::uint8_t> global;

  static AttentionMask all_valid(std::int64_t n);
  /// All valid with position 0 (the classifier token) global.
  static AttentionMask classify(std::int64_t n);

  std::int64_t length() const { return static_cast<std::int64_t>(padding.size()); }
  void validate() const;
};

/// Full quadratic self-attention; the reference the windowed variant is
/// checked against. Scores are q.k / sqrt(head_dim) with an additive
/// -1e9 bias on padded keys; padded query rows come out zero.
Tensor dense_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                       const AttentionMask& mask, const AttentionConfig& cfg);

/// Windowed local attention combined with per-token global attention.
/// A non-global query at i sees keys in [i-w/2, i+w/2] plus every global
/// position; a global query sees everything. Cost is O(n * (w + g)) and
/// the full n x n score matrix is never materialised, so it can stand in
/// for dense_attention on long inputs.
Tensor longformer_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionMask& mask, const AttentionConfig& cfg);

/// The exact key set longformer_attention uses for query i, sorted
/// ascending. Empty for a padded query.
std::vector<std::int64_t> receptive_set(std::int64_t i, std::int64_t n,
                                        const AttentionMask& mask,
                                        const AttentionConfig& cfg);

}  // namespace clinrisk
