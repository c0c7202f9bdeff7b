#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clinrisk/attention.hpp"
#include "clinrisk/tape.hpp"
#include "clinrisk/tensor.hpp"
#include "clinrisk/tokenizer.hpp"

namespace clinrisk {

enum class AttentionMode { dense, longformer };

/// Architecture hyperparameters. The defaults are the desk-scale
/// configuration every experiment in this repo runs at.
struct ModelConfig {
  std::int64_t vocab_size = 0;
  std::int64_t hidden = 128;
  std::int64_t layers = 4;
  std::int64_t heads = 4;
  std::int64_t ffn_mult = 4;
  std::int64_t max_positions_base = 512;
  std::int64_t extension_factor = 16;
  std::int64_t window = 64;
  real dropout_rate = real(0.1);
  std::uint64_t seed = 0;
  AttentionMode attention = AttentionMode::dense;
  bool has_gru = false;  // recurrent chunk aggregator parameters present

  /// Dense models stop at the base length; converted models use the
  /// extended positional table.
  std::int64_t max_positions() const {
    return attention == AttentionMode::dense ? max_positions_base
                                             : max_positions_base * extension_factor;
  }
  AttentionConfig attention_config() const {
    return AttentionConfig{heads, hidden / heads, window};
  }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Encoder-only transformer: token + learned absolute position
/// embeddings, N post-norm layers (self-attention + GELU feed-forward),
/// a masked-token head tied to the embedding table, and a scalar risk
/// head on the classifier token.
class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }

  /// Parameters in fixed declaration order (names are stable and appear
  /// verbatim in checkpoints).
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  Tensor param(const std::string& name) const;
  bool has_param(const std::string& name) const;
  std::int64_t parameter_count() const;

  /// Replaces the positional table (conversion path).
  void set_positions(Tensor extended);
  /// Adds the recurrent aggregator parameters if not present.
  void ensure_gru_params();

  /// Final hidden states [n, hidden] for one sequence. `mlm` selects the
  /// task mask: no global positions for masked-token training, global
  /// classifier token otherwise.
  Tensor hidden_states(Tape& tape, const TokenSequence& seq, bool mlm,
                       bool training = false) const;

  /// Per-position vocabulary logits [n, vocab] for one sequence.
  Tensor mlm_logits(Tape& tape, const TokenSequence& seq, bool training = false) const;

  /// Batch form: logits stacked to [batch, len, vocab] after padding
  /// every sequence to the longest one.
  Tensor forward_mlm(Tape& tape, const std::vector<TokenSequence>& batch,
                     bool training = false) const;

  /// Pre-sigmoid risk logit of one sequence (classifier token must be
  /// marked global).
  Tensor classify_logit(Tape& tape, const TokenSequence& seq, bool training = false) const;

  /// Risk scores in (0,1), one per sequence. Inference only.
  std::vector<real> forward_classify(const std::vector<TokenSequence>& batch) const;

  /// Deep copy (worker threads train on private copies).
  Model clone() const;
  /// Copies parameter values (not gradients) from a same-shape model.
  void copy_values_from(const Model& other);

  std::uint64_t step = 0;  // training steps applied to these weights

 private:
  Tensor add_param(const std::string& name, Tensor t);
  void check_length(const TokenSequence& seq) const;

  ModelConfig cfg_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

/// Tiles the base positional table `factor` times: output row i equals
/// base row (i mod base_rows), bitwise.
Tensor extend_positions(const Tensor& base, std::int64_t factor);

}  // namespace clinrisk
