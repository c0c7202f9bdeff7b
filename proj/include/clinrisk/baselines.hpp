#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clinrisk/model.hpp"
#include "clinrisk/tape.hpp"
#include "clinrisk/tokenizer.hpp"
#include "clinrisk/train.hpp"

namespace clinrisk {

/// The scoring strategies compared by the evaluation harness: the
/// windowed+global model on the whole input, and the three chunked
/// variants of the same encoder restricted to dense base-length
/// attention (truncation, chunk-embedding averaging, recurrent
/// aggregation).
enum class Variant { longformer, bert, bert_avg, bert_rnn };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

inline constexpr std::int64_t kChunkLen = 512;  // [CLS] + up to 511 body tokens

/// Splits the body (everything after the leading CLS) into consecutive
/// 511-token pieces, each re-prefixed with CLS and its classifier bit
/// set. The last chunk is left at its natural length: scores are
/// invariant to trailing padding, so padding it would only burn compute.
/// Concatenating the chunk bodies reproduces the input body exactly.
std::vector<TokenSequence> chunk_sequence(const TokenSequence& seq);

/// Gate parameters of the recurrent chunk aggregator (input and state
/// are both model-hidden sized).
struct GruParams {
  Tensor wz, uz, bz;  // update gate
  Tensor wr, ur, br;  // reset gate
  Tensor wh, uh, bh;  // candidate state

  static GruParams from_model(const Model& m);
};

/// One recurrent step:
///   z = sigmoid(Wz x + Uz h + bz)
///   r = sigmoid(Wr x + Ur h + br)
///   cand = tanh(Wh x + Uh (r . h) + bh)
///   h' = (1 - z) . h + z . cand
Tensor gru_cell(Tape& tape, const Tensor& x, const Tensor& h, const GruParams& p);

/// Pre-sigmoid logits of the four strategies. The chunked variants
/// require a dense base-length model; the windowed variant requires a
/// converted one.
Tensor longformer_logit(const Model& m, Tape& tape, const TokenSequence& seq, bool training);
Tensor bert_truncate_logit(const Model& m, Tape& tape, const TokenSequence& seq, bool training);
Tensor bert_avg_logit(const Model& m, Tape& tape, const TokenSequence& seq, bool training);
Tensor bert_rnn_logit(const Model& m, Tape& tape, const TokenSequence& seq, bool training);

LogitFn logit_fn_for(Variant v);

/// Risk score in (0,1) of one sequence under the given strategy.
real score_sequence(const Model& m, const TokenSequence& seq, Variant v);

}  // namespace clinrisk
