#include "clinrisk/baselines.hpp"

#include <cmath>

#include "clinrisk/errors.hpp"
#include "clinrisk/ops.hpp"

namespace clinrisk {
namespace o = ops;
namespace {

void require_dense(const Model& m, const char* who) {
  if (m.config().attention != AttentionMode::dense)
    throw ContractError(std::string(who) + " needs the dense base-length model");
}

void require_longformer(const Model& m) {
  if (m.config().attention != AttentionMode::longformer)
    throw ContractError("longformer scoring needs a converted (windowed) model");
}

// CLS hidden state of one chunk.
Tensor chunk_embedding(const Model& m, Tape& tape, const TokenSequence& chunk, bool training) {
  return o::select_row(tape, m.hidden_states(tape, chunk, /*mlm=*/false, training), 0);
}

Tensor head_logit(const Model& m, Tape& tape, const Tensor& embedding) {
  return o::add(tape, o::dot(tape, m.param("cls_w"), embedding), m.param("cls_b"));
}

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::longformer: return "longformer";
    case Variant::bert: return "bert";
    case Variant::bert_avg: return "bert-avg";
    case Variant::bert_rnn: return "bert-rnn";
  }
  throw ContractError("unknown variant");
}

Variant variant_from_name(const std::string& name) {
  if (name == "longformer") return Variant::longformer;
  if (name == "bert") return Variant::bert;
  if (name == "bert-avg") return Variant::bert_avg;
  if (name == "bert-rnn") return Variant::bert_rnn;
  throw ConfigError("unknown model variant: " + name +
                    " (expected longformer|bert|bert-avg|bert-rnn)");
}

std::vector<TokenSequence> chunk_sequence(const TokenSequence& seq) {
  if (seq.ids.empty()) throw ContractError("chunk_sequence: empty sequence");
  const std::size_t body_start = seq.ids[0] == Vocabulary::kCls ? 1 : 0;

  // body = real tokens after the leading CLS
  std::vector<std::int32_t> body;
  for (std::size_t i = body_start; i < seq.ids.size(); ++i)
    if (seq.padding[i]) body.push_back(seq.ids[i]);

  const std::int64_t body_per_chunk = kChunkLen - 1;
  const std::size_t n_chunks =
      body.empty() ? 1 : (body.size() + static_cast<std::size_t>(body_per_chunk) - 1) /
                             static_cast<std::size_t>(body_per_chunk);
  std::vector<TokenSequence> chunks;
  chunks.reserve(n_chunks);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    TokenSequence chunk;
    chunk.ids.push_back(Vocabulary::kCls);
    const std::size_t begin = c * static_cast<std::size_t>(body_per_chunk);
    const std::size_t end = std::min(body.size(), begin + static_cast<std::size_t>(body_per_chunk));
    for (std::size_t i = begin; i < end; ++i) chunk.ids.push_back(body[i]);
    chunk.padding.assign(chunk.ids.size(), 1);
    chunk.global.assign(chunk.ids.size(), 0);
    chunk.global[0] = 1;
    chunk.label = seq.label;
    chunks.push_back(std::move(chunk));
  }
  return chunks;
}

GruParams GruParams::from_model(const Model& m) {
  if (!m.has_param("gru.wz"))
    throw ContractError("model has no recurrent aggregator parameters (call ensure_gru_params)");
  return GruParams{m.param("gru.wz"), m.param("gru.uz"), m.param("gru.bz"),
                   m.param("gru.wr"), m.param("gru.ur"), m.param("gru.br"),
                   m.param("gru.wh"), m.param("gru.uh"), m.param("gru.bh")};
}

Tensor gru_cell(Tape& tape, const Tensor& x, const Tensor& h, const GruParams& p) {
  if (x.shape().size() != 1 || h.shape().size() != 1)
    throw DimensionError("gru_cell: expected 1-D input and state, got " +
                         shape_str(x.shape()) + " and " + shape_str(h.shape()));
  Tensor z = o::sigmoid(
      tape, o::add(tape, o::add(tape, o::matvec(tape, p.wz, x), o::matvec(tape, p.uz, h)),
                   p.bz));
  Tensor r = o::sigmoid(
      tape, o::add(tape, o::add(tape, o::matvec(tape, p.wr, x), o::matvec(tape, p.ur, h)),
                   p.br));
  Tensor cand = o::tanh_act(
      tape, o::add(tape,
                   o::add(tape, o::matvec(tape, p.wh, x),
                          o::matvec(tape, p.uh, o::mul(tape, r, h))),
                   p.bh));
  // h' = h - z.h + z.cand
  return o::add(tape, o::sub(tape, h, o::mul(tape, z, h)), o::mul(tape, z, cand));
}

Tensor longformer_logit(const Model& m, Tape& tape, const TokenSequence& seq, bool training) {
  require_longformer(m);
  TokenSequence marked = seq;
  marked.mark_for_classification();
  return m.classify_logit(tape, marked, training);
}

Tensor bert_truncate_logit(const Model& m, Tape& tape, const TokenSequence& seq,
                           bool training) {
  require_dense(m, "bert");
  return m.classify_logit(tape, chunk_sequence(seq)[0], training);
}

Tensor bert_avg_logit(const Model& m, Tape& tape, const TokenSequence& seq, bool training) {
  require_dense(m, "bert-avg");
  std::vector<Tensor> embeddings;
  for (const auto& chunk : chunk_sequence(seq))
    embeddings.push_back(chunk_embedding(m, tape, chunk, training));
  return head_logit(m, tape, o::mean_stack(tape, embeddings));
}

Tensor bert_rnn_logit(const Model& m, Tape& tape, const TokenSequence& seq, bool training) {
  require_dense(m, "bert-rnn");
  const GruParams p = GruParams::from_model(m);
  Tensor state = Tensor::zeros({m.config().hidden});
  for (const auto& chunk : chunk_sequence(seq))
    state = gru_cell(tape, chunk_embedding(m, tape, chunk, training), state, p);
  return head_logit(m, tape, state);
}

LogitFn logit_fn_for(Variant v) {
  switch (v) {
    case Variant::longformer: return longformer_logit;
    case Variant::bert: return bert_truncate_logit;
    case Variant::bert_avg: return bert_avg_logit;
    case Variant::bert_rnn: return bert_rnn_logit;
  }
  throw ContractError("unknown variant");
}

real score_sequence(const Model& m, const TokenSequence& seq, Variant v) {
  Tape tape(false);
  const double z = static_cast<double>(logit_fn_for(v)(m, tape, seq, false).item());
  if (!std::isfinite(z)) throw NumericError("non-finite risk logit");
  return static_cast<real>(z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                  : std::exp(z) / (1.0 + std::exp(z)));
}

}  // namespace clinrisk
