#include "clinrisk/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "clinrisk/errors.hpp"
#include "clinrisk/ops.hpp"

namespace clinrisk {
namespace o = ops;

void ModelConfig::validate() const {
  if (vocab_size <= Vocabulary::kNumSpecials)
    throw ConfigError("model: vocab_size must exceed the special-token count");
  if (hidden <= 0 || layers <= 0 || heads <= 0 || ffn_mult <= 0)
    throw ConfigError("model: hidden/layers/heads/ffn_mult must be positive");
  if (hidden % heads != 0)
    throw ConfigError("model: hidden (" + std::to_string(hidden) +
                      ") must be divisible by heads (" + std::to_string(heads) + ")");
  if (max_positions_base <= 0 || extension_factor <= 0)
    throw ConfigError("model: positive position extents required");
  if (dropout_rate < real(0) || dropout_rate >= real(1))
    throw ConfigError("model: dropout_rate must be in [0, 1)");
  attention_config().validate();
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  SeededRng rng(cfg_.seed);
  const auto H = cfg_.hidden, F = cfg_.hidden * cfg_.ffn_mult, V = cfg_.vocab_size;
  const real sd = real(0.02);

  add_param("tok_emb", Tensor::randn({V, H}, rng, sd, true));
  add_param("pos_emb", Tensor::randn({cfg_.max_positions(), H}, rng, sd, true));
  add_param("emb_ln_gain", Tensor::full({H}, 1, true));
  add_param("emb_ln_bias", Tensor::zeros({H}, true));
  for (std::int64_t l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add_param(p + "wq", Tensor::randn({H, H}, rng, sd, true));
    add_param(p + "bq", Tensor::zeros({H}, true));
    add_param(p + "wk", Tensor::randn({H, H}, rng, sd, true));
    add_param(p + "bk", Tensor::zeros({H}, true));
    add_param(p + "wv", Tensor::randn({H, H}, rng, sd, true));
    add_param(p + "bv", Tensor::zeros({H}, true));
    add_param(p + "wo", Tensor::randn({H, H}, rng, sd, true));
    add_param(p + "bo", Tensor::zeros({H}, true));
    add_param(p + "ln1_gain", Tensor::full({H}, 1, true));
    add_param(p + "ln1_bias", Tensor::zeros({H}, true));
    add_param(p + "ffn_w1", Tensor::randn({H, F}, rng, sd, true));
    add_param(p + "ffn_b1", Tensor::zeros({F}, true));
    add_param(p + "ffn_w2", Tensor::randn({F, H}, rng, sd, true));
    add_param(p + "ffn_b2", Tensor::zeros({H}, true));
    add_param(p + "ln2_gain", Tensor::full({H}, 1, true));
    add_param(p + "ln2_bias", Tensor::zeros({H}, true));
  }
  add_param("mlm_bias", Tensor::zeros({V}, true));
  // Risk head starts at zero so an untrained model scores exactly 0.5.
  add_param("cls_w", Tensor::zeros({H}, true));
  add_param("cls_b", Tensor::zeros({1}, true));
  if (cfg_.has_gru) ensure_gru_params();
}

Tensor Model::add_param(const std::string& name, Tensor t) {
  params_.emplace_back(name, t);
  return t;
}

Tensor Model::param(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw ContractError("unknown parameter: " + name);
}

bool Model::has_param(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return true;
  return false;
}

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

void Model::set_positions(Tensor extended) {
  for (auto& [n, t] : params_)
    if (n == "pos_emb") {
      if (extended.dim(1) != cfg_.hidden)
        throw DimensionError("positional table width " + shape_str(extended.shape()) +
                             " does not match hidden size " + std::to_string(cfg_.hidden));
      extended.set_requires_grad(true);
      t = std::move(extended);
      return;
    }
  throw ContractError("model has no positional table");
}

void Model::ensure_gru_params() {
  if (has_param("gru.wz")) {
    cfg_.has_gru = true;
    return;
  }
  SeededRng rng(SeededRng::mix(cfg_.seed, 0x677275 /* "gru" */));
  const auto H = cfg_.hidden;
  const real sd = real(0.02);
  for (const char* gate : {"z", "r", "h"}) {
    add_param(std::string("gru.w") + gate, Tensor::randn({H, H}, rng, sd, true));
    add_param(std::string("gru.u") + gate, Tensor::randn({H, H}, rng, sd, true));
    add_param(std::string("gru.b") + gate, Tensor::zeros({H}, true));
  }
  cfg_.has_gru = true;
}

void Model::check_length(const TokenSequence& seq) const {
  if (seq.length() > cfg_.max_positions())
    throw DataError("sequence length " + std::to_string(seq.length()) +
                    " exceeds the model maximum of " + std::to_string(cfg_.max_positions()));
  if (seq.length() < 1) throw DataError("empty sequence");
  for (auto id : seq.ids)
    if (id < 0 || id >= cfg_.vocab_size)
      throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                      std::to_string(cfg_.vocab_size));
}

Tensor Model::hidden_states(Tape& tape, const TokenSequence& seq, bool mlm,
                            bool training) const {
  check_length(seq);
  const auto n = seq.length();
  const real drop = training ? cfg_.dropout_rate : real(0);

  AttentionMask mask;
  mask.padding = seq.padding;
  if (mlm) {
    mask.global.assign(seq.padding.size(), 0);
  } else {
    mask.global = seq.global;
  }
  mask.validate();

  std::vector<std::int32_t> positions(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);

  Tensor h = o::add(tape, o::embedding_lookup(tape, param("tok_emb"), seq.ids),
                    o::embedding_lookup(tape, param("pos_emb"), positions));
  h = o::layer_norm(tape, h, param("emb_ln_gain"), param("emb_ln_bias"), real(1e-5));
  h = o::dropout(tape, h, drop);

  const AttentionConfig acfg = cfg_.attention_config();
  for (std::int64_t l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Tensor q = o::add_rowvec(tape, o::matmul(tape, h, param(p + "wq")), param(p + "bq"));
    Tensor k = o::add_rowvec(tape, o::matmul(tape, h, param(p + "wk")), param(p + "bk"));
    Tensor v = o::add_rowvec(tape, o::matmul(tape, h, param(p + "wv")), param(p + "bv"));
    Tensor attn = cfg_.attention == AttentionMode::dense
                      ? dense_attention(tape, q, k, v, mask, acfg)
                      : longformer_attention(tape, q, k, v, mask, acfg);
    Tensor a = o::add_rowvec(tape, o::matmul(tape, attn, param(p + "wo")), param(p + "bo"));
    a = o::dropout(tape, a, drop);
    h = o::layer_norm(tape, o::add(tape, h, a), param(p + "ln1_gain"), param(p + "ln1_bias"),
                      real(1e-5));
    Tensor f = o::gelu(
        tape, o::add_rowvec(tape, o::matmul(tape, h, param(p + "ffn_w1")), param(p + "ffn_b1")));
    f = o::add_rowvec(tape, o::matmul(tape, f, param(p + "ffn_w2")), param(p + "ffn_b2"));
    f = o::dropout(tape, f, drop);
    h = o::layer_norm(tape, o::add(tape, h, f), param(p + "ln2_gain"), param(p + "ln2_bias"),
                      real(1e-5));
  }
  return h;
}

Tensor Model::mlm_logits(Tape& tape, const TokenSequence& seq, bool training) const {
  Tensor h = hidden_states(tape, seq, /*mlm=*/true, training);
  // Output projection is tied to the embedding table.
  return o::add_rowvec(tape, o::matmul_nt(tape, h, param("tok_emb")), param("mlm_bias"));
}

Tensor Model::forward_mlm(Tape& tape, const std::vector<TokenSequence>& batch,
                          bool training) const {
  if (batch.empty()) throw ContractError("forward_mlm: empty batch");
  std::int64_t max_len = 0;
  for (const auto& s : batch) max_len = std::max(max_len, s.length());
  if (max_len > cfg_.max_positions())
    throw DataError("sequence length " + std::to_string(max_len) +
                    " exceeds the model maximum of " + std::to_string(cfg_.max_positions()));
  const auto B = static_cast<std::int64_t>(batch.size());
  Tensor out({B, max_len, cfg_.vocab_size});
  for (std::int64_t b = 0; b < B; ++b) {
    TokenSequence padded = batch[static_cast<std::size_t>(b)];
    padded.pad_to(max_len);
    Tensor logits = mlm_logits(tape, padded, training);
    if (!logits.all_finite()) throw NumericError("non-finite masked-token logits");
    std::memcpy(out.data() + b * max_len * cfg_.vocab_size, logits.data(),
                sizeof(real) * static_cast<std::size_t>(logits.size()));
  }
  return out;
}

Tensor Model::classify_logit(Tape& tape, const TokenSequence& seq, bool training) const {
  if (seq.global.empty() || !seq.global[0])
    throw ContractError("classify: the classifier token is not marked global");
  Tensor h = hidden_states(tape, seq, /*mlm=*/false, training);
  Tensor cls = o::select_row(tape, h, 0);
  return o::add(tape, o::dot(tape, param("cls_w"), cls), param("cls_b"));
}

std::vector<real> Model::forward_classify(const std::vector<TokenSequence>& batch) const {
  std::vector<real> scores;
  scores.reserve(batch.size());
  for (const auto& seq : batch) {
    Tape tape(false);
    const double z = static_cast<double>(classify_logit(tape, seq).item());
    if (!std::isfinite(z)) throw NumericError("non-finite risk logit");
    scores.push_back(static_cast<real>(
        z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z))));
  }
  return scores;
}

Model Model::clone() const {
  Model m(cfg_);
  m.copy_values_from(*this);
  m.step = step;
  return m;
}

void Model::copy_values_from(const Model& other) {
  if (other.params_.size() != params_.size())
    throw ContractError("copy_values_from: parameter sets differ");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& src = other.params_[i];
    auto& dst = params_[i];
    if (src.first != dst.first || src.second.shape() != dst.second.shape())
      throw ContractError("copy_values_from: mismatch at parameter " + dst.first);
    std::memcpy(dst.second.data(), src.second.data(),
                sizeof(real) * static_cast<std::size_t>(src.second.size()));
  }
}

Tensor extend_positions(const Tensor& base, std::int64_t factor) {
  if (base.shape().size() != 2)
    throw DimensionError("extend_positions: expected a 2-D table, got " +
                         shape_str(base.shape()));
  if (factor < 1) throw ContractError("extend_positions: factor must be >= 1");
  const auto rows = base.dim(0), cols = base.dim(1);
  Tensor out({rows * factor, cols});
  for (std::int64_t f = 0; f < factor; ++f)
    std::memcpy(out.data() + f * rows * cols, base.data(),
                sizeof(real) * static_cast<std::size_t>(rows * cols));
  return out;
}

}  // namespace clinrisk
