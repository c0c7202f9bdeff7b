#include "clinrisk/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "clinrisk/errors.hpp"
#include "json.hpp"

namespace clinrisk {
namespace {

std::string hash_hex(std::uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string summarize(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "hidden=" << cfg.hidden << " layers=" << cfg.layers << " heads=" << cfg.heads
     << " window=" << cfg.window;
  return os.str();
}

const char* mode_label(bool mode24h) { return mode24h ? "24h" : "admission-only"; }

}  // namespace

double roc_auc(const std::vector<ScoredExample>& examples) {
  std::int64_t n_pos = 0, n_neg = 0;
  for (const auto& e : examples) {
    if (!std::isfinite(static_cast<double>(e.score)) || e.score < real(0) || e.score > real(1))
      throw NumericError("score out of [0,1] for case " + e.case_id);
    if (e.label == 1) ++n_pos;
    else if (e.label == 0) ++n_neg;
    else throw DataError("label must be 0 or 1 for case " + e.case_id);
  }
  if (n_pos == 0 || n_neg == 0)
    throw DataError("roc_auc undefined: needs at least one positive and one negative");

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return examples[a].score < examples[b].score;
  });

  // midranks over tie groups, ranks are 1-based
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && examples[order[j]].score == examples[order[i]].score) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (examples[order[k]].label == 1) rank_sum_pos += midrank;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

std::vector<TokenSequence> encode_labelled_cases(const Vocabulary& vocab,
                                                 const std::vector<Case>& cases, bool mode24h,
                                                 std::int64_t max_len) {
  std::vector<TokenSequence> out;
  for (const auto& c : cases) {
    if (c.status != Case::Status::well_formed || !c.label) continue;
    TokenSequence seq = encode(vocab, assemble_input(c, mode24h), max_len);
    seq.label = *c.label;
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<ScoredExample> score_cases(const Model& model, const Vocabulary& vocab,
                                       const std::vector<Case>& cases, bool mode24h,
                                       Variant variant, int threads) {
  std::vector<const Case*> scored;
  for (const auto& c : cases)
    if (c.status == Case::Status::well_formed && c.label) scored.push_back(&c);

  std::vector<ScoredExample> results(scored.size());
  const int W = std::max(1, std::min<int>(threads, static_cast<int>(scored.size())));
  std::vector<std::string> errors(static_cast<std::size_t>(W));
  auto work = [&](int w) {
    try {
      for (std::size_t i = static_cast<std::size_t>(w); i < scored.size();
           i += static_cast<std::size_t>(W)) {
        const Case& c = *scored[i];
        TokenSequence seq =
            encode(vocab, assemble_input(c, mode24h), model.config().max_positions());
        results[i] = {c.case_id, score_sequence(model, seq, variant), *c.label};
      }
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(w)] = e.what();
    }
  };
  if (W <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < W; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& err : errors)
    if (!err.empty()) throw DataError("scoring failed: " + err);
  return results;
}

EvalReport evaluate(const Checkpoint& ckpt, const std::vector<Case>& cases, bool mode24h,
                    Variant variant, int threads, const std::string& dataset_name) {
  Model model = ckpt.to_model();
  auto scores = score_cases(model, ckpt.vocab, cases, mode24h, variant, threads);
  EvalReport report;
  report.model = variant_name(variant);
  report.dataset = dataset_name;
  report.mode = mode_label(mode24h);
  for (const auto& s : scores) (s.label ? report.n_pos : report.n_neg) += 1;
  report.auc = roc_auc(scores);
  report.checkpoint_hash = hash_hex(ckpt.content_hash());
  report.config_summary = summarize(ckpt.config);
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["model"] = model;
  j["dataset"] = dataset;
  j["mode"] = mode;
  j["n_pos"] = n_pos;
  j["n_neg"] = n_neg;
  j["roc_auc"] = auc;
  j["checkpoint"] = checkpoint_hash;
  j["config"] = config_summary;
  return j.dump();
}

double ComparisonResult::auc_of(Variant v) const {
  for (const auto& r : rows)
    if (r.model == variant_name(v)) return r.auc;
  throw ContractError("comparison has no row for " + std::string(variant_name(v)));
}

std::string ComparisonResult::to_json() const {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) j["rows"].push_back(nlohmann::json::parse(r.to_json()));
  return j.dump(2) + "\n";
}

std::string ComparisonResult::to_text(bool color) const {
  const char* bold = color ? "\033[1m" : "";
  const char* dim = color ? "\033[0m" : "";
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].auc > rows[best].auc) best = i;
  std::ostringstream os;
  os << "model        dataset      mode            n_pos  n_neg  roc_auc\n";
  os << "-----------  -----------  --------------  -----  -----  -------\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    char line[160];
    std::snprintf(line, sizeof(line), "%-11s  %-11s  %-14s  %5lld  %5lld  %s%.4f%s\n",
                  r.model.c_str(), r.dataset.c_str(), r.mode.c_str(),
                  static_cast<long long>(r.n_pos), static_cast<long long>(r.n_neg),
                  i == best ? bold : "", r.auc, i == best ? dim : "");
    os << line;
  }
  return os.str();
}

ComparisonResult run_comparison(const std::vector<Case>& train_cases,
                                const std::vector<Case>& test_cases,
                                const ComparisonPlan& plan, std::ostream* progress) {
  auto note = [&](const std::string& msg) {
    if (progress) (*progress) << msg << "\n" << std::flush;
  };

  // vocabulary from the training texts in the evaluation mode
  std::vector<std::string> texts;
  for (const auto& c : train_cases) {
    if (c.status != Case::Status::well_formed || !c.label) continue;
    for (auto& part : assemble_input(c, plan.mode24h)) texts.push_back(std::move(part));
  }
  if (texts.empty()) throw DataError("comparison: no usable training cases");
  Vocabulary vocab = Vocabulary::build_from_texts(texts, plan.vocab_max);

  ModelConfig cfg = plan.model;
  cfg.vocab_size = vocab.size();
  cfg.attention = AttentionMode::dense;
  note("vocab built: " + std::to_string(vocab.size()) + " tokens");

  // dense initialisation, conversion, one shared pretraining pass
  Model dense(cfg);
  Checkpoint base = Checkpoint::from_model(dense, vocab);
  Checkpoint converted = init_longformer_from_dense(base, plan.model.window,
                                                    plan.model.extension_factor);
  Model shared = converted.to_model();

  std::vector<TokenSequence> mlm_docs;
  for (const auto& c : train_cases) {
    if (c.status != Case::Status::well_formed || !c.label) continue;
    mlm_docs.push_back(encode(vocab, assemble_input(c, plan.mode24h), shared.config().max_positions()));
  }
  TrainPlan pre = plan.pretrain;
  pre.threads = plan.threads;
  note("pretraining on " + std::to_string(mlm_docs.size()) + " documents");
  TrainResult pre_log = pretrain_mlm(shared, mlm_docs, pre);
  note("pretrain loss " + std::to_string(pre_log.first_loss()) + " -> " +
       std::to_string(pre_log.last_loss()));
  Checkpoint shared_ckpt = Checkpoint::from_model(shared, vocab);

  std::vector<TokenSequence> train_labelled =
      encode_labelled_cases(vocab, train_cases, plan.mode24h, shared.config().max_positions());

  ComparisonResult result;
  for (Variant v : {Variant::longformer, Variant::bert, Variant::bert_avg, Variant::bert_rnn}) {
    Checkpoint start = v == Variant::longformer ? shared_ckpt : restrict_to_base_dense(shared_ckpt);
    Model model = start.to_model();
    if (v == Variant::bert_rnn) model.ensure_gru_params();
    TrainPlan fin = plan.finetune;
    fin.threads = plan.threads;
    note(std::string("fine-tuning ") + variant_name(v) + " on " +
         std::to_string(train_labelled.size()) + " cases");
    TrainResult fin_log = finetune_classifier(model, train_labelled, fin, logit_fn_for(v));
    note(std::string("  loss ") + std::to_string(fin_log.first_loss()) + " -> " +
         std::to_string(fin_log.last_loss()));
    Checkpoint tuned = Checkpoint::from_model(model, vocab);
    result.rows.push_back(
        evaluate(tuned, test_cases, plan.mode24h, v, plan.threads, "test"));
    note(std::string("  ") + variant_name(v) + " auc " +
         std::to_string(result.rows.back().auc));
  }
  return result;
}

}  // namespace clinrisk
