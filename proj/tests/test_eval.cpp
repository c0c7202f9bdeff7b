#include <cmath>
#include <sstream>

#include "clinrisk/errors.hpp"
#include "clinrisk/eval.hpp"
#include "clinrisk/rng.hpp"
#include "clinrisk/synth.hpp"
#include "doctest.h"

using namespace clinrisk;

namespace {

// O(n^2) pairwise oracle with the same tie convention
double brute_force_auc(const std::vector<ScoredExample>& ex) {
  double wins = 0, pairs = 0;
  for (const auto& p : ex)
    for (const auto& n : ex) {
      if (p.label != 1 || n.label != 0) continue;
      pairs += 1;
      if (p.score > n.score) wins += 1;
      else if (p.score == n.score) wins += 0.5;
    }
  return wins / pairs;
}

std::vector<ScoredExample> random_instance(SeededRng& rng, bool with_ties) {
  const std::size_t n = 2 + rng.uniform_int(199);
  std::vector<ScoredExample> ex;
  bool saw_pos = false, saw_neg = false;
  for (std::size_t i = 0; i < n; ++i) {
    ScoredExample e;
    e.case_id = "c" + std::to_string(i);
    e.score = with_ties ? static_cast<real>(rng.uniform_int(7)) / real(6)
                        : static_cast<real>(rng.uniform());
    e.label = rng.uniform() < 0.5 ? 1 : 0;
    saw_pos = saw_pos || e.label == 1;
    saw_neg = saw_neg || e.label == 0;
    ex.push_back(e);
  }
  if (!saw_pos) ex[0].label = 1;
  if (!saw_neg) ex[ex.size() - 1].label = 0;
  return ex;
}

}  // namespace

TEST_CASE("roc_auc hand cases") {
  std::vector<ScoredExample> perfect{{"a", real(0.9), 1}, {"b", real(0.8), 1},
                                     {"c", real(0.2), 0}, {"d", real(0.1), 0}};
  CHECK(roc_auc(perfect) == 1.0);

  std::vector<ScoredExample> ties{{"a", real(0.5), 1}, {"b", real(0.5), 0},
                                  {"c", real(0.5), 1}, {"d", real(0.5), 0}};
  CHECK(roc_auc(ties) == 0.5);

  // 4 pos/neg pairs: 3 wins, 1 loss
  std::vector<ScoredExample> mixed{{"a", real(0.9), 1}, {"b", real(0.8), 0},
                                   {"c", real(0.7), 1}, {"d", real(0.3), 0}};
  CHECK(roc_auc(mixed) == 0.75);
}

TEST_CASE("roc_auc rejects degenerate input") {
  std::vector<ScoredExample> one_class{{"a", real(0.9), 1}, {"b", real(0.8), 1}};
  CHECK_THROWS_AS(roc_auc(one_class), DataError);
  std::vector<ScoredExample> bad_score{{"a", real(1.5), 1}, {"b", real(0.8), 0}};
  CHECK_THROWS_AS(roc_auc(bad_score), NumericError);
  std::vector<ScoredExample> bad_label{{"a", real(0.5), 2}, {"b", real(0.8), 0}};
  CHECK_THROWS_AS(roc_auc(bad_label), DataError);
}

TEST_CASE("rank statistic equals the pairwise oracle on random instances") {
  SeededRng rng(31);
  for (int trial = 0; trial < 250; ++trial) {
    auto ex = random_instance(rng, trial % 2 == 0);
    CHECK(roc_auc(ex) == doctest::Approx(brute_force_auc(ex)).epsilon(1e-12));
  }
}

TEST_CASE("label-flip antisymmetry holds exactly, ties included") {
  SeededRng rng(32);
  for (int trial = 0; trial < 50; ++trial) {
    auto ex = random_instance(rng, true);
    auto flipped = ex;
    for (auto& e : flipped) e.label = 1 - e.label;
    CHECK(roc_auc(ex) == doctest::Approx(1.0 - roc_auc(flipped)).epsilon(1e-12));
  }
}

TEST_CASE("strictly increasing score transforms leave the statistic unchanged") {
  SeededRng rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    auto ex = random_instance(rng, trial % 2 == 0);
    auto cubed = ex;
    for (auto& e : cubed) e.score = e.score * e.score * e.score;
    CHECK(roc_auc(ex) == doctest::Approx(roc_auc(cubed)).epsilon(1e-12));
  }
}

namespace {

synth::GeneratorConfig micro_cfg() {
  synth::GeneratorConfig cfg;
  cfg.seed = 77;
  cfg.n_patients = 40;
  cfg.policy = synth::MarkerPolicy::early;
  cfg.median_len = 160;
  cfg.p75_len = 200;
  cfg.p99_len = 260;
  cfg.malformed_rate = 0;
  cfg.ongoing_rate = 0;
  return cfg;
}

ComparisonPlan micro_plan() {
  ComparisonPlan plan;
  plan.model.hidden = 16;
  plan.model.layers = 1;
  plan.model.heads = 2;
  plan.model.ffn_mult = 2;
  plan.model.window = 16;
  plan.model.dropout_rate = real(0);
  plan.model.seed = 3;
  plan.vocab_max = 256;
  plan.pretrain.epochs = 1;
  plan.pretrain.batch_size = 6;
  plan.pretrain.lr_start = real(1e-3);
  plan.pretrain.seed = 5;
  plan.finetune.epochs = 1;
  plan.finetune.batch_size = 6;
  plan.finetune.seed = 6;
  plan.threads = 2;
  return plan;
}

}  // namespace

TEST_CASE("evaluate: untrained head scores half everywhere, reports are stable") {
  auto corpus = synth::generate(micro_cfg());
  auto cases = extract_cases(corpus.events, KeywordRules::builtin(), corpus.now);

  Vocabulary vocab;
  {
    std::vector<std::string> texts;
    for (const auto& c : cases)
      if (c.status == Case::Status::well_formed)
        for (auto& p : assemble_input(c, false)) texts.push_back(std::move(p));
    vocab = Vocabulary::build_from_texts(texts, 256);
  }
  ModelConfig cfg = micro_plan().model;
  cfg.vocab_size = vocab.size();
  Model dense(cfg);
  Checkpoint base = Checkpoint::from_model(dense, vocab);
  Checkpoint lf = init_longformer_from_dense(base, 2 * cfg.max_positions_base, 2);

  EvalReport r1 = evaluate(lf, cases, false, Variant::longformer, 2, "micro");
  CHECK(r1.auc == 0.5);  // every score is exactly one half
  CHECK(r1.n_pos > 0);
  CHECK(r1.n_neg > 0);
  EvalReport r2 = evaluate(lf, cases, false, Variant::longformer, 1, "micro");
  CHECK(r1.to_json() == r2.to_json());
}

TEST_CASE("a random untrained scorer concentrates near one half on a big balanced set") {
  synth::GeneratorConfig cfg = micro_cfg();
  cfg.n_patients = 1000;
  cfg.marker_rate = 0.5;
  cfg.marker_to_positive = 0.95;
  cfg.base_positive_rate = 0.05;
  auto corpus = synth::generate(cfg);
  auto cases = extract_cases(corpus.events, KeywordRules::builtin(), corpus.now);

  std::vector<std::string> texts;
  for (const auto& c : cases)
    if (c.status == Case::Status::well_formed)
      for (auto& p : assemble_input(c, false)) texts.push_back(std::move(p));
  Vocabulary vocab = Vocabulary::build_from_texts(texts, 256);
  ModelConfig mc = micro_plan().model;
  mc.vocab_size = vocab.size();
  Model dense(mc);
  // random head: scores spread but carry no signal
  SeededRng rng(123);
  Tensor w = dense.param("cls_w");
  for (std::int64_t i = 0; i < w.size(); ++i)
    w.data()[i] = static_cast<real>(rng.normal()) * real(0.3);
  Checkpoint lf = init_longformer_from_dense(Checkpoint::from_model(dense, vocab),
                                             2 * mc.max_positions_base, 2);
  EvalReport report = evaluate(lf, cases, false, Variant::longformer, 2, "null-model");
  CHECK(report.n_pos + report.n_neg > 900);
  CHECK(report.auc > 0.4);
  CHECK(report.auc < 0.6);
}

TEST_CASE("run_comparison produces four deterministic rows") {
  auto corpus = synth::generate(micro_cfg());
  synth::GeneratorConfig test_cfg = micro_cfg();
  test_cfg.seed = 78;
  test_cfg.n_patients = 24;
  auto test_corpus = synth::generate(test_cfg);

  auto train_cases = extract_cases(corpus.events, KeywordRules::builtin(), corpus.now);
  auto test_cases =
      extract_cases(test_corpus.events, KeywordRules::builtin(), test_corpus.now);

  auto run = [&] { return run_comparison(train_cases, test_cases, micro_plan(), nullptr); };
  ComparisonResult a = run();
  REQUIRE(a.rows.size() == 4);
  CHECK(a.rows[0].model == "longformer");
  CHECK(a.rows[1].model == "bert");
  CHECK(a.rows[2].model == "bert-avg");
  CHECK(a.rows[3].model == "bert-rnn");
  for (const auto& r : a.rows) {
    CHECK(r.auc >= 0.0);
    CHECK(r.auc <= 1.0);
    CHECK(r.n_pos > 0);
    CHECK(r.n_neg > 0);
  }
  ComparisonResult b = run();
  CHECK(a.to_json() == b.to_json());

  // text rendering mentions every variant once
  const std::string text = a.to_text(false);
  for (const char* name : {"longformer", "bert", "bert-avg", "bert-rnn"})
    CHECK(text.find(name) != std::string::npos);
}
