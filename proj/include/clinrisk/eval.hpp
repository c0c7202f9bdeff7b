#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "clinrisk/baselines.hpp"
#include "clinrisk/checkpoint.hpp"
#include "clinrisk/ehr.hpp"
#include "clinrisk/train.hpp"

namespace clinrisk {

struct ScoredExample {
  std::string case_id;
  real score = real(0);  // in [0, 1]
  int label = 0;         // {0, 1}
};

/// P(score+ > score-) + P(score+ = score-)/2 over all positive/negative
/// pairs, computed with midranks in O(n log n). Needs both classes.
double roc_auc(const std::vector<ScoredExample>& examples);

struct EvalReport {
  std::string model;    // variant name
  std::string dataset;
  std::string mode;     // admission-only | 24h
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
  double auc = 0.0;
  std::string checkpoint_hash;  // hex of the scored checkpoint
  std::string config_summary;   // hidden/layers/heads/window

  std::string to_json() const;
};

/// Scores every labelled well-formed case of the dataset with the given
/// strategy and reports ROC-AUC. Deterministic for any thread count.
EvalReport evaluate(const Checkpoint& ckpt, const std::vector<Case>& cases, bool mode24h,
                    Variant variant, int threads, const std::string& dataset_name);

/// Scores only (case order preserved); the building block of evaluate.
std::vector<ScoredExample> score_cases(const Model& model, const Vocabulary& vocab,
                                       const std::vector<Case>& cases, bool mode24h,
                                       Variant variant, int threads);

struct ComparisonPlan {
  ModelConfig model;          // vocab_size is filled in from the built vocabulary
  std::int32_t vocab_max = 512;
  TrainPlan pretrain;         // shared masked-token pretraining
  TrainPlan finetune;         // per-variant classification fine-tuning
  bool mode24h = false;
  int threads = 2;
};

struct ComparisonResult {
  std::vector<EvalReport> rows;  // longformer, bert, bert-avg, bert-rnn
  std::string to_json() const;
  std::string to_text(bool color) const;

  double auc_of(Variant v) const;
};

/// The full experiment: one shared pretraining on the training split,
/// one fine-tuning per scoring strategy from that shared checkpoint, and
/// a common evaluation on the test split.
ComparisonResult run_comparison(const std::vector<Case>& train_cases,
                                const std::vector<Case>& test_cases,
                                const ComparisonPlan& plan, std::ostream* progress = nullptr);

/// Labelled, encoded classification examples of the well-formed cases.
std::vector<TokenSequence> encode_labelled_cases(const Vocabulary& vocab,
                                                 const std::vector<Case>& cases, bool mode24h,
                                                 std::int64_t max_len);

}  // namespace clinrisk
