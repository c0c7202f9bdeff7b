#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "clinrisk/model.hpp"
#include "clinrisk/rng.hpp"
#include "clinrisk/tokenizer.hpp"

namespace clinrisk {

struct TrainPlan {
  std::int64_t epochs = 3;
  std::int64_t batch_size = 6;
  real lr_start = real(1e-5);
  real lr_end = real(0);
  bool curriculum = true;  // visit documents shortest-first
  real mask_prob = real(0.15);
  std::uint64_t seed = 0;
  bool grad_clip = false;  // off unless explicitly requested
  real grad_clip_norm = real(1);
  int threads = 1;  // batch members processed in parallel

  void validate() const;
};

/// Linear decay from lr_start at step 0 to lr_end at step == total_steps.
real lr_at(std::int64_t step, std::int64_t total_steps, const TrainPlan& plan);

/// Adam with decoupled weight decay. Consumes (and clears) the gradient
/// buffers of every model parameter; a parameter without a gradient this
/// step is treated as having gradient zero.
class AdamW {
 public:
  struct Options {
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);
    real weight_decay = real(0.01);
  };

  AdamW() : AdamW(Options{}) {}
  explicit AdamW(Options opt) : opt_(opt) {}

  void step(const std::vector<std::pair<std::string, Tensor>>& params, real lr);
  void step(Model& model, real lr) { step(model.parameters(), lr); }
  std::uint64_t steps_taken() const { return t_; }
  const Options& options() const { return opt_; }

 private:
  struct Moments {
    std::vector<real> m, v;
  };
  Options opt_;
  std::uint64_t t_ = 0;
  std::unordered_map<std::string, Moments> state_;
};

/// One masked-language-model training example.
struct MaskedExample {
  TokenSequence seq;                  // ids after replacement
  std::vector<std::int32_t> targets;  // original ids (valid where selected)
  std::vector<std::uint8_t> selected;
};

/// Selects each non-special position independently with probability p;
/// of the selected, 80% become MASK, 10% a random ordinary token drawn
/// from [kNumSpecials, vocab_size), 10% stay unchanged. If nothing gets
/// selected one position is forced, so the loss is never empty.
MaskedExample mask_tokens(const TokenSequence& seq, real p, SeededRng& rng,
                          std::int32_t vocab_size);

/// Stable shortest-first visiting order (a permutation of the corpus).
std::vector<std::size_t> curriculum_order(const std::vector<TokenSequence>& corpus);

struct StepRecord {
  std::int64_t step;
  real lr;
  double loss;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  double first_loss() const { return steps.empty() ? 0.0 : steps.front().loss; }
  double last_loss() const { return steps.empty() ? 0.0 : steps.back().loss; }
};

/// Masked-language-model pretraining, in place. Documents are visited
/// shortest-first when plan.curriculum is set and the order is reused by
/// every later epoch. Writes one `step<TAB>lr<TAB>loss` line per step
/// when log is given; model.step counts optimizer steps.
TrainResult pretrain_mlm(Model& model, const std::vector<TokenSequence>& corpus,
                         const TrainPlan& plan, std::ostream* log = nullptr);

/// Builds the pre-sigmoid logit of one example. Lets the fine-tuning
/// loop drive the windowed model and the chunked variants through one
/// interface.
using LogitFn =
    std::function<Tensor(const Model&, Tape&, const TokenSequence&, bool training)>;

/// Binary cross-entropy fine-tuning over labelled sequences (label must
/// be set on every example; both classes must be present). Batches are
/// reshuffled every epoch from the plan seed.
TrainResult finetune_classifier(Model& model, const std::vector<TokenSequence>& examples,
                                const TrainPlan& plan, const LogitFn& logit_fn,
                                std::ostream* log = nullptr);

}  // namespace clinrisk
