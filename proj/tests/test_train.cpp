#include <cmath>
#include <sstream>

#include "clinrisk/baselines.hpp"
#include "clinrisk/checkpoint.hpp"
#include "clinrisk/errors.hpp"
#include "clinrisk/model.hpp"
#include "clinrisk/ops.hpp"
#include "clinrisk/train.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace clinrisk;
namespace o = clinrisk::ops;

namespace {

// pairwise ranking statistic used as a local oracle
double pairwise_auc(const std::vector<real>& scores, const std::vector<int>& labels) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[i] != 1 || labels[j] != 0) continue;
      pairs += 1;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  return wins / pairs;
}

TokenSequence dummy_doc(std::int64_t len) {
  TokenSequence s;
  s.ids.assign(static_cast<std::size_t>(len), Vocabulary::kNumSpecials);
  s.ids[0] = Vocabulary::kCls;
  s.padding.assign(static_cast<std::size_t>(len), 1);
  s.global.assign(static_cast<std::size_t>(len), 0);
  return s;
}

}  // namespace

TEST_CASE("lr schedule is affine and hits both endpoints exactly") {
  TrainPlan plan;
  CHECK(lr_at(0, 100, plan) == real(1e-5));
  CHECK(lr_at(100, 100, plan) == real(0));
  CHECK(lr_at(50, 100, plan) == doctest::Approx(5e-6).epsilon(1e-12));
  real prev = lr_at(0, 100, plan);
  for (int s = 1; s <= 100; ++s) {
    const real cur = lr_at(s, 100, plan);
    CHECK(cur <= prev);
    // affine: second difference is zero
    if (s >= 2)
      CHECK(std::abs((lr_at(s, 100, plan) - 2.0 * lr_at(s - 1, 100, plan) +
                      lr_at(s - 2, 100, plan))) < 1e-18);
    prev = cur;
  }
  CHECK_THROWS_AS(lr_at(101, 100, plan), ContractError);
  CHECK_THROWS_AS(lr_at(-1, 100, plan), ContractError);
}

TEST_CASE("adamw: zero gradient with zero decay leaves parameters unchanged") {
  Tensor p = Tensor::from({3}, {1, -2, 3}, true);
  p.grad();  // allocated, all zero
  AdamW opt(AdamW::Options{real(0.9), real(0.999), real(1e-8), real(0)});
  opt.step({{"p", p}}, real(0.1));
  CHECK(p.data()[0] == real(1));
  CHECK(p.data()[1] == real(-2));
  CHECK(p.data()[2] == real(3));
}

TEST_CASE("adamw: unit gradient moves a scalar by about -lr at step one") {
  Tensor p = Tensor::from({1}, {0.7}, true);
  p.grad()[0] = real(1);
  AdamW opt(AdamW::Options{real(0.9), real(0.999), real(1e-8), real(0)});
  opt.step({{"p", p}}, real(0.01));
  CHECK(std::abs(static_cast<double>(p.data()[0]) - (0.7 - 0.01)) < 1e-9);
}

TEST_CASE("adamw matches an independent scalar trace on a quadratic") {
  // loss = p^2, gradient 2p, ten steps
  const double lr = 0.05, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  // oracle: plain scalar recurrence written out longhand
  double p_ref = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 10; ++t) {
    const double g = 2.0 * p_ref;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    p_ref -= lr * mhat / (std::sqrt(vhat) + eps);
    p_ref -= lr * wd * p_ref;
  }

  Tensor p = Tensor::from({1}, {1.0}, true);
  AdamW opt(AdamW::Options{real(b1), real(b2), real(eps), real(wd)});
  for (int t = 1; t <= 10; ++t) {
    p.zero_grad();
    Tape tape;
    Tensor loss = o::mul(tape, p, p);
    tape.backward(loss);
    opt.step({{"p", p}}, real(lr));
  }
  CHECK(std::abs(static_cast<double>(p.data()[0]) - p_ref) < 1e-12);
}

TEST_CASE("adamw with zero decay equals plain adam on the same trace") {
  auto run = [](double wd) {
    Tensor p = Tensor::from({1}, {1.0}, true);
    AdamW opt(AdamW::Options{real(0.9), real(0.999), real(1e-8), real(wd)});
    for (int t = 1; t <= 10; ++t) {
      p.zero_grad();
      Tape tape;
      Tensor loss = o::mul(tape, p, p);
      tape.backward(loss);
      opt.step({{"p", p}}, real(0.05));
    }
    return static_cast<double>(p.data()[0]);
  };
  // plain adam oracle (no decay term)
  double p_ref = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 10; ++t) {
    const double g = 2.0 * p_ref;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    p_ref -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  CHECK(std::abs(run(0.0) - p_ref) < 1e-12);
  CHECK(run(0.01) != run(0.0));
}

TEST_CASE("adamw aborts on a NaN gradient naming the parameter") {
  Tensor p = Tensor::from({2}, {1, 2}, true);
  p.grad()[1] = std::numeric_limits<real>::quiet_NaN();
  AdamW opt;
  try {
    opt.step({{"embedding_table", p}}, real(0.1));
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("embedding_table") != std::string::npos);
  }
}

TEST_CASE("mask_tokens: forced floor, specials excluded, binomial rate") {
  std::istringstream corpus("aa bb cc dd");
  Vocabulary v = Vocabulary::build(corpus, 12);

  // p = 0: nothing drawn, one position forced
  TokenSequence seq = encode(v, {"aa bb cc dd"}, 100);
  SeededRng rng(1);
  MaskedExample none = mask_tokens(seq, real(0), rng, v.size());
  int count = 0;
  for (auto s : none.selected) count += s;
  CHECK(count == 1);

  // specials and PAD are never candidates
  TokenSequence padded = encode(v, {"aa bb", "cc dd"}, 100);
  padded.pad_to(32);
  SeededRng rng2(2);
  MaskedExample all = mask_tokens(padded, real(0.999999), rng2, v.size());
  for (std::size_t i = 0; i < all.seq.ids.size(); ++i) {
    if (padded.ids[i] < Vocabulary::kNumSpecials || !padded.padding[i])
      CHECK(all.selected[i] == 0);
    else
      CHECK(all.selected[i] == 1);
  }
  // targets carry the original ids at selected positions
  for (std::size_t i = 0; i < all.seq.ids.size(); ++i)
    if (all.selected[i]) CHECK(all.targets[i] == padded.ids[i]);

  // selection rate over a 10,000-token stream
  TokenSequence big = dummy_doc(10002);
  SeededRng rng3(3);
  MaskedExample ex = mask_tokens(big, real(0.15), rng3, v.size());
  std::int64_t selected = 0;
  for (auto s : ex.selected) selected += s;
  const double fraction = static_cast<double>(selected) / 10000.0;
  CHECK(fraction > 0.14);
  CHECK(fraction < 0.16);

  // replacement mix: roughly 80% MASK, 10% random, 10% unchanged
  std::int64_t masked = 0, unchanged = 0, random_tok = 0;
  for (std::size_t i = 0; i < ex.seq.ids.size(); ++i) {
    if (!ex.selected[i]) continue;
    if (ex.seq.ids[i] == Vocabulary::kMask) ++masked;
    else if (ex.seq.ids[i] == big.ids[i]) ++unchanged;
    else ++random_tok;
  }
  CHECK(static_cast<double>(masked) / selected > 0.75);
  CHECK(static_cast<double>(masked) / selected < 0.85);
  CHECK(random_tok > 0);
  CHECK(unchanged > 0);
}

TEST_CASE("curriculum order sorts by length and is a permutation") {
  std::vector<TokenSequence> corpus{dummy_doc(900), dummy_doc(30), dummy_doc(512)};
  auto order = curriculum_order(corpus);
  CHECK(order == std::vector<std::size_t>{1, 2, 0});

  // stability and permutation on ties
  std::vector<TokenSequence> tied{dummy_doc(8), dummy_doc(8), dummy_doc(4), dummy_doc(8)};
  auto t = curriculum_order(tied);
  CHECK(t == std::vector<std::size_t>{2, 0, 1, 3});
}

namespace {

struct TinySetup {
  Vocabulary vocab;
  ModelConfig cfg;
  TinySetup() {
    std::istringstream corpus(
        "fever cough rales clear improving worsening stable oxygen severe mild");
    vocab = Vocabulary::build(corpus, 32);
    cfg.vocab_size = vocab.size();
    cfg.hidden = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.ffn_mult = 2;
    cfg.max_positions_base = 64;
    cfg.extension_factor = 2;
    cfg.window = 8;
    cfg.dropout_rate = real(0);
    cfg.seed = 11;
  }
};

}  // namespace

TEST_CASE("pretrain: initial loss near ln(vocab), learning reduces it, deterministic") {
  TinySetup s;
  std::vector<TokenSequence> corpus;
  SeededRng rng(5);
  for (int d = 0; d < 12; ++d) {
    std::string text;
    const int len = 6 + static_cast<int>(rng.uniform_int(20));
    for (int i = 0; i < len; ++i)
      text += s.vocab.token_of(static_cast<std::int32_t>(
                  Vocabulary::kNumSpecials +
                  rng.uniform_int(static_cast<std::uint64_t>(s.vocab.size() - 5)))) +
              " ";
    corpus.push_back(encode(s.vocab, {text}, 64));
  }

  auto run = [&](int threads) {
    Model m(s.cfg);
    TrainPlan plan;
    plan.epochs = 2;
    plan.batch_size = 4;
    plan.lr_start = real(5e-3);
    plan.seed = 77;
    plan.threads = threads;
    TrainResult r = pretrain_mlm(m, corpus, plan);
    return std::make_pair(r, m.step);
  };

  auto [r1, steps1] = run(1);
  CHECK(steps1 == 6);  // 2 epochs x ceil(12/4)
  const double uniform = std::log(static_cast<double>(s.cfg.vocab_size));
  CHECK(r1.first_loss() > uniform * 0.85);
  CHECK(r1.first_loss() < uniform * 1.15);
  CHECK(r1.last_loss() < r1.first_loss());

  // same seed, different worker count: identical trace
  auto [r2, steps2] = run(2);
  REQUIRE(r1.steps.size() == r2.steps.size());
  for (std::size_t i = 0; i < r1.steps.size(); ++i)
    CHECK(r1.steps[i].loss == r2.steps[i].loss);

  Model empty_target(s.cfg);
  CHECK_THROWS_AS(pretrain_mlm(empty_target, {}, TrainPlan{}), DataError);
}

TEST_CASE("pretrain log lines are tab separated step, lr, loss") {
  TinySetup s;
  std::vector<TokenSequence> corpus{encode(s.vocab, {"fever cough rales"}, 64),
                                    encode(s.vocab, {"oxygen severe mild stable"}, 64)};
  Model m(s.cfg);
  TrainPlan plan;
  plan.epochs = 1;
  plan.batch_size = 2;
  plan.lr_start = real(1e-3);
  std::ostringstream log;
  pretrain_mlm(m, corpus, plan, &log);
  std::istringstream lines(log.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    CHECK(std::count(line.begin(), line.end(), '\t') == 2);
    ++n;
  }
  CHECK(n == 1);
}

TEST_CASE("finetune separates a linearly separable toy set and is deterministic") {
  TinySetup s;
  // marker word decides the label; texts otherwise identical
  std::vector<TokenSequence> train;
  for (int i = 0; i < 20; ++i) {
    const bool pos = i % 2 == 0;
    std::string text = pos ? "fever cough severe worsening oxygen"
                           : "fever cough mild improving clear";
    TokenSequence seq = encode(s.vocab, {text}, 64);
    seq.label = pos ? 1 : 0;
    train.push_back(seq);
  }

  auto run = [&](int threads) {
    Model m(s.cfg);
    TrainPlan plan;
    plan.epochs = 3;
    plan.batch_size = 6;
    plan.lr_start = real(0.02);
    plan.seed = 9;
    plan.threads = threads;
    LogitFn fn = [](const Model& mm, Tape& tape, const TokenSequence& seq, bool training) {
      TokenSequence marked = seq;
      marked.mark_for_classification();
      return mm.classify_logit(tape, marked, training);
    };
    TrainResult r = finetune_classifier(m, train, plan, fn);
    std::vector<real> scores;
    std::vector<int> labels;
    for (auto& e : train) {
      TokenSequence marked = e;
      marked.mark_for_classification();
      scores.push_back(m.forward_classify({marked})[0]);
      labels.push_back(*e.label);
    }
    return std::make_tuple(pairwise_auc(scores, labels), r.last_loss());
  };

  auto [auc1, loss1] = run(1);
  CHECK(auc1 == 1.0);
  auto [auc2, loss2] = run(2);
  CHECK(loss1 == loss2);
}

TEST_CASE("tiled position rows diverge once pretraining starts") {
  TinySetup s;
  ModelConfig cfg = s.cfg;
  cfg.max_positions_base = 8;
  cfg.extension_factor = 2;
  cfg.window = 4;
  Model dense(cfg);
  Checkpoint conv = init_longformer_from_dense(Checkpoint::from_model(dense, s.vocab), 4, 2);
  Model lf = conv.to_model();

  // tiled before training: row i equals row i+8
  Tensor pos = lf.param("pos_emb");
  const auto H = cfg.hidden;
  for (std::int64_t i = 0; i < 8; ++i)
    for (std::int64_t c = 0; c < H; ++c)
      CHECK(pos.data()[i * H + c] == pos.data()[(i + 8) * H + c]);

  // long documents reach the second tile, so its rows get distinct updates
  std::vector<TokenSequence> corpus{encode(s.vocab, {"fever cough rales clear improving "
                                                     "worsening stable oxygen severe mild "
                                                     "fever cough rales"},
                                           16)};
  TrainPlan plan;
  plan.epochs = 3;
  plan.batch_size = 1;
  plan.lr_start = real(1e-2);
  pretrain_mlm(lf, corpus, plan);
  bool diverged = false;
  for (std::int64_t i = 0; i < 8 && !diverged; ++i)
    for (std::int64_t c = 0; c < H && !diverged; ++c)
      diverged = pos.data()[i * H + c] != pos.data()[(i + 8) * H + c];
  CHECK(diverged);
}

TEST_CASE("finetune refuses a single-class training set") {
  TinySetup s;
  std::vector<TokenSequence> train;
  for (int i = 0; i < 4; ++i) {
    TokenSequence seq = encode(s.vocab, {"fever"}, 64);
    seq.label = 1;
    train.push_back(seq);
  }
  Model m(s.cfg);
  LogitFn fn = [](const Model& mm, Tape& tape, const TokenSequence& seq, bool training) {
    TokenSequence marked = seq;
    marked.mark_for_classification();
    return mm.classify_logit(tape, marked, training);
  };
  CHECK_THROWS_AS(finetune_classifier(m, train, TrainPlan{}, fn), DataError);
  CHECK_THROWS_AS(finetune_classifier(m, {train[0]}, TrainPlan{}, fn), DataError);
}
