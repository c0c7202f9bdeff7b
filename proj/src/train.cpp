#include "clinrisk/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <thread>

#include "clinrisk/errors.hpp"
#include "clinrisk/ops.hpp"

namespace clinrisk {
namespace o = ops;

void TrainPlan::validate() const {
  if (epochs < 1 || batch_size < 1) throw ConfigError("train: epochs and batch_size must be >= 1");
  if (!(lr_start > lr_end) || lr_end < real(0))
    throw ConfigError("train: need lr_start > lr_end >= 0");
  if (!(mask_prob > real(0)) || !(mask_prob < real(1)))
    throw ConfigError("train: mask_prob must be in (0, 1)");
  if (threads < 1) throw ConfigError("train: threads must be >= 1");
}

real lr_at(std::int64_t step, std::int64_t total_steps, const TrainPlan& plan) {
  if (total_steps < 1) throw ContractError("lr_at: total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(total_steps) + "]");
  const real frac = real(1) - static_cast<real>(step) / static_cast<real>(total_steps);
  return plan.lr_end + (plan.lr_start - plan.lr_end) * frac;
}

void AdamW::step(const std::vector<std::pair<std::string, Tensor>>& params, real lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(opt_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(opt_.beta2), static_cast<double>(t_));
  for (const auto& [name, param] : params) {
    Tensor p = param;  // shallow handle
    auto& mom = state_[name];
    if (mom.m.empty()) {
      mom.m.assign(static_cast<std::size_t>(p.size()), real{0});
      mom.v.assign(static_cast<std::size_t>(p.size()), real{0});
    }
    const bool has_grad = p.has_grad();
    const std::vector<real>* g = has_grad ? &p.grad() : nullptr;
    real* values = p.data();
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const real gi = has_grad ? (*g)[static_cast<std::size_t>(i)] : real{0};
      if (!std::isfinite(static_cast<double>(gi)))
        throw NumericError("non-finite gradient in parameter " + name);
      auto& m = mom.m[static_cast<std::size_t>(i)];
      auto& v = mom.v[static_cast<std::size_t>(i)];
      m = opt_.beta1 * m + (real(1) - opt_.beta1) * gi;
      v = opt_.beta2 * v + (real(1) - opt_.beta2) * gi * gi;
      const double mhat = static_cast<double>(m) / bc1;
      const double vhat = static_cast<double>(v) / bc2;
      values[i] -= lr * static_cast<real>(mhat / (std::sqrt(vhat) + static_cast<double>(opt_.eps)));
      values[i] -= lr * opt_.weight_decay * values[i];  // decoupled decay
    }
    if (has_grad) p.zero_grad();
  }
}

MaskedExample mask_tokens(const TokenSequence& seq, real p, SeededRng& rng,
                          std::int32_t vocab_size) {
  if (p < real(0) || p > real(1)) throw ContractError("mask_tokens: p must be in [0, 1]");
  if (vocab_size <= Vocabulary::kNumSpecials)
    throw ContractError("mask_tokens: vocab_size must exceed the special-token count");
  MaskedExample ex;
  ex.seq = seq;
  ex.targets.assign(seq.ids.size(), 0);
  ex.selected.assign(seq.ids.size(), 0);

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < seq.ids.size(); ++i)
    if (seq.padding[i] && seq.ids[i] >= Vocabulary::kNumSpecials) eligible.push_back(i);
  if (eligible.empty())
    throw ContractError("mask_tokens: sequence has no maskable (non-special) token");

  std::size_t n_selected = 0;
  for (std::size_t i : eligible)
    if (rng.uniform() < static_cast<double>(p)) {
      ex.selected[i] = 1;
      ++n_selected;
    }
  if (n_selected == 0) {
    ex.selected[eligible[rng.uniform_int(eligible.size())]] = 1;
    n_selected = 1;
  }

  // 80% MASK / 10% random ordinary token / 10% unchanged
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (!ex.selected[i]) continue;
    ex.targets[i] = seq.ids[i];
    const double roll = rng.uniform();
    if (roll < 0.8) {
      ex.seq.ids[i] = Vocabulary::kMask;
    } else if (roll < 0.9) {
      ex.seq.ids[i] = static_cast<std::int32_t>(
          Vocabulary::kNumSpecials +
          rng.uniform_int(static_cast<std::uint64_t>(vocab_size - Vocabulary::kNumSpecials)));
    }  // else: keep the original token
  }
  return ex;
}

std::vector<std::size_t> curriculum_order(const std::vector<TokenSequence>& corpus) {
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus[a].real_length() < corpus[b].real_length();
  });
  return order;
}

namespace {

// Runs one optimizer batch. Each batch slot's loss term is built and
// differentiated on a private model copy; gradients are then added into
// the master in slot order, so the result does not depend on the worker
// count.
double run_batch(Model& master, std::vector<Model>& workers,
                 const std::vector<std::size_t>& items,
                 const std::function<std::pair<Tensor, double>(Model&, Tape&, std::size_t)>&
                     build_weighted_loss) {
  const std::size_t B = items.size();
  const std::size_t W = std::min(workers.size(), B);
  std::vector<std::vector<std::vector<real>>> grad_slots(B);
  std::vector<double> losses(B, 0.0);
  std::vector<std::string> errors(W);

  auto run_slice = [&](std::size_t w) {
    try {
      Model& model = workers[w];
      for (std::size_t bi = w; bi < B; bi += W) {
        Tape tape(true, SeededRng::mix(master.step * 7919 + 13, items[bi]));
        auto [loss, weight] = build_weighted_loss(model, tape, bi);
        losses[bi] = static_cast<double>(loss.item()) * weight;
        Tensor scaled = o::scale(tape, loss, static_cast<real>(weight));
        tape.backward(scaled);
        auto& slot = grad_slots[bi];
        slot.reserve(model.parameters().size());
        for (const auto& [name, t] : model.parameters()) {
          if (t.has_grad()) {
            slot.push_back(std::move(t.grad()));
            t.zero_grad();
          } else {
            slot.emplace_back();
          }
        }
      }
    } catch (const std::exception& e) {
      errors[w] = e.what();
    }
  };

  if (W <= 1) {
    run_slice(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < W; ++w) pool.emplace_back(run_slice, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& err : errors)
    if (!err.empty()) throw NumericError("batch worker failed: " + err);

  const auto& params = master.parameters();
  for (std::size_t bi = 0; bi < B; ++bi) {
    const auto& slot = grad_slots[bi];
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      if (slot[pi].empty()) continue;
      auto& g = params[pi].second.grad();
      const auto& add = slot[pi];
      for (std::size_t i = 0; i < add.size(); ++i) g[i] += add[i];
    }
  }
  double total = 0.0;
  for (double l : losses) total += l;
  return total;
}

void clip_gradients(Model& model, real max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : model.parameters())
    if (t.has_grad())
      for (real g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm <= static_cast<double>(max_norm)) return;
  const real factor = static_cast<real>(static_cast<double>(max_norm) / norm);
  for (const auto& [name, t] : model.parameters())
    if (t.has_grad())
      for (real& g : t.grad()) g *= factor;
}

std::vector<Model> make_workers(const Model& master, int threads) {
  std::vector<Model> workers;
  const int n = std::max(1, threads);
  workers.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) workers.push_back(master.clone());
  return workers;
}

void sync_workers(std::vector<Model>& workers, const Model& master) {
  for (auto& w : workers) w.copy_values_from(master);
}

void log_step(std::ostream* log, const StepRecord& rec) {
  if (!log) return;
  (*log) << rec.step << "\t" << static_cast<double>(rec.lr) << "\t" << rec.loss << "\n";
}

}  // namespace

TrainResult pretrain_mlm(Model& model, const std::vector<TokenSequence>& corpus,
                         const TrainPlan& plan, std::ostream* log) {
  plan.validate();
  if (corpus.empty()) throw DataError("pretrain: empty corpus");

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  if (plan.curriculum) order = curriculum_order(corpus);

  const std::int64_t steps_per_epoch =
      (static_cast<std::int64_t>(order.size()) + plan.batch_size - 1) / plan.batch_size;
  const std::int64_t total_steps = steps_per_epoch * plan.epochs;

  std::vector<Model> workers = make_workers(model, plan.threads);
  AdamW opt;
  TrainResult result;

  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < plan.epochs; ++epoch) {
    for (std::int64_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const std::size_t begin = static_cast<std::size_t>(s * plan.batch_size);
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(plan.batch_size));
      std::vector<std::size_t> items(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));

      // One padded, masked batch; each member keeps its own mask draws so
      // the result is identical for any worker count.
      std::int64_t batch_len = 0;
      for (auto i : items)
        batch_len = std::max(batch_len, corpus[i].length());
      batch_len = std::min(batch_len, model.config().max_positions());
      std::vector<MaskedExample> masked(items.size());
      std::int64_t total_selected = 0;
      for (std::size_t bi = 0; bi < items.size(); ++bi) {
        TokenSequence doc = corpus[items[bi]];
        if (doc.length() > batch_len) {  // over-long documents are truncated
          doc.ids.resize(static_cast<std::size_t>(batch_len));
          doc.padding.resize(static_cast<std::size_t>(batch_len));
          doc.global.resize(static_cast<std::size_t>(batch_len));
        }
        doc.pad_to(batch_len);
        SeededRng rng(SeededRng::mix(plan.seed, static_cast<std::uint64_t>(step) * 100003 + bi));
        masked[bi] = mask_tokens(doc, plan.mask_prob, rng,
                                 static_cast<std::int32_t>(model.config().vocab_size));
        for (auto sel : masked[bi].selected) total_selected += sel;
      }

      const double loss = run_batch(
          model, workers, items,
          [&](Model& m, Tape& tape, std::size_t bi) -> std::pair<Tensor, double> {
            const MaskedExample& ex = masked[bi];
            Tensor logits = m.mlm_logits(tape, ex.seq, /*training=*/true);
            Tensor l = o::cross_entropy_masked(tape, logits, ex.targets, ex.selected);
            std::int64_t count = 0;
            for (auto sel : ex.selected) count += sel;
            return {l, static_cast<double>(count) / static_cast<double>(total_selected)};
          });

      const real lr = lr_at(step, total_steps, plan);
      if (plan.grad_clip) clip_gradients(model, plan.grad_clip_norm);
      opt.step(model, lr);
      model.step += 1;
      sync_workers(workers, model);
      result.steps.push_back({step, lr, loss});
      log_step(log, result.steps.back());
    }
  }
  return result;
}

TrainResult finetune_classifier(Model& model, const std::vector<TokenSequence>& examples,
                                const TrainPlan& plan, const LogitFn& logit_fn,
                                std::ostream* log) {
  plan.validate();
  if (examples.size() < 2) throw DataError("finetune: need at least 2 labelled examples");
  bool has_pos = false, has_neg = false;
  for (const auto& e : examples) {
    if (!e.label.has_value()) throw DataError("finetune: example without a label");
    (*e.label ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg)
    throw DataError("finetune: training set contains a single class; refusing to fit");

  const std::int64_t steps_per_epoch =
      (static_cast<std::int64_t>(examples.size()) + plan.batch_size - 1) / plan.batch_size;
  const std::int64_t total_steps = steps_per_epoch * plan.epochs;

  std::vector<Model> workers = make_workers(model, plan.threads);
  AdamW opt;
  TrainResult result;

  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < plan.epochs; ++epoch) {
    // fresh shuffled order per epoch
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    SeededRng shuffle_rng(SeededRng::mix(plan.seed, 0xf17e + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

    for (std::int64_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const std::size_t begin = static_cast<std::size_t>(s * plan.batch_size);
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(plan.batch_size));
      std::vector<std::size_t> items(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      const double w = 1.0 / static_cast<double>(items.size());

      const double loss = run_batch(
          model, workers, items,
          [&](Model& m, Tape& tape, std::size_t bi) -> std::pair<Tensor, double> {
            const TokenSequence& ex = examples[items[bi]];
            Tensor logit = logit_fn(m, tape, ex, /*training=*/true);
            return {o::bce_with_logit(tape, logit, static_cast<real>(*ex.label)), w};
          });

      const real lr = lr_at(step, total_steps, plan);
      if (plan.grad_clip) clip_gradients(model, plan.grad_clip_norm);
      opt.step(model, lr);
      model.step += 1;
      sync_workers(workers, model);
      result.steps.push_back({step, lr, loss});
      log_step(log, result.steps.back());
    }
  }
  return result;
}

}  // namespace clinrisk
