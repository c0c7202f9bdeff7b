#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "clinrisk/baselines.hpp"
#include "clinrisk/checkpoint.hpp"
#include "clinrisk/ehr.hpp"
#include "clinrisk/errors.hpp"
#include "clinrisk/eval.hpp"
#include "clinrisk/synth.hpp"
#include "clinrisk/train.hpp"

#ifdef _WIN32
#else
#include <unistd.h>
#endif

using namespace clinrisk;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

bool color_allowed() {
  if (std::getenv("NO_COLOR") != nullptr) return false;
  return isatty(fileno(stdout)) != 0;
}

std::vector<EventRecord> load_events(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open events file " + path);
  return read_events_jsonl(in);
}

std::vector<Case> load_cases_for_model(const std::string& events_path,
                                       const std::string& rules_path, const std::string& now) {
  KeywordRules rules =
      rules_path.empty() ? KeywordRules::builtin() : KeywordRules::load(rules_path);
  auto events = load_events(events_path);
  TimePoint now_tp{};
  if (!now.empty()) {
    auto parsed = parse_rfc3339(now);
    if (!parsed) throw DataError("bad --now timestamp: " + now);
    now_tp = *parsed;
  } else {
    std::int64_t latest = 0;
    for (const auto& e : events)
      if (e.timestamp) latest = std::max(latest, e.timestamp->seconds);
    now_tp = TimePoint{latest};
  }
  return extract_cases(events, rules, now_tp);
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << content;
}

struct GlobalOpts {
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 2;
};

void apply_seed(const GlobalOpts& g, std::uint64_t& target) {
  if (g.seed_set) target = g.seed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-document clinical risk scoring toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Plain-text key=value configuration file");
  app.get_config_formatter_base()->comment('#');

  GlobalOpts global;
  app.add_option("--seed", global.seed, "Global random seed")
      ->each([&](const std::string&) { global.seed_set = true; });
  app.add_option("--threads", global.threads, "Worker threads")->check(CLI::PositiveNumber);

  // ---- synth-generate ----------------------------------------------------
  auto* cmd_gen = app.add_subcommand("synth-generate", "Generate a synthetic event corpus");
  synth::GeneratorConfig gen_cfg;
  std::string gen_out = "corpus";
  std::string gen_policy = "late", gen_channel = "admission";
  cmd_gen->add_option("--out-dir", gen_out, "Output directory (must exist)");
  cmd_gen->add_option("--patients", gen_cfg.n_patients, "Number of patients");
  cmd_gen->add_option("--median-len", gen_cfg.median_len, "Target median input length");
  cmd_gen->add_option("--p75-len", gen_cfg.p75_len, "Target 75th percentile length");
  cmd_gen->add_option("--p99-len", gen_cfg.p99_len, "Target 99th percentile length");
  cmd_gen->add_option("--marker", gen_cfg.marker, "Three-token marker phrase");
  cmd_gen->add_option("--policy", gen_policy, "Marker position policy: early|late|mixed");
  cmd_gen->add_option("--channel", gen_channel, "Marker channel: admission|radiology");
  cmd_gen->add_option("--marker-rate", gen_cfg.marker_rate, "Fraction of cases with marker");
  cmd_gen->add_option("--q", gen_cfg.marker_to_positive, "P(positive | marker)");
  cmd_gen->add_option("--base-rate", gen_cfg.base_positive_rate, "P(positive | no marker)");
  cmd_gen->add_option("--malformed-rate", gen_cfg.malformed_rate, "Malformed case rate");
  cmd_gen->add_option("--ongoing-rate", gen_cfg.ongoing_rate, "Ongoing case rate");
  std::string gen_split;
  std::uint64_t gen_split_seed = 1;
  cmd_gen->add_option("--split", gen_split,
                      "Also write a patient-level train,validation,test split "
                      "(e.g. 0.8,0.1,0.1)");
  cmd_gen->add_option("--split-seed", gen_split_seed, "Seed for the split shuffle");

  // ---- extract-cases -----------------------------------------------------
  auto* cmd_ext = app.add_subcommand("extract-cases", "Run case extraction over an event stream");
  std::string ext_events, ext_out = "-", ext_rules, ext_now, ext_mode = "admission-only";
  cmd_ext->add_option("--events", ext_events, "Input events JSONL")->required();
  cmd_ext->add_option("--out", ext_out, "Output cases JSONL ('-' for stdout)");
  cmd_ext->add_option("--rules", ext_rules, "Keyword rules file (default: built-in)");
  cmd_ext->add_option("--now", ext_now, "Reference time, RFC 3339 (default: latest event)");
  cmd_ext->add_option("--mode", ext_mode, "Input assembly: admission-only|24h");

  // ---- build-vocab -------------------------------------------------------
  auto* cmd_vocab = app.add_subcommand("build-vocab", "Build a vocabulary from text");
  std::string vb_text, vb_events, vb_rules, vb_now, vb_mode = "admission-only", vb_out;
  std::int32_t vb_max = 512;
  cmd_vocab->add_option("--text", vb_text, "Plain-text corpus file");
  cmd_vocab->add_option("--events", vb_events, "Events JSONL (texts of extracted cases)");
  cmd_vocab->add_option("--rules", vb_rules, "Keyword rules file for extraction");
  cmd_vocab->add_option("--now", vb_now, "Reference time for extraction");
  cmd_vocab->add_option("--mode", vb_mode, "Input assembly: admission-only|24h");
  cmd_vocab->add_option("--max-size", vb_max, "Maximum vocabulary size");
  cmd_vocab->add_option("--out", vb_out, "Output vocabulary file")->required();

  // ---- pretrain ----------------------------------------------------------
  auto* cmd_pre = app.add_subcommand("pretrain", "Masked-token pretraining");
  std::string pre_in, pre_out, pre_events, pre_rules, pre_now, pre_vocab,
      pre_mode = "admission-only", pre_log;
  ModelConfig pre_model;
  TrainPlan pre_plan;
  pre_plan.lr_start = real(3e-4);  // from-scratch desk pretraining default
  cmd_pre->add_option("--in", pre_in, "Starting checkpoint (omit to initialise fresh dense)");
  cmd_pre->add_option("--vocab", pre_vocab, "Vocabulary file (required without --in)");
  cmd_pre->add_option("--events", pre_events, "Training events JSONL")->required();
  cmd_pre->add_option("--rules", pre_rules, "Keyword rules file");
  cmd_pre->add_option("--now", pre_now, "Reference time for extraction");
  cmd_pre->add_option("--mode", pre_mode, "Input assembly: admission-only|24h");
  cmd_pre->add_option("--out", pre_out, "Output checkpoint")->required();
  cmd_pre->add_option("--log", pre_log, "Step log file (tab-separated)");
  cmd_pre->add_option("--epochs", pre_plan.epochs, "Training epochs");
  cmd_pre->add_option("--batch-size", pre_plan.batch_size, "Batch size");
  cmd_pre->add_option("--lr", pre_plan.lr_start, "Starting learning rate");
  cmd_pre->add_option("--mask-prob", pre_plan.mask_prob, "Masking probability");
  cmd_pre->add_flag("--no-curriculum", "Disable shortest-first ordering");
  cmd_pre->add_option("--hidden", pre_model.hidden, "Hidden size (fresh model)");
  cmd_pre->add_option("--layers", pre_model.layers, "Encoder layers (fresh model)");
  cmd_pre->add_option("--heads", pre_model.heads, "Attention heads (fresh model)");
  cmd_pre->add_option("--window", pre_model.window, "Attention window (fresh model)");
  cmd_pre->add_option("--dropout", pre_model.dropout_rate, "Dropout rate (fresh model)");

  // ---- convert-longformer --------------------------------------------------
  auto* cmd_conv = app.add_subcommand("convert-longformer",
                                      "Extend a dense checkpoint to windowed+global attention");
  std::string conv_in, conv_out;
  std::int64_t conv_window = 64, conv_factor = 16;
  cmd_conv->add_option("--in", conv_in, "Dense checkpoint")->required();
  cmd_conv->add_option("--out", conv_out, "Converted checkpoint")->required();
  cmd_conv->add_option("--window", conv_window, "Attention window");
  cmd_conv->add_option("--factor", conv_factor, "Positional table extension factor");

  // ---- finetune ------------------------------------------------------------
  auto* cmd_fin = app.add_subcommand("finetune", "Classification fine-tuning");
  std::string fin_in, fin_out, fin_events, fin_rules, fin_now, fin_model = "longformer",
                                                               fin_mode = "admission-only",
                                                               fin_log;
  TrainPlan fin_plan;
  cmd_fin->add_option("--in", fin_in, "Pretrained checkpoint")->required();
  cmd_fin->add_option("--events", fin_events, "Labelled training events JSONL")->required();
  cmd_fin->add_option("--rules", fin_rules, "Keyword rules file");
  cmd_fin->add_option("--now", fin_now, "Reference time for extraction");
  cmd_fin->add_option("--model", fin_model, "longformer|bert|bert-avg|bert-rnn");
  cmd_fin->add_option("--mode", fin_mode, "Input assembly: admission-only|24h");
  cmd_fin->add_option("--out", fin_out, "Output checkpoint")->required();
  cmd_fin->add_option("--log", fin_log, "Step log file (tab-separated)");
  cmd_fin->add_option("--epochs", fin_plan.epochs, "Training epochs");
  cmd_fin->add_option("--batch-size", fin_plan.batch_size, "Batch size");
  cmd_fin->add_option("--lr", fin_plan.lr_start, "Starting learning rate");

  // ---- evaluate --------------------------------------------------------------
  auto* cmd_eval = app.add_subcommand("evaluate", "Score a dataset and report ROC-AUC");
  std::string ev_in, ev_events, ev_rules, ev_now, ev_model = "longformer",
                                                  ev_mode = "admission-only", ev_json;
  std::string ev_name = "dataset";
  cmd_eval->add_option("--in", ev_in, "Checkpoint")->required();
  cmd_eval->add_option("--events", ev_events, "Evaluation events JSONL")->required();
  cmd_eval->add_option("--rules", ev_rules, "Keyword rules file");
  cmd_eval->add_option("--now", ev_now, "Reference time for extraction");
  cmd_eval->add_option("--model", ev_model, "longformer|bert|bert-avg|bert-rnn");
  cmd_eval->add_option("--mode", ev_mode, "Input assembly: admission-only|24h");
  cmd_eval->add_option("--name", ev_name, "Dataset name for the report");
  cmd_eval->add_option("--json", ev_json, "Write the report as JSON to this file");

  // ---- compare -----------------------------------------------------------------
  auto* cmd_cmp = app.add_subcommand(
      "compare", "Pretrain once, fine-tune all strategies, evaluate on a shared test set");
  std::string cmp_train, cmp_test, cmp_rules, cmp_now, cmp_mode = "admission-only", cmp_json;
  ComparisonPlan cmp_plan;
  bool cmp_quiet = false;
  cmd_cmp->add_option("--train-events", cmp_train, "Training events JSONL")->required();
  cmd_cmp->add_option("--test-events", cmp_test, "Test events JSONL")->required();
  cmd_cmp->add_option("--rules", cmp_rules, "Keyword rules file");
  cmd_cmp->add_option("--now", cmp_now, "Reference time for extraction");
  cmd_cmp->add_option("--mode", cmp_mode, "Input assembly: admission-only|24h");
  cmd_cmp->add_option("--json", cmp_json, "Write the comparison as JSON to this file");
  cmd_cmp->add_option("--vocab-max", cmp_plan.vocab_max, "Vocabulary cap");
  cmd_cmp->add_option("--hidden", cmp_plan.model.hidden, "Hidden size");
  cmd_cmp->add_option("--layers", cmp_plan.model.layers, "Encoder layers");
  cmd_cmp->add_option("--heads", cmp_plan.model.heads, "Attention heads");
  cmd_cmp->add_option("--window", cmp_plan.model.window, "Attention window");
  cmd_cmp->add_option("--pretrain-epochs", cmp_plan.pretrain.epochs, "Pretraining epochs");
  cmd_cmp->add_option("--pretrain-lr", cmp_plan.pretrain.lr_start, "Pretraining learning rate");
  cmd_cmp->add_option("--finetune-epochs", cmp_plan.finetune.epochs, "Fine-tuning epochs");
  cmd_cmp->add_option("--finetune-lr", cmp_plan.finetune.lr_start, "Fine-tuning learning rate");
  cmd_cmp->add_option("--batch-size", cmp_plan.finetune.batch_size, "Batch size (both phases)");
  cmd_cmp->add_flag("--quiet", cmp_quiet, "Suppress progress notes");
  cmp_plan.pretrain.lr_start = real(3e-4);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*cmd_gen) {
      gen_cfg.seed = global.seed;
      gen_cfg.policy = synth::policy_from_name(gen_policy);
      gen_cfg.channel = synth::channel_from_name(gen_channel);
      synth::SyntheticCorpus corpus = synth::generate(gen_cfg);
      {
        std::ofstream ev(gen_out + "/events.jsonl", std::ios::binary | std::ios::trunc);
        if (!ev) throw DataError("cannot write into --out-dir " + gen_out);
        write_events_jsonl(ev, corpus.events);
      }
      {
        std::ofstream tr(gen_out + "/truth.jsonl", std::ios::binary | std::ios::trunc);
        synth::write_truth_jsonl(tr, corpus.truth);
      }
      write_file(gen_out + "/manifest.txt", corpus.manifest);
      if (!gen_split.empty()) {
        synth::SplitFractions fr;
        if (std::sscanf(gen_split.c_str(), "%lf,%lf,%lf", &fr.train, &fr.validation,
                        &fr.test) != 3)
          throw ConfigError("--split expects three comma-separated fractions");
        auto sides = synth::split(corpus, fr, gen_split_seed);
        static const char* kSides[] = {"train", "validation", "test"};
        for (int s = 0; s < 3; ++s) {
          if (sides[s].truth.empty()) continue;
          std::ofstream ev(gen_out + "/events." + kSides[s] + ".jsonl",
                           std::ios::binary | std::ios::trunc);
          write_events_jsonl(ev, sides[s].events);
          std::ofstream tr(gen_out + "/truth." + kSides[s] + ".jsonl",
                           std::ios::binary | std::ios::trunc);
          synth::write_truth_jsonl(tr, sides[s].truth);
        }
      }
      std::cout << "wrote " << corpus.events.size() << " events for " << gen_cfg.n_patients
                << " patients under " << gen_out << " (now = " << format_rfc3339(corpus.now)
                << ")\n";
      return kExitOk;
    }

    if (*cmd_ext) {
      auto cases = load_cases_for_model(ext_events, ext_rules, ext_now);
      const bool mode24h = ext_mode == "24h";
      if (!mode24h && ext_mode != "admission-only")
        throw ConfigError("unknown --mode " + ext_mode);
      if (ext_out == "-") {
        write_cases_jsonl(std::cout, cases, mode24h);
      } else {
        std::ofstream out(ext_out, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + ext_out);
        write_cases_jsonl(out, cases, mode24h);
      }
      return kExitOk;
    }

    if (*cmd_vocab) {
      std::vector<std::string> texts;
      if (!vb_text.empty()) {
        std::ifstream in(vb_text);
        if (!in) throw DataError("cannot open " + vb_text);
        std::string line;
        while (std::getline(in, line)) texts.push_back(line);
      } else if (!vb_events.empty()) {
        auto cases = load_cases_for_model(vb_events, vb_rules, vb_now);
        const bool mode24h = vb_mode == "24h";
        for (const auto& c : cases) {
          if (c.status != Case::Status::well_formed) continue;
          for (auto& p : assemble_input(c, mode24h)) texts.push_back(std::move(p));
        }
      } else {
        throw ConfigError("build-vocab needs --text or --events");
      }
      Vocabulary vocab = Vocabulary::build_from_texts(texts, vb_max);
      std::ostringstream os;
      for (const auto& t : vocab.tokens()) os << t << "\n";
      write_file(vb_out, os.str());
      std::cout << "vocabulary of " << vocab.size() << " tokens written to " << vb_out << "\n";
      return kExitOk;
    }

    auto read_vocab_file = [](const std::string& path) {
      std::ifstream in(path);
      if (!in) throw DataError("cannot open vocabulary " + path);
      std::vector<std::string> toks;
      std::string line;
      while (std::getline(in, line))
        if (!line.empty()) toks.push_back(line);
      return Vocabulary::from_tokens(std::move(toks));
    };

    if (*cmd_pre) {
      const bool mode24h = pre_mode == "24h";
      auto cases = load_cases_for_model(pre_events, pre_rules, pre_now);
      std::optional<Checkpoint> start;
      if (!pre_in.empty()) start = Checkpoint::load(pre_in);
      Vocabulary vocab = start ? start->vocab : read_vocab_file(pre_vocab);
      Model model = [&] {
        if (start) return start->to_model();
        ModelConfig cfg = pre_model;
        cfg.vocab_size = vocab.size();
        cfg.seed = global.seed;
        cfg.attention = AttentionMode::dense;
        return Model(cfg);
      }();
      std::vector<TokenSequence> docs;
      for (const auto& c : cases) {
        if (c.status != Case::Status::well_formed) continue;
        docs.push_back(encode(vocab, assemble_input(c, mode24h), model.config().max_positions()));
      }
      pre_plan.curriculum = cmd_pre->count("--no-curriculum") == 0;
      apply_seed(global, pre_plan.seed);
      pre_plan.threads = global.threads;
      std::ofstream log_file;
      std::ostream* log = nullptr;
      if (!pre_log.empty()) {
        log_file.open(pre_log, std::ios::trunc);
        log = &log_file;
      }
      TrainResult result = pretrain_mlm(model, docs, pre_plan, log);
      Checkpoint::from_model(model, vocab).save(pre_out);
      std::cout << "pretrained " << docs.size() << " documents, loss " << result.first_loss()
                << " -> " << result.last_loss() << ", checkpoint " << pre_out << "\n";
      return kExitOk;
    }

    if (*cmd_conv) {
      Checkpoint dense = Checkpoint::load(conv_in);
      Checkpoint conv = init_longformer_from_dense(dense, conv_window, conv_factor);
      conv.save(conv_out);
      std::cout << "converted to windowed attention (window " << conv_window << ", positions "
                << conv.config.max_positions() << "), checkpoint " << conv_out << "\n";
      return kExitOk;
    }

    if (*cmd_fin) {
      const bool mode24h = fin_mode == "24h";
      const Variant variant = variant_from_name(fin_model);
      Checkpoint start = Checkpoint::load(fin_in);
      if (variant != Variant::longformer && start.config.attention == AttentionMode::longformer)
        start = restrict_to_base_dense(start);
      Model model = start.to_model();
      if (variant == Variant::bert_rnn) model.ensure_gru_params();
      auto cases = load_cases_for_model(fin_events, fin_rules, fin_now);
      auto examples =
          encode_labelled_cases(start.vocab, cases, mode24h, model.config().max_positions());
      apply_seed(global, fin_plan.seed);
      fin_plan.threads = global.threads;
      std::ofstream log_file;
      std::ostream* log = nullptr;
      if (!fin_log.empty()) {
        log_file.open(fin_log, std::ios::trunc);
        log = &log_file;
      }
      TrainResult result =
          finetune_classifier(model, examples, fin_plan, logit_fn_for(variant), log);
      Checkpoint::from_model(model, start.vocab).save(fin_out);
      std::cout << "fine-tuned " << fin_model << " on " << examples.size() << " cases, loss "
                << result.first_loss() << " -> " << result.last_loss() << ", checkpoint "
                << fin_out << "\n";
      return kExitOk;
    }

    if (*cmd_eval) {
      const bool mode24h = ev_mode == "24h";
      const Variant variant = variant_from_name(ev_model);
      Checkpoint ckpt = Checkpoint::load(ev_in);
      auto cases = load_cases_for_model(ev_events, ev_rules, ev_now);
      EvalReport report = evaluate(ckpt, cases, mode24h, variant, global.threads, ev_name);
      std::cout << "model " << report.model << " on " << report.dataset << " (" << report.mode
                << "): roc_auc " << report.auc << " over " << report.n_pos << "+/"
                << report.n_neg << "- cases\n";
      if (!ev_json.empty()) write_file(ev_json, report.to_json() + "\n");
      return kExitOk;
    }

    if (*cmd_cmp) {
      const bool mode24h = cmp_mode == "24h";
      cmp_plan.mode24h = mode24h;
      cmp_plan.threads = global.threads;
      cmp_plan.model.seed = global.seed;
      apply_seed(global, cmp_plan.pretrain.seed);
      apply_seed(global, cmp_plan.finetune.seed);
      cmp_plan.pretrain.batch_size = cmp_plan.finetune.batch_size;
      auto train_cases = load_cases_for_model(cmp_train, cmp_rules, cmp_now);
      auto test_cases = load_cases_for_model(cmp_test, cmp_rules, cmp_now);
      ComparisonResult result =
          run_comparison(train_cases, test_cases, cmp_plan, cmp_quiet ? nullptr : &std::cerr);
      std::cout << result.to_text(color_allowed());
      if (!cmp_json.empty()) write_file(cmp_json, result.to_json());
      return kExitOk;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}
