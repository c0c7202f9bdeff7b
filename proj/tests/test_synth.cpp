#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "clinrisk/ehr.hpp"
#include "clinrisk/errors.hpp"
#include "clinrisk/synth.hpp"
#include "clinrisk/tokenizer.hpp"
#include "doctest.h"

using namespace clinrisk;
using namespace clinrisk::synth;

namespace {

std::string events_bytes(const SyntheticCorpus& c) {
  std::ostringstream os;
  write_events_jsonl(os, c.events);
  return os.str();
}

GeneratorConfig small_cfg() {
  GeneratorConfig cfg;
  cfg.seed = 42;
  cfg.n_patients = 120;
  cfg.median_len = 620;
  cfg.p75_len = 720;
  cfg.p99_len = 980;
  return cfg;
}

}  // namespace

TEST_CASE("generation is a pure function of the config") {
  GeneratorConfig cfg = small_cfg();
  SyntheticCorpus a = generate(cfg);
  SyntheticCorpus b = generate(cfg);
  CHECK(events_bytes(a) == events_bytes(b));
  CHECK(a.manifest == b.manifest);

  // manifest round trip regenerates byte-identical output
  std::istringstream mf(a.manifest);
  GeneratorConfig parsed = GeneratorConfig::from_manifest(mf);
  CHECK(events_bytes(generate(parsed)) == events_bytes(a));

  // different seed, different corpus
  cfg.seed = 43;
  CHECK(events_bytes(generate(cfg)) != events_bytes(a));
}

TEST_CASE("deterministic signal: q=1 and base=0 ties labels to the marker") {
  GeneratorConfig cfg = small_cfg();
  cfg.marker_to_positive = 1.0;
  cfg.base_positive_rate = 0.0;
  SyntheticCorpus corpus = generate(cfg);
  for (const auto& t : corpus.truth) CHECK(t.label == (t.has_marker ? 1 : 0));
}

TEST_CASE("late policy keeps the first 512 positions marker-free") {
  GeneratorConfig cfg = small_cfg();
  cfg.policy = MarkerPolicy::late;
  SyntheticCorpus corpus = generate(cfg);
  const auto marker_words = tokenize(cfg.marker);

  std::size_t with_marker = 0;
  for (std::size_t i = 0; i < corpus.truth.size(); ++i) {
    const auto& t = corpus.truth[i];
    if (!t.has_marker) {
      CHECK(t.marker_pos == -1);
      continue;
    }
    ++with_marker;
    CHECK(t.marker_pos > 512);
    CHECK(t.marker_pos + 2 < 2048);
    // find the admission text and verify token positions directly
    for (const auto& e : corpus.events) {
      if (e.patient_id != t.patient_id || e.form_type != FormType::Admission) continue;
      auto toks = tokenize(e.text);
      // encoded position = body index + 1 (classifier token first)
      for (std::size_t k = 0; k < 3; ++k)
        CHECK(toks[static_cast<std::size_t>(t.marker_pos - 1) + k] == marker_words[k]);
      for (std::size_t p = 0; p < std::min<std::size_t>(512, toks.size()); ++p)
        CHECK(toks[p] != marker_words[0]);
    }
  }
  CHECK(with_marker > 30);  // marker_rate 0.5 over 120 patients
}

TEST_CASE("early policy places markers before position 256") {
  GeneratorConfig cfg = small_cfg();
  cfg.policy = MarkerPolicy::early;
  cfg.median_len = 400;
  cfg.p75_len = 500;
  cfg.p99_len = 700;
  SyntheticCorpus corpus = generate(cfg);
  for (const auto& t : corpus.truth)
    if (t.has_marker) {
      CHECK(t.marker_pos >= 1);
      CHECK(t.marker_pos < 256);
    }
}

TEST_CASE("radiology channel keeps the admission report clean") {
  GeneratorConfig cfg = small_cfg();
  cfg.channel = MarkerChannel::radiology;
  SyntheticCorpus corpus = generate(cfg);
  const auto marker_words = tokenize(cfg.marker);
  bool saw_marker_rad = false;
  for (const auto& e : corpus.events) {
    const bool has_marker_word = e.text.find(marker_words[0]) != std::string::npos;
    if (e.form_type == FormType::Admission) CHECK(!has_marker_word);
    if (e.form_type == FormType::Radiology && has_marker_word) saw_marker_rad = true;
  }
  CHECK(saw_marker_rad);
}

TEST_CASE("generated statuses and labels survive extraction exactly") {
  GeneratorConfig cfg = small_cfg();
  cfg.n_patients = 200;
  cfg.malformed_rate = 0.1;
  cfg.ongoing_rate = 0.1;
  SyntheticCorpus corpus = generate(cfg);
  auto cases = extract_cases(corpus.events, KeywordRules::builtin(), corpus.now);
  REQUIRE(cases.size() == corpus.truth.size());
  std::map<std::string, const synth::CaseTruth*> by_pid;
  for (const auto& t : corpus.truth) by_pid[t.patient_id] = &t;
  for (const auto& c : cases) {
    const auto* t = by_pid.at(c.patient_id);
    INFO("patient ", c.patient_id, " expected ", t->status);
    CHECK(status_name(c.status) == t->status);
    if (t->status == "well_formed") {
      REQUIRE(c.label.has_value());
      CHECK(*c.label == t->label);
    }
  }
}

TEST_CASE("length percentiles land on the configured targets") {
  GeneratorConfig cfg;  // default Table-style targets
  cfg.seed = 9;
  cfg.n_patients = 5000;
  SyntheticCorpus corpus = generate(cfg);
  std::vector<std::int64_t> lengths;
  for (const auto& e : corpus.events)
    if (e.form_type == FormType::Admission)
      lengths.push_back(static_cast<std::int64_t>(tokenize(e.text).size()) + 2);
  REQUIRE(lengths.size() == 5000);
  std::sort(lengths.begin(), lengths.end());
  const auto q = [&](double p) { return lengths[static_cast<std::size_t>(p * 4999)]; };
  CHECK(q(0.5) >= 754);   // 943 - 20%
  CHECK(q(0.5) <= 1132);  // 943 + 20%
  CHECK(q(0.75) >= 1021);
  CHECK(q(0.75) <= 1531);
  CHECK(q(0.99) >= 2956);
  CHECK(q(0.99) <= 4434);
}

TEST_CASE("config validation rejects contradictions") {
  GeneratorConfig bad = small_cfg();
  bad.median_len = 400;  // late markers cannot fit
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  GeneratorConfig collide = small_cfg();
  collide.marker = "fever and cough";  // pool words
  CHECK_THROWS_AS(collide.validate(), ConfigError);

  GeneratorConfig two = small_cfg();
  two.marker = "alpha beta";
  CHECK_THROWS_AS(two.validate(), ConfigError);

  GeneratorConfig none = small_cfg();
  none.n_patients = 0;
  CHECK_THROWS_AS(none.validate(), ConfigError);
}

TEST_CASE("patient-level split: sizes, hygiene, determinism") {
  GeneratorConfig cfg = small_cfg();
  cfg.n_patients = 100;
  SyntheticCorpus corpus = generate(cfg);

  auto all = split(corpus, SplitFractions{1, 0, 0}, 5);
  CHECK(all[0].truth.size() == 100);
  CHECK(all[1].truth.empty());
  CHECK(all[2].truth.empty());

  auto parts = split(corpus, SplitFractions{0.8, 0.1, 0.1}, 5);
  CHECK(parts[0].truth.size() == 80);
  CHECK(parts[1].truth.size() == 10);
  CHECK(parts[2].truth.size() == 10);

  // same seed, same split
  auto parts2 = split(corpus, SplitFractions{0.8, 0.1, 0.1}, 5);
  CHECK(events_bytes(parts[0]) == events_bytes(parts2[0]));
  CHECK(events_bytes(parts[2]) == events_bytes(parts2[2]));

  // no patient straddles two sides
  std::array<std::set<std::string>, 3> ids;
  for (int s = 0; s < 3; ++s)
    for (const auto& t : parts[static_cast<std::size_t>(s)].truth)
      ids[static_cast<std::size_t>(s)].insert(t.patient_id);
  for (const auto& a : ids[0]) {
    CHECK(!ids[1].count(a));
    CHECK(!ids[2].count(a));
  }
  for (const auto& a : ids[1]) CHECK(!ids[2].count(a));

  // events land with their patients
  for (const auto& e : parts[1].events) CHECK(ids[1].count(e.patient_id));

  CHECK_THROWS_AS(split(corpus, SplitFractions{0.5, 0.5, 0.5}, 5), ConfigError);
}

TEST_CASE("split refuses a side with a single class") {
  GeneratorConfig cfg = small_cfg();
  cfg.n_patients = 12;
  cfg.marker_rate = 1.0;
  cfg.marker_to_positive = 1.0;  // every usable case positive
  cfg.malformed_rate = 0;
  cfg.ongoing_rate = 0;
  SyntheticCorpus corpus = generate(cfg);
  CHECK_THROWS_AS(split(corpus, SplitFractions{1, 0, 0}, 1), DataError);
}

TEST_CASE("truth jsonl round trip") {
  GeneratorConfig cfg = small_cfg();
  cfg.n_patients = 10;
  SyntheticCorpus corpus = generate(cfg);
  std::ostringstream os;
  write_truth_jsonl(os, corpus.truth);
  std::istringstream is(os.str());
  auto back = read_truth_jsonl(is);
  REQUIRE(back.size() == corpus.truth.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].patient_id == corpus.truth[i].patient_id);
    CHECK(back[i].label == corpus.truth[i].label);
    CHECK(back[i].has_marker == corpus.truth[i].has_marker);
    CHECK(back[i].marker_pos == corpus.truth[i].marker_pos);
    CHECK(back[i].status == corpus.truth[i].status);
  }
}
