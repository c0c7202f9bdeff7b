#include "clinrisk/synth.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "clinrisk/errors.hpp"
#include "clinrisk/rng.hpp"
#include "clinrisk/tokenizer.hpp"
#include "json.hpp"

namespace clinrisk::synth {
namespace {

const char* kAdmissionPool[] = {
    "patient complains of fever and productive cough for several days .",
    "anamnesis notes chronic hypertension and type two diabetes .",
    "on examination the skin is pale and moist .",
    "auscultation reveals diffuse crackles over both lower lobes .",
    "respiratory rate elevated with mild dyspnea at rest .",
    "oxygen saturation measured at ninety two percent on room air .",
    "body temperature thirty eight point five degrees .",
    "blood pressure within normal limits pulse regular .",
    "chest radiograph shows patchy infiltrates in the right lower lobe .",
    "complete blood count demonstrates moderate leukocytosis .",
    "c reactive protein markedly elevated .",
    "empirical antibiotic therapy with amoxicillin initiated .",
    "oxygen supplementation by nasal cannula started in the admission unit .",
    "the patient denies smoking and alcohol abuse .",
    "no known drug allergies reported .",
    "general condition assessed as moderately severe .",
    "routing to the pulmonology ward recommended .",
    "supportive care with fluids and antipyretics prescribed .",
    "previous outpatient treatment brought no improvement .",
    "family history unremarkable .",
};

const char* kStayPool[] = {
    "daily review . condition stable . oxygen supplementation continued .",
    "daily review . temperature subfebrile . appetite improving .",
    "daily review . cough less frequent . breathing comfortable at rest .",
    "daily review . saturation holding on minimal support .",
};

const char* kRadiologyPool[] = {
    "chest computed tomography shows bilateral ground glass opacities .",
    "chest computed tomography shows consolidation in the right lower lobe .",
    "portable radiograph shows patchy peripheral infiltrates .",
};

const char* kLabPool[] = {
    "laboratory panel . leukocytes elevated . c reactive protein high .",
    "laboratory panel . lymphocytes reduced . ferritin raised .",
    "laboratory panel . d dimer mildly raised . glucose normal .",
};

const char* kNegativeDischarge[] = {
    "discharged home in stable condition .",
    "discharged for outpatient follow up with recommendations .",
};

const char* kDeathText = "death following acute respiratory failure .";
const char* kAlvStayText =
    "condition deteriorated , patient placed on ventilator in the intensive care unit .";
const char* kAlvDischargeText = "transferred and discharged to the regional center .";

std::vector<std::vector<std::string>> tokenize_pool(const char* const* pool, std::size_t n) {
  std::vector<std::vector<std::string>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(tokenize(pool[i]));
  return out;
}

const std::vector<std::vector<std::string>>& admission_sentences() {
  static const auto pool = tokenize_pool(kAdmissionPool, std::size(kAdmissionPool));
  return pool;
}

// Ordinary words eligible as replacement noise (no punctuation).
const std::vector<std::string>& noise_words() {
  static const std::vector<std::string> words = [] {
    std::set<std::string> set;
    for (const auto& sent : admission_sentences())
      for (const auto& w : sent)
        if (w != "." && w != ",") set.insert(w);
    return std::vector<std::string>(set.begin(), set.end());
  }();
  return words;
}

constexpr std::int64_t kDaySeconds = 86400;
// corpus epoch: 2021-01-01T00:00:00Z
constexpr std::int64_t kEpochSeconds = 18628LL * kDaySeconds;
constexpr std::int64_t kNowDay = 60;
constexpr double kNoiseRate = 0.05;

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// Piecewise-linear inverse CDF through the configured quantile anchors.
std::int64_t sample_length(double u, const GeneratorConfig& cfg) {
  const double min_len = cfg.policy == MarkerPolicy::early ? 80.0 : 560.0;
  const double anchors_u[] = {0.0, 0.5, 0.75, 0.99, 1.0};
  const double anchors_len[] = {min_len, static_cast<double>(cfg.median_len),
                                static_cast<double>(cfg.p75_len),
                                static_cast<double>(cfg.p99_len),
                                1.12 * static_cast<double>(cfg.p99_len)};
  for (int i = 1; i < 5; ++i) {
    if (u <= anchors_u[i]) {
      const double t = (u - anchors_u[i - 1]) / (anchors_u[i] - anchors_u[i - 1]);
      return static_cast<std::int64_t>(
          std::llround(anchors_len[i - 1] + t * (anchors_len[i] - anchors_len[i - 1])));
    }
  }
  return static_cast<std::int64_t>(std::llround(anchors_len[4]));
}

std::vector<std::string> marker_tokens(const GeneratorConfig& cfg) {
  return tokenize(cfg.marker);
}

struct PatientDraw {
  std::string status;  // well_formed | ongoing | malformed
  bool has_marker = false;
  int label = 0;
  std::int64_t body_len = 0;
  std::int64_t marker_body_index = -1;  // index into the admission body
};

}  // namespace

const char* policy_name(MarkerPolicy p) {
  switch (p) {
    case MarkerPolicy::early: return "early";
    case MarkerPolicy::late: return "late";
    case MarkerPolicy::mixed: return "mixed";
  }
  return "late";
}

MarkerPolicy policy_from_name(const std::string& s) {
  if (s == "early") return MarkerPolicy::early;
  if (s == "late") return MarkerPolicy::late;
  if (s == "mixed") return MarkerPolicy::mixed;
  throw ConfigError("unknown marker position policy: " + s);
}

const char* channel_name(MarkerChannel c) {
  return c == MarkerChannel::admission ? "admission" : "radiology";
}

MarkerChannel channel_from_name(const std::string& s) {
  if (s == "admission") return MarkerChannel::admission;
  if (s == "radiology") return MarkerChannel::radiology;
  throw ConfigError("unknown marker channel: " + s);
}

void GeneratorConfig::validate() const {
  if (n_patients < 1) throw ConfigError("generator: n_patients must be >= 1");
  if (!(median_len > 4) || !(p75_len >= median_len) || !(p99_len >= p75_len))
    throw ConfigError("generator: need 4 < median <= p75 <= p99 length targets");
  if (marker_to_positive <= 0.0 || marker_to_positive > 1.0)
    throw ConfigError("generator: marker_to_positive must be in (0, 1]");
  if (base_positive_rate < 0.0 || base_positive_rate > 1.0 || marker_rate < 0.0 ||
      marker_rate > 1.0 || malformed_rate < 0.0 || ongoing_rate < 0.0 ||
      malformed_rate + ongoing_rate > 0.9)
    throw ConfigError("generator: rate fields out of range");
  if (policy != MarkerPolicy::early && channel == MarkerChannel::admission && median_len < 560)
    throw ConfigError(
        "generator: late marker positions do not fit documents with median length " +
        std::to_string(median_len) + " (< 560)");
  if (marker_repeats < 1) throw ConfigError("generator: marker_repeats must be >= 1");
  const auto mk = tokenize(marker);
  if (mk.size() != 3)
    throw ConfigError("generator: marker must tokenize to exactly 3 tokens, got " +
                      std::to_string(mk.size()));
  for (const auto& w : mk)
    for (const auto& pool_word : noise_words())
      if (w == pool_word)
        throw ConfigError("generator: marker token `" + w + "` collides with the sentence pools");
}

std::string GeneratorConfig::manifest() const {
  std::ostringstream out;
  out << "seed=" << seed << "\n";
  out << "n_patients=" << n_patients << "\n";
  out << "median_len=" << median_len << "\n";
  out << "p75_len=" << p75_len << "\n";
  out << "p99_len=" << p99_len << "\n";
  out << "marker=" << marker << "\n";
  out << "policy=" << policy_name(policy) << "\n";
  out << "channel=" << channel_name(channel) << "\n";
  out << "marker_repeats=" << marker_repeats << "\n";
  char buf[64];
  auto put = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << key << "=" << buf << "\n";
  };
  put("marker_rate", marker_rate);
  put("marker_to_positive", marker_to_positive);
  put("base_positive_rate", base_positive_rate);
  put("malformed_rate", malformed_rate);
  put("ongoing_rate", ongoing_rate);
  return out.str();
}

GeneratorConfig GeneratorConfig::from_manifest(std::istream& in) {
  GeneratorConfig cfg;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("manifest: expected key=value, got " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "n_patients") cfg.n_patients = std::stoll(value);
    else if (key == "median_len") cfg.median_len = std::stoll(value);
    else if (key == "p75_len") cfg.p75_len = std::stoll(value);
    else if (key == "p99_len") cfg.p99_len = std::stoll(value);
    else if (key == "marker") cfg.marker = value;
    else if (key == "policy") cfg.policy = policy_from_name(value);
    else if (key == "channel") cfg.channel = channel_from_name(value);
    else if (key == "marker_repeats") cfg.marker_repeats = std::stoll(value);
    else if (key == "marker_rate") cfg.marker_rate = std::stod(value);
    else if (key == "marker_to_positive") cfg.marker_to_positive = std::stod(value);
    else if (key == "base_positive_rate") cfg.base_positive_rate = std::stod(value);
    else if (key == "malformed_rate") cfg.malformed_rate = std::stod(value);
    else if (key == "ongoing_rate") cfg.ongoing_rate = std::stod(value);
    else throw DataError("manifest: unknown key " + key);
  }
  cfg.validate();
  return cfg;
}

SyntheticCorpus generate(const GeneratorConfig& cfg) {
  cfg.validate();
  const auto marker_words = marker_tokens(cfg);
  const auto& sentences = admission_sentences();
  const auto& noise = noise_words();
  const auto stay_pool = tokenize_pool(kStayPool, std::size(kStayPool));
  const auto rad_pool = tokenize_pool(kRadiologyPool, std::size(kRadiologyPool));
  const auto lab_pool = tokenize_pool(kLabPool, std::size(kLabPool));

  SyntheticCorpus corpus;
  corpus.now = TimePoint{kEpochSeconds + kNowDay * kDaySeconds};
  corpus.manifest = cfg.manifest();

  for (std::int64_t pi = 0; pi < cfg.n_patients; ++pi) {
    SeededRng rng(SeededRng::mix(cfg.seed, static_cast<std::uint64_t>(pi)));
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "SP%06lld", static_cast<long long>(pi));
    const std::string pid = idbuf;
    const std::string clinic = "H" + std::to_string(1 + pi % 3);

    PatientDraw draw;
    const double role = rng.uniform();
    draw.status = role < cfg.malformed_rate ? "malformed"
                  : role < cfg.malformed_rate + cfg.ongoing_rate ? "ongoing"
                                                                 : "well_formed";
    draw.has_marker = rng.uniform() < cfg.marker_rate;
    draw.label =
        rng.uniform() < (draw.has_marker ? cfg.marker_to_positive : cfg.base_positive_rate) ? 1
                                                                                            : 0;
    draw.body_len = sample_length(rng.uniform(), cfg) - 2;  // minus classifier and separator

    // admission body from the sentence pools, cut to the target length
    std::vector<std::string> body;
    body.reserve(static_cast<std::size_t>(draw.body_len));
    while (static_cast<std::int64_t>(body.size()) < draw.body_len) {
      const auto& s = sentences[rng.uniform_int(sentences.size())];
      body.insert(body.end(), s.begin(), s.end());
    }
    body.resize(static_cast<std::size_t>(draw.body_len));

    // word noise (never touches punctuation)
    for (auto& w : body)
      if (w != "." && w != "," && rng.uniform() < kNoiseRate)
        w = noise[rng.uniform_int(noise.size())];

    // marker placement
    MarkerPolicy policy = cfg.policy;
    if (policy == MarkerPolicy::mixed)
      policy = rng.uniform() < 0.5 ? MarkerPolicy::early : MarkerPolicy::late;
    std::string radiology_text;
    {
      const auto& rp = rad_pool[rng.uniform_int(rad_pool.size())];
      std::vector<std::string> rtoks = rp;
      if (draw.has_marker && cfg.channel == MarkerChannel::radiology) {
        // repeat the phrase by appending; report texts are short
        for (std::int64_t rep = 0; rep < cfg.marker_repeats; ++rep)
          for (const auto& w : marker_words) rtoks.push_back(w);
        rtoks.push_back(".");
      }
      radiology_text = join(rtoks);
    }
    if (draw.has_marker && cfg.channel == MarkerChannel::admission) {
      std::int64_t lo, hi;  // body indices; encoded position = body index + 1
      if (policy == MarkerPolicy::early) {
        lo = 4;
        hi = std::min<std::int64_t>(251, draw.body_len - 3);
      } else {
        lo = 512;
        hi = std::min<std::int64_t>(2043, draw.body_len - 3);
      }
      if (hi < lo)
        throw ConfigError("generator: document of length " + std::to_string(draw.body_len) +
                          " cannot hold a marker under the requested policy");
      // occurrences spread over disjoint slices of the policy region
      const std::int64_t span = hi - lo + 1;
      const std::int64_t repeats = std::min(cfg.marker_repeats, span / 4);
      const std::int64_t stride = span / std::max<std::int64_t>(1, repeats);
      for (std::int64_t rep = 0; rep < std::max<std::int64_t>(1, repeats); ++rep) {
        const std::int64_t slice_lo = lo + rep * stride;
        const std::int64_t slack = std::max<std::int64_t>(1, stride - 3);
        const std::int64_t at =
            std::min(hi, slice_lo + static_cast<std::int64_t>(rng.uniform_int(
                                        static_cast<std::uint64_t>(slack))));
        if (draw.marker_body_index < 0) draw.marker_body_index = at;
        for (std::size_t k = 0; k < marker_words.size(); ++k)
          body[static_cast<std::size_t>(at) + k] = marker_words[k];
      }
    }

    // timeline
    const std::int64_t day0 = draw.status == "ongoing" ? 55 + (pi % 3) : pi % 40;
    const std::int64_t adm_sec =
        kEpochSeconds + day0 * kDaySeconds + 10 * 3600 + (pi % 50) * 60;
    static const char* kIcd[] = {"J18.9", "J15.1", "J12.0"};
    const std::string icd = kIcd[rng.uniform_int(3)];

    auto push = [&](FormType t, std::int64_t sec, std::string text,
                    std::vector<std::string> codes = {}) {
      EventRecord e;
      e.patient_id = pid;
      e.clinic_id = clinic;
      e.form_type = t;
      e.timestamp = TimePoint{sec};
      e.text = std::move(text);
      e.icd_codes = std::move(codes);
      corpus.events.push_back(std::move(e));
    };

    push(FormType::Admission, adm_sec, join(body), {icd});
    push(FormType::Lab, adm_sec + 3600, join(lab_pool[rng.uniform_int(lab_pool.size())]));
    push(FormType::Radiology, adm_sec + 2 * 3600, radiology_text);

    const std::int64_t stay_days = 2 + static_cast<std::int64_t>(rng.uniform_int(4));
    for (std::int64_t d = 1; d <= stay_days; ++d)
      push(FormType::Stay, kEpochSeconds + (day0 + d) * kDaySeconds + 11 * 3600,
           join(stay_pool[rng.uniform_int(stay_pool.size())]));

    if (draw.status == "well_formed") {
      const std::int64_t tday = day0 + stay_days + 1;
      if (draw.label == 1) {
        if (rng.uniform() < 0.6) {
          push(FormType::Death, kEpochSeconds + tday * kDaySeconds + 9 * 3600, kDeathText);
        } else {
          push(FormType::Stay, kEpochSeconds + tday * kDaySeconds + 9 * 3600, kAlvStayText);
          push(FormType::Discharge, kEpochSeconds + (tday + 1) * kDaySeconds + 12 * 3600,
               kAlvDischargeText);
        }
      } else {
        push(FormType::Discharge, kEpochSeconds + tday * kDaySeconds + 12 * 3600,
             kNegativeDischarge[rng.uniform_int(std::size(kNegativeDischarge))]);
      }
    }
    // ongoing and malformed cases simply stop without terminal evidence

    CaseTruth truth;
    truth.patient_id = pid;
    truth.label = draw.label;
    truth.has_marker = draw.has_marker;
    truth.marker_pos = draw.marker_body_index >= 0 ? draw.marker_body_index + 1 : -1;
    truth.status = draw.status;
    corpus.truth.push_back(std::move(truth));
  }
  return corpus;
}

std::array<SyntheticCorpus, 3> split(const SyntheticCorpus& corpus, SplitFractions fractions,
                                     std::uint64_t seed) {
  const double sum = fractions.train + fractions.validation + fractions.test;
  if (std::abs(sum - 1.0) > 1e-9 || fractions.train < 0 || fractions.validation < 0 ||
      fractions.test < 0)
    throw ConfigError("split: fractions must be non-negative and sum to 1");

  std::vector<std::string> ids;
  for (const auto& t : corpus.truth) ids.push_back(t.patient_id);
  SeededRng rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i)
    std::swap(ids[i - 1], ids[rng.uniform_int(i)]);

  const std::int64_t n = static_cast<std::int64_t>(ids.size());
  const double fr[3] = {fractions.train, fractions.validation, fractions.test};
  std::int64_t counts[3];
  double remainders[3];
  std::int64_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = fr[s] * static_cast<double>(n);
    counts[s] = static_cast<std::int64_t>(std::floor(exact));
    remainders[s] = exact - std::floor(exact);
    assigned += counts[s];
  }
  while (assigned < n) {
    int best = 0;
    for (int s = 1; s < 3; ++s)
      if (remainders[s] > remainders[best]) best = s;
    ++counts[best];
    remainders[best] = -1;
    ++assigned;
  }

  std::array<std::set<std::string>, 3> members;
  std::int64_t cursor = 0;
  for (int s = 0; s < 3; ++s)
    for (std::int64_t k = 0; k < counts[s]; ++k)
      members[static_cast<std::size_t>(s)].insert(ids[static_cast<std::size_t>(cursor++)]);

  std::array<SyntheticCorpus, 3> out;
  for (int s = 0; s < 3; ++s) {
    out[static_cast<std::size_t>(s)].now = corpus.now;
    out[static_cast<std::size_t>(s)].manifest = corpus.manifest;
  }
  for (const auto& e : corpus.events)
    for (int s = 0; s < 3; ++s)
      if (members[static_cast<std::size_t>(s)].count(e.patient_id))
        out[static_cast<std::size_t>(s)].events.push_back(e);
  for (const auto& t : corpus.truth)
    for (int s = 0; s < 3; ++s)
      if (members[static_cast<std::size_t>(s)].count(t.patient_id))
        out[static_cast<std::size_t>(s)].truth.push_back(t);

  // every non-empty side must carry both outcome classes among its
  // usable (well-formed) cases
  for (int s = 0; s < 3; ++s) {
    if (fr[s] <= 0.0) continue;
    bool pos = false, neg = false;
    for (const auto& t : out[static_cast<std::size_t>(s)].truth)
      if (t.status == "well_formed") (t.label ? pos : neg) = true;
    if (!pos || !neg) {
      static const char* kNames[] = {"train", "validation", "test"};
      throw DataError(std::string("split: the ") + kNames[s] +
                      " side has no usable case of one class");
    }
  }
  return out;
}

void write_truth_jsonl(std::ostream& out, const std::vector<CaseTruth>& truth) {
  for (const auto& t : truth) {
    nlohmann::json j;
    j["patient_id"] = t.patient_id;
    j["label"] = t.label;
    j["has_marker"] = t.has_marker;
    j["marker_pos"] = t.marker_pos;
    j["status"] = t.status;
    out << j.dump() << "\n";
  }
}

std::vector<CaseTruth> read_truth_jsonl(std::istream& in) {
  std::vector<CaseTruth> truth;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    CaseTruth t;
    t.patient_id = j.at("patient_id").get<std::string>();
    t.label = j.at("label").get<int>();
    t.has_marker = j.at("has_marker").get<bool>();
    t.marker_pos = j.at("marker_pos").get<std::int64_t>();
    t.status = j.at("status").get<std::string>();
    truth.push_back(std::move(t));
  }
  return truth;
}

}  // namespace clinrisk::synth
