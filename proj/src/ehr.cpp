#include "clinrisk/ehr.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "clinrisk/errors.hpp"
#include "json.hpp"

namespace clinrisk {
namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool contains_any(const std::string& text, const std::vector<std::string>& patterns) {
  const std::string t = lower(text);
  for (const auto& p : patterns)
    if (t.find(p) != std::string::npos) return true;
  return false;
}

// Howard Hinnant's civil-date algorithm.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y += m <= 2;
}

std::optional<TimePoint> event_time(const EventRecord& e) { return e.timestamp; }

// Chronological sort key that keeps stream order for ties and places
// undated events first.
void sort_chronologically(EventSeq& events) {
  std::stable_sort(events.begin(), events.end(), [](const EventRecord& a, const EventRecord& b) {
    const std::int64_t ta = a.timestamp ? a.timestamp->seconds : std::numeric_limits<std::int64_t>::min();
    const std::int64_t tb = b.timestamp ? b.timestamp->seconds : std::numeric_limits<std::int64_t>::min();
    return ta < tb;
  });
}

// Gap in calendar days; unmeasurable when either side is undated.
std::int64_t gap_days(const EventRecord& a, const EventRecord& b) {
  if (!a.timestamp || !b.timestamp) return 0;
  return day_diff(*a.timestamp, *b.timestamp);
}

}  // namespace

const char* form_type_name(FormType t) {
  switch (t) {
    case FormType::Admission: return "Admission";
    case FormType::Rejection: return "Rejection";
    case FormType::Stay: return "Stay";
    case FormType::Radiology: return "Radiology";
    case FormType::Discharge: return "Discharge";
    case FormType::Death: return "Death";
    case FormType::Lab: return "Lab";
    case FormType::DiagnosisList: return "DiagnosisList";
    case FormType::Other: return "Other";
  }
  return "Other";
}

FormType form_type_from_name(const std::string& name) {
  const std::string n = lower(name);
  if (n == "admission") return FormType::Admission;
  if (n == "rejection") return FormType::Rejection;
  if (n == "stay") return FormType::Stay;
  if (n == "radiology") return FormType::Radiology;
  if (n == "discharge") return FormType::Discharge;
  if (n == "death") return FormType::Death;
  if (n == "lab") return FormType::Lab;
  if (n == "diagnosislist") return FormType::DiagnosisList;
  return FormType::Other;
}

std::int64_t TimePoint::day() const {
  // floor division over a day of 86400 seconds
  return seconds >= 0 ? seconds / 86400 : (seconds - 86399) / 86400;
}

std::int64_t day_diff(const TimePoint& a, const TimePoint& b) { return b.day() - a.day(); }

std::optional<TimePoint> parse_rfc3339(const std::string& text) {
  if (text.empty()) return std::nullopt;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  int consumed = 0;
  if (std::sscanf(text.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &s,
                  &consumed) != 7 ||
      (sep != 'T' && sep != 't' && sep != ' '))
    return std::nullopt;
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s > 60) return std::nullopt;
  std::int64_t offset = 0;  // seconds east of UTC
  const std::string rest = text.substr(static_cast<std::size_t>(consumed));
  if (!rest.empty() && rest != "Z" && rest != "z") {
    int oh = 0, om = 0;
    char sign = 0;
    if (std::sscanf(rest.c_str(), "%c%2d:%2d", &sign, &oh, &om) != 3 ||
        (sign != '+' && sign != '-'))
      return std::nullopt;
    offset = (sign == '-' ? -1 : 1) * (oh * 3600LL + om * 60LL);
  }
  const std::int64_t days = days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
  return TimePoint{days * 86400 + h * 3600LL + mi * 60LL + s - offset};
}

std::string format_rfc3339(const TimePoint& t) {
  std::int64_t y;
  unsigned m, d;
  civil_from_days(t.day(), y, m, d);
  const std::int64_t rem = t.seconds - t.day() * 86400;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02uT%02lld:%02lld:%02lldZ",
                static_cast<long long>(y), m, d, static_cast<long long>(rem / 3600),
                static_cast<long long>((rem / 60) % 60), static_cast<long long>(rem % 60));
  return buf;
}

bool is_respiratory_code(const std::string& icd) {
  if (icd.size() >= 3) {
    const char c0 = static_cast<char>(std::toupper(static_cast<unsigned char>(icd[0])));
    if (c0 == 'J' && std::isdigit(static_cast<unsigned char>(icd[1])) &&
        std::isdigit(static_cast<unsigned char>(icd[2])))
      return true;
    if (c0 == 'U' && icd.compare(1, 2, "07") == 0) return true;
  }
  return false;
}

bool is_case_diagnosis_code(const std::string& icd) {
  if (icd.size() >= 3) {
    const char c0 = static_cast<char>(std::toupper(static_cast<unsigned char>(icd[0])));
    if (c0 == 'J' && icd[1] == '1' && icd[2] >= '2' && icd[2] <= '8') return true;
    if (c0 == 'U' && icd.compare(1, 2, "07") == 0) return true;
  }
  return false;
}

bool has_respiratory_code(const EventRecord& e) {
  for (const auto& c : e.icd_codes)
    if (is_respiratory_code(c)) return true;
  return false;
}

bool has_case_diagnosis(const EventRecord& e) {
  for (const auto& c : e.icd_codes)
    if (is_case_diagnosis_code(c)) return true;
  return false;
}

KeywordRules KeywordRules::parse(std::istream& in) {
  KeywordRules rules;
  std::vector<std::string>* section = nullptr;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line == "[positive]") {
      section = &rules.positive;
      continue;
    }
    if (line == "[discharge]") {
      section = &rules.discharge;
      continue;
    }
    if (line[0] == '[') throw DataError("rules file: unknown section " + line);
    if (!section) throw DataError("rules file: pattern before any section header");
    section->push_back(lower(line));
  }
  rules.validate();
  return rules;
}

KeywordRules KeywordRules::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open rules file " + path);
  return parse(in);
}

KeywordRules KeywordRules::builtin() {
  // Kept in sync with data/keywords.rules (asserted by the test suite).
  KeywordRules rules;
  rules.discharge = {"discharged", "discharge home", "deceased", "died", "death",
                     "fatal outcome"};
  rules.positive = {"icu", "intensive care", "artificial lung ventilation",
                    "mechanical ventilation", "placed on ventilator", "deceased",
                    "died", "death", "fatal outcome"};
  return rules;
}

bool KeywordRules::matches_positive(const std::string& text) const {
  return contains_any(text, positive);
}

bool KeywordRules::matches_discharge(const std::string& text) const {
  return contains_any(text, discharge);
}

void KeywordRules::validate() const {
  if (positive.empty() || discharge.empty())
    throw DataError("rules file must define non-empty [positive] and [discharge] sections");
}

const char* status_name(Case::Status s) {
  switch (s) {
    case Case::Status::well_formed: return "well_formed";
    case Case::Status::ongoing: return "ongoing";
    case Case::Status::malformed: return "malformed";
  }
  return "malformed";
}

std::vector<EventSeq> segment_sequences(const EventSeq& stream) {
  std::vector<EventSeq> out;
  EventSeq current;
  for (const auto& e : stream) {
    if (!current.empty() && gap_days(current.back(), e) > 10) {
      out.push_back(std::move(current));
      current.clear();
    }
    if (current.empty()) {
      if (has_respiratory_code(e)) current.push_back(e);
      // events before a qualifying start are discarded
    } else {
      current.push_back(e);
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

EventSeq truncate_after_discharge(EventSeq seq) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i].form_type != FormType::Discharge) continue;
    bool diagnosis_later = false;
    for (std::size_t j = i + 1; j < seq.size() && !diagnosis_later; ++j)
      diagnosis_later = has_case_diagnosis(seq[j]);
    if (!diagnosis_later) {
      seq.resize(i + 1);
      return seq;
    }
  }
  return seq;
}

EventSeq drop_before_rejection(EventSeq seq) {
  // the latest rejection not preceded by a stay form wins
  std::size_t first_stay = seq.size();
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq[i].form_type == FormType::Stay) {
      first_stay = i;
      break;
    }
  std::size_t cut = 0;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq[i].form_type == FormType::Rejection && i <= first_stay) cut = i;
  if (cut > 0) seq.erase(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(cut));
  return seq;
}

std::vector<EventSeq> filter_cases(std::vector<EventSeq> seqs) {
  std::vector<EventSeq> out;
  for (auto& seq : seqs) {
    bool diagnosis = false, stay = false;
    for (const auto& e : seq) {
      diagnosis = diagnosis || has_case_diagnosis(e);
      stay = stay || e.form_type == FormType::Stay;
    }
    if (diagnosis && stay) out.push_back(std::move(seq));
  }
  return out;
}

std::vector<EventSeq> merge_readmissions(std::vector<EventSeq> seqs) {
  std::vector<EventSeq> out;
  for (auto& seq : seqs) {
    if (!out.empty()) {
      EventSeq& prev = out.back();
      // discharge time of the earlier case
      const EventRecord* discharge = nullptr;
      for (const auto& e : prev)
        if (e.form_type == FormType::Discharge && e.timestamp) discharge = &e;
      const EventRecord* disc_ref = discharge ? discharge : (prev.empty() ? nullptr : &prev.back());
      // admission time of the later case
      const EventRecord* admission = nullptr;
      for (const auto& e : seq)
        if (e.form_type == FormType::Admission && e.timestamp) {
          admission = &e;
          break;
        }
      const EventRecord* adm_ref = admission ? admission : (seq.empty() ? nullptr : &seq.front());
      if (disc_ref && adm_ref && disc_ref->timestamp && adm_ref->timestamp &&
          day_diff(*disc_ref->timestamp, *adm_ref->timestamp) < 7 &&
          day_diff(*disc_ref->timestamp, *adm_ref->timestamp) >= 0) {
        prev.insert(prev.end(), seq.begin(), seq.end());
        continue;
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

Case::Status classify_wellformed(const Case& c, const TimePoint& now,
                                 const KeywordRules& rules) {
  if (c.events.empty()) throw ContractError("classify_wellformed: empty case");

  const EventRecord* first_dated = nullptr;
  const EventRecord* last_dated = nullptr;
  for (const auto& e : c.events)
    if (e.timestamp) {
      if (!first_dated) first_dated = &e;
      last_dated = &e;
    }

  bool well_formed = false;
  if (first_dated && last_dated) {
    bool timely_admission = false;
    for (const auto& e : c.events)
      if (e.form_type == FormType::Admission && e.timestamp &&
          day_diff(*first_dated->timestamp, *e.timestamp) <= 7) {
        timely_admission = true;
        break;
      }
    bool terminal = false;
    for (const auto& e : c.events) {
      if (!e.timestamp) continue;
      if (day_diff(*e.timestamp, *last_dated->timestamp) > 4) continue;  // outside last 4 days
      if (e.form_type == FormType::Discharge || e.form_type == FormType::Death ||
          rules.matches_discharge(e.text)) {
        terminal = true;
        break;
      }
    }
    well_formed = timely_admission && terminal;
    if (well_formed) return Case::Status::well_formed;
    if (day_diff(*last_dated->timestamp, now) <= 10) return Case::Status::ongoing;
  }
  return Case::Status::malformed;
}

int label_case(const Case& c, const KeywordRules& rules) {
  for (const auto& e : c.events) {
    if (e.form_type == FormType::Death) return 1;
    if (rules.matches_positive(e.text)) return 1;
  }
  return 0;
}

std::vector<std::string> assemble_input(const Case& c, bool with_additional_data,
                                        std::int64_t horizon_seconds) {
  const EventRecord* admission = nullptr;
  for (const auto& e : c.events)
    if (e.form_type == FormType::Admission) {
      admission = &e;
      break;
    }
  if (!admission) throw DataError("case " + c.case_id + " has no admission form");

  std::vector<std::string> parts{admission->text};
  if (!with_additional_data) return parts;
  if (!admission->timestamp)
    throw DataError("case " + c.case_id + " has no admission timestamp for the 24h input");
  const std::int64_t limit = admission->timestamp->seconds + horizon_seconds;
  for (const auto& e : c.events) {
    if (&e == admission) continue;
    if (!e.timestamp || e.timestamp->seconds > limit) continue;
    switch (e.form_type) {
      case FormType::Radiology:
      case FormType::Lab:
      case FormType::DiagnosisList:
      case FormType::Stay:
        parts.push_back(e.text);
        break;
      default:
        break;
    }
  }
  return parts;
}

std::vector<Case> filter_dataset_k(std::vector<Case> cases) {
  std::vector<Case> out;
  for (auto& c : cases) {
    bool has_admission = false;
    for (const auto& e : c.events)
      if (e.form_type == FormType::Admission) {
        has_admission = true;
        break;
      }
    if (has_admission && c.admission_time) out.push_back(std::move(c));
  }
  return out;
}

std::vector<Case> extract_cases(const std::vector<EventRecord>& stream,
                                const KeywordRules& rules, const TimePoint& now) {
  rules.validate();
  // group by patient, preserving stream order
  std::vector<std::string> patient_order;
  std::map<std::string, EventSeq> by_patient;
  for (const auto& e : stream) {
    auto [it, inserted] = by_patient.try_emplace(e.patient_id);
    if (inserted) patient_order.push_back(e.patient_id);
    it->second.push_back(e);
  }

  std::vector<Case> cases;
  for (const auto& pid : patient_order) {
    EventSeq events = by_patient[pid];
    sort_chronologically(events);
    std::vector<EventSeq> seqs = segment_sequences(events);
    for (auto& s : seqs) s = drop_before_rejection(truncate_after_discharge(std::move(s)));
    seqs = merge_readmissions(filter_cases(std::move(seqs)));
    std::size_t index = 0;
    for (auto& s : seqs) {
      Case c;
      c.case_id = pid + "#" + std::to_string(index++);
      c.patient_id = pid;
      c.events = std::move(s);
      for (const auto& e : c.events)
        if (e.form_type == FormType::Admission && e.timestamp) {
          c.admission_time = e.timestamp;
          break;
        }
      c.status = classify_wellformed(c, now, rules);
      if (c.status == Case::Status::well_formed) c.label = label_case(c, rules);
      cases.push_back(std::move(c));
    }
  }
  return cases;
}

std::vector<EventRecord> read_events_jsonl(std::istream& in) {
  std::vector<EventRecord> events;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("events line " + std::to_string(lineno) + ": " + e.what());
    }
    EventRecord e;
    e.patient_id = j.value("patient_id", "");
    e.clinic_id = j.value("clinic_id", "");
    e.form_type = form_type_from_name(j.value("form_type", "Other"));
    const std::string ts = j.value("timestamp", "");
    if (!ts.empty()) {
      e.timestamp = parse_rfc3339(ts);
      if (!e.timestamp)
        throw DataError("events line " + std::to_string(lineno) + ": bad timestamp " + ts);
    }
    e.text = j.value("text", "");
    if (j.contains("icd_codes"))
      for (const auto& c : j.at("icd_codes")) e.icd_codes.push_back(c.get<std::string>());
    if (e.patient_id.empty())
      throw DataError("events line " + std::to_string(lineno) + ": missing patient_id");
    events.push_back(std::move(e));
  }
  return events;
}

void write_events_jsonl(std::ostream& out, const std::vector<EventRecord>& events) {
  for (const auto& e : events) {
    nlohmann::json j;
    j["patient_id"] = e.patient_id;
    j["clinic_id"] = e.clinic_id;
    j["form_type"] = form_type_name(e.form_type);
    j["timestamp"] = e.timestamp ? format_rfc3339(*e.timestamp) : "";
    j["text"] = e.text;
    j["icd_codes"] = e.icd_codes;
    out << j.dump() << "\n";
  }
}

void write_cases_jsonl(std::ostream& out, const std::vector<Case>& cases,
                       bool with_additional_data) {
  for (const auto& c : cases) {
    nlohmann::json j;
    j["case_id"] = c.case_id;
    j["patient_id"] = c.patient_id;
    j["status"] = status_name(c.status);
    if (c.label)
      j["label"] = *c.label;
    else
      j["label"] = nullptr;
    bool has_admission = false;
    for (const auto& e : c.events)
      if (e.form_type == FormType::Admission) has_admission = true;
    if (has_admission)
      j["parts"] = assemble_input(c, with_additional_data && c.admission_time.has_value());
    else
      j["parts"] = nlohmann::json::array();
    out << j.dump() << "\n";
  }
}

}  // namespace clinrisk
