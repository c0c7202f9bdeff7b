#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace clinrisk {

enum class FormType {
  Admission,
  Rejection,
  Stay,
  Radiology,
  Discharge,
  Death,
  Lab,
  DiagnosisList,
  Other,
};

const char* form_type_name(FormType t);
/// Case-insensitive; unrecognised names map to Other.
FormType form_type_from_name(const std::string& name);

/// UTC instant with minute resolution. Day-granularity rules compare
/// calendar dates; the 24-hour input horizon compares exact seconds.
struct TimePoint {
  std::int64_t seconds = 0;  // since 1970-01-01T00:00:00Z

  std::int64_t day() const;  // days since epoch (floor)
  bool operator<(const TimePoint& o) const { return seconds < o.seconds; }
  bool operator==(const TimePoint& o) const { return seconds == o.seconds; }
};

/// Parses RFC 3339 (`2021-03-05T10:30:00Z`, offsets allowed, an omitted
/// offset means UTC). Returns nothing for an empty or malformed string.
std::optional<TimePoint> parse_rfc3339(const std::string& text);
std::string format_rfc3339(const TimePoint& t);

/// Calendar-date difference b - a in days.
std::int64_t day_diff(const TimePoint& a, const TimePoint& b);

struct EventRecord {
  std::string patient_id;
  std::string clinic_id;
  FormType form_type = FormType::Other;
  std::optional<TimePoint> timestamp;  // unset when the source field is empty
  std::string text;
  std::vector<std::string> icd_codes;
};

using EventSeq = std::vector<EventRecord>;

/// Diagnosis predicates. Sequences start at a respiratory diagnosis;
/// the case filter wants the disease under study. COVID codes count for
/// both so K-style records flow through the same pipeline.
bool is_respiratory_code(const std::string& icd);  // J00-J99 or U07.x
bool is_case_diagnosis_code(const std::string& icd);  // J12-J18 or U07.x
bool has_respiratory_code(const EventRecord& e);
bool has_case_diagnosis(const EventRecord& e);

/// Case-insensitive substring patterns over form text, loaded from a
/// plain-text file: one pattern per line, `#` comments, section headers
/// `[positive]` (label evidence: ICU / ventilation / death mentions) and
/// `[discharge]` (terminal evidence: discharge or death phrasings).
struct KeywordRules {
  std::vector<std::string> positive;
  std::vector<std::string> discharge;

  static KeywordRules parse(std::istream& in);
  static KeywordRules load(const std::string& path);
  /// The shipped pattern set (identical to data/keywords.rules).
  static KeywordRules builtin();

  bool matches_positive(const std::string& text) const;
  bool matches_discharge(const std::string& text) const;
  void validate() const;
};

struct Case {
  enum class Status { well_formed, ongoing, malformed };

  std::string case_id;
  std::string patient_id;
  EventSeq events;  // chronological
  std::optional<TimePoint> admission_time;  // first timestamped Admission form
  Status status = Status::malformed;
  std::optional<int> label;  // set for well-formed cases only
};

const char* status_name(Case::Status s);

/// Step 1: maximal runs starting at a respiratory-coded event with at
/// most 10 days between consecutive events. Events before the first
/// qualifying start are discarded. Input must be chronologically sorted.
std::vector<EventSeq> segment_sequences(const EventSeq& stream);

/// Step 2: when a discharge form is followed only by events without the
/// studied diagnosis, everything after that discharge is dropped. Each
/// discharge form is checked independently, earliest first.
EventSeq truncate_after_discharge(EventSeq seq);

/// Step 3: events before a rejection form are dropped when none of them
/// is a stay form.
EventSeq drop_before_rejection(EventSeq seq);

/// Steps 4-5: keeps only sequences that carry the studied diagnosis and
/// contain at least one stay form.
std::vector<EventSeq> filter_cases(std::vector<EventSeq> seqs);

/// Consecutive same-patient sequences are concatenated when the gap from
/// one's discharge to the next's admission is under 7 days.
std::vector<EventSeq> merge_readmissions(std::vector<EventSeq> seqs);

/// Well-formed: an admission form within 7 days of the first event and
/// terminal evidence (discharge form, death form, or a terminal mention)
/// within the last 4 days of the sequence. Otherwise ongoing when the
/// last event is within 10 days of `now`, else malformed.
Case::Status classify_wellformed(const Case& c, const TimePoint& now,
                                 const KeywordRules& rules);

/// Positive when a death form is present or any event text carries
/// positive evidence (ICU / ventilation / death mentions).
int label_case(const Case& c, const KeywordRules& rules);

/// Model input parts. Admission-only: the first admission report.
/// Full mode adds the text of every radiology / lab / diagnosis-list /
/// stay event timestamped within `horizon_seconds` of admission,
/// chronologically (ties keep stream order).
std::vector<std::string> assemble_input(const Case& c, bool with_additional_data,
                                        std::int64_t horizon_seconds = 24 * 3600);

/// K-style cleanup: drops cases without an admission form or without an
/// admission timestamp.
std::vector<Case> filter_dataset_k(std::vector<Case> cases);

/// The composed pipeline over a raw multi-patient stream: group by
/// patient, sort, segment, truncate, drop-before-rejection, filter,
/// merge, classify, label.
std::vector<Case> extract_cases(const std::vector<EventRecord>& stream,
                                const KeywordRules& rules, const TimePoint& now);

/// JSON-lines input, one event per line with fields `patient_id,
/// clinic_id, form_type, timestamp, text, icd_codes`.
std::vector<EventRecord> read_events_jsonl(std::istream& in);
void write_events_jsonl(std::ostream& out, const std::vector<EventRecord>& events);
/// JSON-lines output of cases with `case_id, patient_id, status, label,
/// parts` (parts assembled in the requested mode; empty when the case
/// has no admission form).
void write_cases_jsonl(std::ostream& out, const std::vector<Case>& cases,
                       bool with_additional_data);

}  // namespace clinrisk
