#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "clinrisk/ehr.hpp"

namespace clinrisk::synth {

enum class MarkerPolicy { early, late, mixed };
enum class MarkerChannel { admission, radiology };

const char* policy_name(MarkerPolicy p);
MarkerPolicy policy_from_name(const std::string& s);
const char* channel_name(MarkerChannel c);
MarkerChannel channel_from_name(const std::string& s);

/// Deterministic corpus shape. Length targets are admission-report token
/// counts of the encoded input (classifier and separator tokens
/// included); the marker is a three-token phrase whose words never occur
/// in the ordinary sentence pools.
struct GeneratorConfig {
  std::uint64_t seed = 0;
  std::int64_t n_patients = 100;

  std::int64_t median_len = 943;
  std::int64_t p75_len = 1276;
  std::int64_t p99_len = 3695;

  std::string marker = "occult perfusion deficit";
  MarkerPolicy policy = MarkerPolicy::late;
  MarkerChannel channel = MarkerChannel::admission;
  /// Marker-bearing documents receive up to this many occurrences, spread
  /// over the policy region (fewer when the document is short).
  std::int64_t marker_repeats = 1;
  double marker_rate = 0.5;         // fraction of cases carrying the marker
  double marker_to_positive = 0.95; // P(positive | marker)
  double base_positive_rate = 0.15; // P(positive | no marker)

  double malformed_rate = 0.05;
  double ongoing_rate = 0.05;

  void validate() const;
  /// Plain-text `key=value` dump; parsing it back reproduces the config.
  std::string manifest() const;
  static GeneratorConfig from_manifest(std::istream& in);
};

/// Per-case ground truth written beside the event stream.
struct CaseTruth {
  std::string patient_id;
  int label = 0;
  bool has_marker = false;
  /// Encoded token position of the first marker occurrence in the
  /// admission-only input; -1 when absent or placed in a radiology form.
  std::int64_t marker_pos = -1;
  std::string status;  // intended extraction status at corpus `now`
};

struct SyntheticCorpus {
  std::vector<EventRecord> events;
  std::vector<CaseTruth> truth;
  TimePoint now;  // reference instant for ongoing/malformed statuses
  std::string manifest;
};

/// Pure function of the config (seed included): regenerating from the
/// manifest is byte-identical.
SyntheticCorpus generate(const GeneratorConfig& cfg);

/// Patient-level split: no patient straddles two sides, deterministic
/// under the seed, sizes by largest remainder. Every non-empty fraction
/// must receive both classes.
struct SplitFractions {
  double train = 0.8, validation = 0.1, test = 0.1;
};
std::array<SyntheticCorpus, 3> split(const SyntheticCorpus& corpus, SplitFractions fractions,
                                     std::uint64_t seed);

void write_truth_jsonl(std::ostream& out, const std::vector<CaseTruth>& truth);
std::vector<CaseTruth> read_truth_jsonl(std::istream& in);

}  // namespace clinrisk::synth
