#include "clinrisk/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <sstream>

#include "clinrisk/errors.hpp"

namespace clinrisk {
namespace {

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c >= 0x80;
}

const char* kSpecialNames[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (is_word_byte(c)) {
      std::string run;
      while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) {
        const unsigned char b = static_cast<unsigned char>(text[i]);
        run.push_back(b < 0x80 ? static_cast<char>(std::tolower(b)) : text[i]);
        ++i;
      }
      out.push_back(std::move(run));
    } else {
      out.emplace_back(1, text[i]);
      ++i;
    }
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* s : kSpecialNames) {
    token_to_id_.emplace(s, static_cast<std::int32_t>(id_to_token_.size()));
    id_to_token_.emplace_back(s);
  }
}

Vocabulary Vocabulary::build(std::istream& corpus, std::int32_t max_size) {
  if (max_size <= kNumSpecials)
    throw ConfigError("vocabulary max_size must exceed " + std::to_string(kNumSpecials));
  std::map<std::string, std::int64_t> counts;  // ordered: lexicographic tie-break for free
  std::string line;
  while (std::getline(corpus, line))
    for (auto& tok : tokenize(line)) ++counts[tok];

  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  const std::size_t keep = static_cast<std::size_t>(max_size - kNumSpecials);
  for (std::size_t i = 0; i < ranked.size() && i < keep; ++i) {
    v.token_to_id_.emplace(ranked[i].first, static_cast<std::int32_t>(v.id_to_token_.size()));
    v.id_to_token_.push_back(ranked[i].first);
  }
  return v;
}

Vocabulary Vocabulary::build_from_texts(const std::vector<std::string>& texts,
                                        std::int32_t max_size) {
  std::ostringstream joined;
  for (const auto& t : texts) joined << t << "\n";
  std::istringstream in(joined.str());
  return build(in, max_size);
}

std::int32_t Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(std::int32_t id) const {
  if (id < 0 || id >= size())
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                    std::to_string(size()));
  return id_to_token_[static_cast<std::size_t>(id)];
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> id_ordered) {
  Vocabulary v;
  for (std::int32_t i = 0; i < kNumSpecials; ++i)
    if (static_cast<std::size_t>(i) >= id_ordered.size() ||
        id_ordered[static_cast<std::size_t>(i)] != kSpecialNames[i])
      throw DataError("vocabulary does not begin with the reserved special tokens");
  for (std::size_t i = kNumSpecials; i < id_ordered.size(); ++i) {
    if (v.token_to_id_.count(id_ordered[i]))
      throw DataError("duplicate vocabulary token: " + id_ordered[i]);
    v.token_to_id_.emplace(id_ordered[i], static_cast<std::int32_t>(i));
    v.id_to_token_.push_back(std::move(id_ordered[i]));
  }
  return v;
}

std::int64_t TokenSequence::real_length() const {
  std::int64_t n = 0;
  for (auto p : padding) n += p;
  return n;
}

void TokenSequence::pad_to(std::int64_t len) {
  while (length() < len) {
    ids.push_back(Vocabulary::kPad);
    padding.push_back(0);
    global.push_back(0);
  }
}

void TokenSequence::mark_for_classification() {
  if (ids.empty() || ids[0] != Vocabulary::kCls)
    throw ContractError("sequence does not start with the classifier token");
  global[0] = 1;
}

TokenSequence encode(const Vocabulary& vocab, const std::vector<std::string>& parts,
                     std::int64_t max_len) {
  if (parts.empty()) throw ContractError("encode: parts must be non-empty");
  if (max_len < 1) throw ContractError("encode: max_len must be >= 1");
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kCls);
  for (const auto& part : parts) {
    for (const auto& tok : tokenize(part)) seq.ids.push_back(vocab.id_of(tok));
    seq.ids.push_back(Vocabulary::kSep);
  }
  if (static_cast<std::int64_t>(seq.ids.size()) > max_len) seq.ids.resize(max_len);
  seq.padding.assign(seq.ids.size(), 1);
  seq.global.assign(seq.ids.size(), 0);
  return seq;
}

}  // namespace clinrisk
