#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace clinrisk {

/// Splits text into lowercased maximal runs of letters/digits plus
/// single punctuation marks. Bytes outside ASCII are treated as letters
/// and kept as-is, so UTF-8 words survive unsplit.
std::vector<std::string> tokenize(std::string_view text);

/// Token-to-id map with five reserved specials at fixed ids.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kCls = 2;
  static constexpr std::int32_t kSep = 3;
  static constexpr std::int32_t kMask = 4;
  static constexpr std::int32_t kNumSpecials = 5;

  Vocabulary();

  /// Keeps the (max_size - 5) most frequent tokens of the corpus, ties
  /// broken lexicographically. An empty corpus yields specials only.
  static Vocabulary build(std::istream& corpus, std::int32_t max_size);
  static Vocabulary build_from_texts(const std::vector<std::string>& texts,
                                     std::int32_t max_size);

  std::int32_t size() const { return static_cast<std::int32_t>(id_to_token_.size()); }
  std::int32_t id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token_of(std::int32_t id) const;
  bool is_special(std::int32_t id) const { return id >= 0 && id < kNumSpecials; }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  /// Rebuild from an id-ordered token list (checkpoint loading).
  static Vocabulary from_tokens(std::vector<std::string> id_ordered);

  bool operator==(const Vocabulary& other) const {
    return id_to_token_ == other.id_to_token_;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int32_t> token_to_id_;
};

/// One encoded model input: ids with the classifier token first and a
/// separator after each document part, plus the two per-position masks.
struct TokenSequence {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> padding;  // 1 = real token
  std::vector<std::uint8_t> global;   // 1 = globally attending
  std::optional<int> label;

  std::int64_t length() const { return static_cast<std::int64_t>(ids.size()); }
  std::int64_t real_length() const;

  /// Appends PAD up to len.
  void pad_to(std::int64_t len);
  /// Marks position 0 (the classifier token) global.
  void mark_for_classification();
};

/// [CLS] part1 [SEP] part2 [SEP] ... truncated to max_len; out-of-vocab
/// tokens become UNK. No global positions are set here.
TokenSequence encode(const Vocabulary& vocab, const std::vector<std::string>& parts,
                     std::int64_t max_len);

}  // namespace clinrisk
