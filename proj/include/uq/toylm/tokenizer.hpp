#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace uq::lm {

using TokenId = std::int32_t;

/// Word-level tokenizer over a closed vocabulary. Words are split on
/// whitespace and the punctuation marks . , ; : ! ? become tokens of their
/// own. decode() re-attaches punctuation to the preceding word, so text
/// written in that convention round-trips exactly.
class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;

  Tokenizer() = default;
  /// Ids 0-3 are the special tokens and 4-9 the punctuation marks; `words`
  /// follow in order. Punctuation inside `words` is skipped.
  explicit Tokenizer(const std::vector<std::string>& words);

  static std::vector<std::string> split_words(std::string_view text);
  static bool is_punctuation(std::string_view word);

  /// Unknown words map to kUnk.
  std::vector<TokenId> encode(std::string_view text) const;
  /// Special tokens are skipped.
  std::string decode(std::span<const TokenId> ids) const;

  std::size_t size() const { return vocab_.size(); }
  const std::string& token(TokenId id) const;
  TokenId id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::vector<std::string>& vocabulary() const { return vocab_; }

  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace uq::lm
