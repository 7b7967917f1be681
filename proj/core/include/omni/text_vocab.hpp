#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace omni {

using TokenId = std::int32_t;

/// Toy text tokenizer: a fixed list of pieces (four specials, every
/// printable ASCII character, then a handful of multi-character words used by
/// prompts and the action grammar). Tokenization is greedy longest match, so
/// detokenize(tokenize(s)) == s for any printable-ASCII string.
class TextVocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  /// Marks the end of the conditioning context; generation starts after it.
  static constexpr TokenId kAct = 2;
  static constexpr TokenId kSep = 3;

  TextVocab();

  /// Number of text ids; valid text ids are [0, size()).
  TokenId size() const noexcept { return static_cast<TokenId>(pieces_.size()); }
  std::vector<TokenId> tokenize(std::string_view text) const;
  std::string detokenize(std::span<const TokenId> ids) const;
  /// Piece string for one id; throws RangeError for ids outside the vocabulary.
  const std::string& piece(TokenId id) const;
  bool contains(TokenId id) const noexcept { return id >= 0 && id < size(); }

 private:
  std::vector<std::string> pieces_;
  // Multi-character pieces sorted by length descending for greedy matching.
  std::vector<TokenId> by_length_;
};

/// Process-wide immutable instance.
const TextVocab& default_vocab();

}  // namespace omni
