#pragma once

// Unified action space. GUI actions are serialized to a small canonical
// grammar and tokenized as text; embodied actions are binned uniformly over
// [-1, 1] and mapped to reserved ids through a bin -> token table.
//
// GUI grammar (coordinates printed with exactly three decimals):
//   click(x=0.312,y=0.744)   tap(x=..,y=..)   scroll(x=..,y=..)
//   type(text="hello \"quoted\"")   done()

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "omni/text_vocab.hpp"

namespace omni {

inline constexpr std::size_t kEmbodiedDims = 7;
inline constexpr int kDefaultBins = 256;

struct EmbodiedAction {
  // pos_x, pos_y, pos_z, rot_x, rot_y, rot_z, gripper (>= 0 means open).
  std::array<double, kEmbodiedDims> v{};

  static constexpr std::array<const char*, kEmbodiedDims> kNames = {"pos_x", "pos_y", "pos_z", "rot_x",
                                                                    "rot_y", "rot_z", "gripper"};
  double pos_x() const { return v[0]; }
  double pos_y() const { return v[1]; }
  double gripper() const { return v[6]; }
  bool gripper_open() const { return v[6] >= 0.0; }

  /// Throws RangeError naming the first component outside [-1, 1].
  void validate() const;
  bool operator==(const EmbodiedAction&) const = default;
};

enum class GuiVerb { kClick, kTap, kType, kScroll, kDone };

const char* verb_name(GuiVerb v);

struct GuiAction {
  GuiVerb kind = GuiVerb::kDone;
  std::optional<double> x;
  std::optional<double> y;
  std::optional<std::string> text;

  static GuiAction click(double x, double y) { return {GuiVerb::kClick, x, y, std::nullopt}; }
  static GuiAction tap(double x, double y) { return {GuiVerb::kTap, x, y, std::nullopt}; }
  static GuiAction scroll(double x, double y) { return {GuiVerb::kScroll, x, y, std::nullopt}; }
  static GuiAction type(std::string s) { return {GuiVerb::kType, std::nullopt, std::nullopt, std::move(s)}; }
  static GuiAction done() { return {}; }

  bool has_point() const { return kind == GuiVerb::kClick || kind == GuiVerb::kTap || kind == GuiVerb::kScroll; }
  /// click/tap/scroll carry coordinates in [0,1]; type carries printable text;
  /// done carries neither.
  void validate() const;
  bool operator==(const GuiAction&) const = default;
};

/// min(floor((v + 1) / 2 * k_bins), k_bins - 1). Throws RangeError for v
/// outside [-1, 1] and InvalidArgument for k_bins < 2.
int bin_index(double v, int k_bins);
/// Center of bin idx: -1 + (2 idx + 1) / k_bins.
double bin_center(int idx, int k_bins);

class ActionCodecConfig {
 public:
  /// Validates that every id is below vocab_size and not below
  /// text_token_count (ids under it belong to text). A table that maps two
  /// bins to one token is accepted but flagged: it can encode, not decode.
  ActionCodecConfig(int k_bins, std::vector<TokenId> bin_to_token, TokenId vocab_size, TokenId text_token_count = 0);

  int k_bins() const noexcept { return k_bins_; }
  TokenId vocab_size() const noexcept { return vocab_size_; }
  TokenId text_token_count() const noexcept { return text_token_count_; }
  std::span<const TokenId> table() const noexcept { return bin_to_token_; }
  bool injective() const noexcept { return injective_; }

  TokenId token_for_bin(int bin) const;
  /// Bin for an action token; nullopt if the id is not in the table.
  /// Throws if the table is not injective.
  std::optional<int> bin_for_token(TokenId id) const;
  bool is_action_token(TokenId id) const { return token_to_bin_.contains(id); }

  bool operator==(const ActionCodecConfig& o) const {
    return k_bins_ == o.k_bins_ && bin_to_token_ == o.bin_to_token_ && vocab_size_ == o.vocab_size_;
  }

 private:
  int k_bins_;
  std::vector<TokenId> bin_to_token_;
  TokenId vocab_size_;
  TokenId text_token_count_;
  bool injective_ = true;
  std::unordered_map<TokenId, int> token_to_bin_;
};

/// Assigns the k_bins highest ids of the vocabulary to bins in ascending
/// order. Throws InvalidArgument when vocab_size < text_token_count + k_bins.
ActionCodecConfig build_default_table(TokenId vocab_size, int k_bins, TokenId text_token_count);

/// Table file: one `bin<TAB>token` pair per line, ascending bins starting at
/// 0, `#` comments and blank lines ignored. vocab_size defaults to max id + 1.
ActionCodecConfig load_table(const std::filesystem::path& path, std::optional<TokenId> vocab_size = std::nullopt,
                             TokenId text_token_count = 0);
ActionCodecConfig parse_table(std::string_view text, std::optional<TokenId> vocab_size = std::nullopt,
                              TokenId text_token_count = 0);
std::string format_table(const ActionCodecConfig& cfg);
void save_table(const std::filesystem::path& path, const ActionCodecConfig& cfg);

std::array<TokenId, kEmbodiedDims> encode_embodied(const EmbodiedAction& a, const ActionCodecConfig& cfg);
/// Each component becomes the center of its bin. Throws InvalidArgument
/// ("unknown action token <id>") for ids outside the table.
EmbodiedAction decode_embodied(std::span<const TokenId> tokens, const ActionCodecConfig& cfg);

std::string format_gui(const GuiAction& a);
/// Strict parser for the canonical grammar; ParseError carries the offset.
GuiAction parse_gui(std::string_view text);
std::vector<TokenId> encode_gui(const GuiAction& a, const TextVocab& vocab = default_vocab());
GuiAction decode_gui(std::span<const TokenId> tokens, const TextVocab& vocab = default_vocab());

}  // namespace omni
