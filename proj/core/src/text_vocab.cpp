#include "omni/text_vocab.hpp"

#include <algorithm>

#include "omni/error.hpp"

namespace omni {

namespace {
constexpr const char* kWords[] = {
    "click(", "tap(", "type(", "scroll(", "done(", "x=", ",y=", "text=\"", "0.", "1.",
    "gui ", "robot ", "agent", ". ", "actions: ", "click ", "tap ", "type ", "scroll ", "done",
    "the ", "bright ", "cell ", "in ", "row ", "reach ", "goal", "move ", "arm ", "to ",
    "go ", "target", "7-dof ", "bins", "previous: ", "and ", "open ", "gripper",
};
}

TextVocab::TextVocab() {
  pieces_ = {"<pad>", "<unk>", "<act>", "<sep>"};
  for (char c = 32; c < 127; ++c) pieces_.emplace_back(1, c);
  for (const char* w : kWords) pieces_.emplace_back(w);
  for (TokenId id = 0; id < size(); ++id) {
    if (id < 4) continue;
    by_length_.push_back(id);
  }
  std::stable_sort(by_length_.begin(), by_length_.end(),
                   [this](TokenId a, TokenId b) { return pieces_[a].size() > pieces_[b].size(); });
}

std::vector<TokenId> TextVocab::tokenize(std::string_view text) const {
  std::vector<TokenId> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    TokenId best = -1;
    for (TokenId id : by_length_) {
      const auto& p = pieces_[id];
      if (text.compare(pos, p.size(), p) == 0) {
        best = id;
        break;
      }
    }
    if (best < 0) throw ParseError("character outside the toy vocabulary", pos);
    out.push_back(best);
    pos += pieces_[best].size();
  }
  return out;
}

std::string TextVocab::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += piece(id);
  return out;
}

const std::string& TextVocab::piece(TokenId id) const {
  if (!contains(id)) throw RangeError("token id " + std::to_string(id) + " is not a text token");
  return pieces_[static_cast<std::size_t>(id)];
}

const TextVocab& default_vocab() {
  static const TextVocab vocab;
  return vocab;
}

}  // namespace omni
