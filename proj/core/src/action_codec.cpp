#include "omni/action_codec.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "omni/error.hpp"

namespace omni {

void EmbodiedAction::validate() const {
  for (std::size_t i = 0; i < kEmbodiedDims; ++i) {
    if (!(v[i] >= -1.0 && v[i] <= 1.0)) {
      throw RangeError(std::string("embodied action component ") + kNames[i] + "=" + std::to_string(v[i]) +
                       " outside [-1,1]");
    }
  }
}

const char* verb_name(GuiVerb v) {
  switch (v) {
    case GuiVerb::kClick: return "click";
    case GuiVerb::kTap: return "tap";
    case GuiVerb::kType: return "type";
    case GuiVerb::kScroll: return "scroll";
    case GuiVerb::kDone: return "done";
  }
  return "?";
}

void GuiAction::validate() const {
  if (has_point()) {
    if (!x || !y) throw InvalidArgument(std::string(verb_name(kind)) + " needs x and y");
    if (!(*x >= 0.0 && *x <= 1.0) || !(*y >= 0.0 && *y <= 1.0)) {
      throw RangeError(std::string(verb_name(kind)) + " coordinates outside [0,1]");
    }
    if (text) throw InvalidArgument(std::string(verb_name(kind)) + " carries no text");
  } else if (kind == GuiVerb::kType) {
    if (!text) throw InvalidArgument("type needs text");
    if (x || y) throw InvalidArgument("type carries no coordinates");
    for (char c : *text) {
      if (c < 32 || c > 126) throw InvalidArgument("type text must be printable ASCII");
    }
  } else if (x || y || text) {
    throw InvalidArgument("done carries no arguments");
  }
}

int bin_index(double v, int k_bins) {
  if (k_bins < 2) throw InvalidArgument("k_bins must be at least 2");
  if (!(v >= -1.0 && v <= 1.0)) throw RangeError("value " + std::to_string(v) + " outside [-1,1]");
  const int idx = static_cast<int>(std::floor((v + 1.0) / 2.0 * k_bins));
  return std::min(idx, k_bins - 1);
}

double bin_center(int idx, int k_bins) {
  if (idx < 0 || idx >= k_bins) throw RangeError("bin " + std::to_string(idx) + " outside [0," + std::to_string(k_bins) + ")");
  return -1.0 + (2.0 * idx + 1.0) / k_bins;
}

ActionCodecConfig::ActionCodecConfig(int k_bins, std::vector<TokenId> bin_to_token, TokenId vocab_size,
                                     TokenId text_token_count)
    : k_bins_(k_bins), bin_to_token_(std::move(bin_to_token)), vocab_size_(vocab_size), text_token_count_(text_token_count) {
  if (k_bins_ < 2) throw InvalidArgument("k_bins must be at least 2");
  if (static_cast<int>(bin_to_token_.size()) != k_bins_) {
    throw InvalidArgument("bin table has " + std::to_string(bin_to_token_.size()) + " entries for k_bins=" + std::to_string(k_bins_));
  }
  for (int b = 0; b < k_bins_; ++b) {
    const TokenId id = bin_to_token_[static_cast<std::size_t>(b)];
    if (id < 0 || id >= vocab_size_) {
      throw InvalidArgument("bin " + std::to_string(b) + " maps to token " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(vocab_size_));
    }
    if (id < text_token_count_) {
      throw InvalidArgument("bin " + std::to_string(b) + " maps to text token " + std::to_string(id));
    }
    if (!token_to_bin_.emplace(id, b).second) injective_ = false;
  }
}

TokenId ActionCodecConfig::token_for_bin(int bin) const {
  if (bin < 0 || bin >= k_bins_) throw RangeError("bin " + std::to_string(bin) + " outside table");
  return bin_to_token_[static_cast<std::size_t>(bin)];
}

std::optional<int> ActionCodecConfig::bin_for_token(TokenId id) const {
  if (!injective_) throw InvalidArgument("bin table maps several bins to one token; decoding is ambiguous");
  auto it = token_to_bin_.find(id);
  if (it == token_to_bin_.end()) return std::nullopt;
  return it->second;
}

ActionCodecConfig build_default_table(TokenId vocab_size, int k_bins, TokenId text_token_count) {
  if (k_bins < 2) throw InvalidArgument("k_bins must be at least 2");
  if (vocab_size < text_token_count + k_bins) {
    throw InvalidArgument("vocabulary of " + std::to_string(vocab_size) + " cannot hold " + std::to_string(text_token_count) +
                          " text tokens plus " + std::to_string(k_bins) + " bins");
  }
  std::vector<TokenId> table(static_cast<std::size_t>(k_bins));
  for (int b = 0; b < k_bins; ++b) table[static_cast<std::size_t>(b)] = vocab_size - k_bins + b;
  return ActionCodecConfig(k_bins, std::move(table), vocab_size, text_token_count);
}

ActionCodecConfig parse_table(std::string_view text, std::optional<TokenId> vocab_size, TokenId text_token_count) {
  std::vector<TokenId> table;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    long long bin = -1, token = -1;
    char extra = 0;
    if (line.find('\t') == std::string::npos || std::sscanf(line.c_str(), "%lld\t%lld %c", &bin, &token, &extra) != 2) {
      throw ParseError("bin table line " + std::to_string(line_no) + " is not `bin<TAB>token`", line_no);
    }
    if (bin != static_cast<long long>(table.size())) {
      throw ParseError("bin table line " + std::to_string(line_no) + " has bin " + std::to_string(bin) + ", expected " +
                           std::to_string(table.size()),
                       line_no);
    }
    table.push_back(static_cast<TokenId>(token));
  }
  if (table.empty()) throw ParseError("bin table is empty", 0);
  TokenId vs = 0;
  for (TokenId t : table) vs = std::max(vs, t + 1);
  if (vocab_size) vs = *vocab_size;
  const int k = static_cast<int>(table.size());
  return ActionCodecConfig(k, std::move(table), vs, text_token_count);
}

ActionCodecConfig load_table(const std::filesystem::path& path, std::optional<TokenId> vocab_size, TokenId text_token_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open bin table " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_table(ss.str(), vocab_size, text_token_count);
}

std::string format_table(const ActionCodecConfig& cfg) {
  std::ostringstream os;
  os << "# bin\ttoken (k_bins=" << cfg.k_bins() << ", vocab_size=" << cfg.vocab_size() << ")\n";
  for (int b = 0; b < cfg.k_bins(); ++b) os << b << '\t' << cfg.token_for_bin(b) << '\n';
  return os.str();
}

void save_table(const std::filesystem::path& path, const ActionCodecConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write bin table " + path.string());
  out << format_table(cfg);
}

std::array<TokenId, kEmbodiedDims> encode_embodied(const EmbodiedAction& a, const ActionCodecConfig& cfg) {
  std::array<TokenId, kEmbodiedDims> out{};
  for (std::size_t i = 0; i < kEmbodiedDims; ++i) {
    const double v = a.v[i];
    if (!(v >= -1.0 && v <= 1.0)) {
      throw RangeError(std::string("embodied action component ") + EmbodiedAction::kNames[i] + "=" + std::to_string(v) +
                       " outside [-1,1]");
    }
    out[i] = cfg.token_for_bin(bin_index(v, cfg.k_bins()));
  }
  return out;
}

EmbodiedAction decode_embodied(std::span<const TokenId> tokens, const ActionCodecConfig& cfg) {
  if (tokens.size() != kEmbodiedDims) {
    throw InvalidArgument("embodied action needs " + std::to_string(kEmbodiedDims) + " tokens, got " + std::to_string(tokens.size()));
  }
  EmbodiedAction a;
  for (std::size_t i = 0; i < kEmbodiedDims; ++i) {
    const auto bin = cfg.bin_for_token(tokens[i]);
    if (!bin) throw InvalidArgument("unknown action token " + std::to_string(tokens[i]));
    a.v[i] = bin_center(*bin, cfg.k_bins());
  }
  return a;
}

namespace {

std::string format_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

class GuiParser {
 public:
  explicit GuiParser(std::string_view s) : s_(s) {}

  GuiAction parse() {
    GuiAction a;
    const std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] >= 'a' && s_[pos_] <= 'z') ++pos_;
    const auto verb = s_.substr(start, pos_ - start);
    if (verb == "click") a.kind = GuiVerb::kClick;
    else if (verb == "tap") a.kind = GuiVerb::kTap;
    else if (verb == "scroll") a.kind = GuiVerb::kScroll;
    else if (verb == "type") a.kind = GuiVerb::kType;
    else if (verb == "done") a.kind = GuiVerb::kDone;
    else throw ParseError("unknown action verb '" + std::string(verb) + "'", start);
    expect("(");
    if (a.has_point()) {
      expect("x=");
      a.x = number();
      expect(",y=");
      a.y = number();
    } else if (a.kind == GuiVerb::kType) {
      expect("text=\"");
      a.text = quoted();
    }
    expect(")");
    if (pos_ != s_.size()) throw ParseError("trailing characters after action", pos_);
    return a;
  }

 private:
  void expect(std::string_view lit) {
    if (s_.compare(pos_, lit.size(), lit) != 0) throw ParseError("expected '" + std::string(lit) + "'", pos_);
    pos_ += lit.size();
  }

  double number() {
    const std::size_t start = pos_;
    auto digits = [&] {
      const std::size_t d0 = pos_;
      while (pos_ < s_.size() && s_[pos_] >= '0' && s_[pos_] <= '9') ++pos_;
      return pos_ - d0;
    };
    if (digits() == 0) throw ParseError("expected a number", start);
    if (pos_ >= s_.size() || s_[pos_] != '.') throw ParseError("expected '.' in coordinate", pos_);
    ++pos_;
    if (digits() == 0) throw ParseError("expected digits after '.'", pos_);
    const double v = std::stod(std::string(s_.substr(start, pos_ - start)));
    if (v > 1.0) throw ParseError("coordinate outside [0,1]", start);
    return v;
  }

  std::string quoted() {
    std::string out;
    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      if (c == '"') {
        ++pos_;
        return out;
      }
      if (c == '\\') {
        if (pos_ + 1 >= s_.size()) break;
        const char e = s_[pos_ + 1];
        if (e != '"' && e != '\\') throw ParseError("bad escape", pos_);
        out.push_back(e);
        pos_ += 2;
        continue;
      }
      out.push_back(c);
      ++pos_;
    }
    throw ParseError("unterminated text", pos_);
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string format_gui(const GuiAction& a) {
  a.validate();
  std::string out = verb_name(a.kind);
  out += '(';
  if (a.has_point()) {
    out += "x=" + format_coord(*a.x) + ",y=" + format_coord(*a.y);
  } else if (a.kind == GuiVerb::kType) {
    out += "text=\"";
    for (char c : *a.text) {
      if (c == '"' || c == '\\') out += '\\';
      out += c;
    }
    out += '"';
  }
  out += ')';
  return out;
}

GuiAction parse_gui(std::string_view text) { return GuiParser(text).parse(); }

std::vector<TokenId> encode_gui(const GuiAction& a, const TextVocab& vocab) { return vocab.tokenize(format_gui(a)); }

GuiAction decode_gui(std::span<const TokenId> tokens, const TextVocab& vocab) {
  std::string text;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!vocab.contains(tokens[i]) || tokens[i] < 4) {
      throw ParseError("token " + std::to_string(tokens[i]) + " is not an action text token", text.size());
    }
    text += vocab.piece(tokens[i]);
  }
  return parse_gui(text);
}

}  // namespace omni
