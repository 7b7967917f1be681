#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "omni/action_codec.hpp"
#include "omni/error.hpp"
#include "omni/rng.hpp"

using namespace omni;

namespace {

const std::filesystem::path kFixture = std::filesystem::path(OMNI_TEST_DATA_DIR) / "fixture_table.tsv";

ActionCodecConfig identity_table(int k) {
  std::vector<TokenId> t(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) t[static_cast<std::size_t>(i)] = i;
  return ActionCodecConfig(k, t, k);
}

EmbodiedAction random_action(Rng& rng) {
  EmbodiedAction a;
  for (auto& c : a.v) c = rng.uniform(-1.0, 1.0);
  return a;
}

}  // namespace

TEST_CASE("bin_index edges and midpoint") {
  CHECK(bin_index(-1.0, 256) == 0);
  CHECK(bin_index(1.0, 256) == 255);
  // floor((0 + 1) / 2 * 256) = 128.
  CHECK(bin_index(0.0, 256) == 128);
  CHECK(bin_index(-0.5, 2) == 0);
  CHECK(bin_index(0.0, 2) == 1);
}

TEST_CASE("bin_index rejects out-of-range values and tiny bin counts") {
  CHECK_THROWS_AS(bin_index(1.0001, 256), RangeError);
  CHECK_THROWS_AS(bin_index(-1.5, 256), RangeError);
  CHECK_THROWS_AS(bin_index(std::nan(""), 256), RangeError);
  CHECK_THROWS_AS(bin_index(0.0, 1), InvalidArgument);
}

TEST_CASE("bin_index is monotone and its centre is within half a bin") {
  for (int k : {2, 3, 7, 256, 1000}) {
    int prev = 0;
    for (int i = 0; i <= 20000; ++i) {
      const double v = -1.0 + 2.0 * i / 20000.0;
      const int b = bin_index(v, k);
      CHECK(b >= prev);
      prev = b;
      CHECK(std::abs(bin_center(b, k) - v) <= 1.0 / k + 1e-12);
    }
  }
}

TEST_CASE("encode_embodied: worked example through the fixture table") {
  const auto cfg = load_table(kFixture);
  CHECK_FALSE(cfg.injective());
  const EmbodiedAction a{{0.043, -0.075, -0.579, 0.0, -0.147, -0.080, 1.0}};
  const auto tokens = encode_embodied(a, cfg);
  const std::array<TokenId, 7> want = {151510, 151500, 151482, 151515, 151515, 151516, 151642};
  CHECK(tokens == want);
  // Two bins share an id, so decoding is refused rather than guessed.
  CHECK_THROWS_AS(decode_embodied(tokens, cfg), Error);
}

TEST_CASE("encode_embodied: identity table cases") {
  const auto cfg = identity_table(256);
  EmbodiedAction zero;
  for (auto t : encode_embodied(zero, cfg)) CHECK(t == 128);
  EmbodiedAction low;
  low.v.fill(-1.0);
  for (auto t : encode_embodied(low, cfg)) CHECK(t == 0);
}

TEST_CASE("encode_embodied names the offending component") {
  EmbodiedAction a;
  a.v[4] = 1.5;
  CHECK_THROWS_WITH_AS(encode_embodied(a, identity_table(16)), doctest::Contains("rot_y"), RangeError);
}

TEST_CASE("decode_embodied: bin centres and unknown ids") {
  const auto cfg = identity_table(2);
  const std::array<TokenId, 7> zeros{};
  CHECK(decode_embodied(zeros, cfg).v[0] == -0.5);
  const std::array<TokenId, 7> bad = {0, 0, 0, 5, 0, 0, 0};
  CHECK_THROWS_WITH_AS(decode_embodied(bad, cfg), doctest::Contains("unknown action token 5"), Error);
}

TEST_CASE("decode is idempotent over 10,000 random actions") {
  const auto cfg = build_default_table(1024, 256, default_vocab().size());
  Rng rng(99);
  for (int i = 0; i < 10000; ++i) {
    const EmbodiedAction a = random_action(rng);
    const EmbodiedAction once = decode_embodied(encode_embodied(a, cfg), cfg);
    const EmbodiedAction twice = decode_embodied(encode_embodied(once, cfg), cfg);
    REQUIRE(once == twice);
    for (std::size_t c = 0; c < kEmbodiedDims; ++c) REQUIRE(std::abs(once.v[c] - a.v[c]) <= 1.0 / 256 + 1e-12);
  }
}

TEST_CASE("injectivity: components more than two bins apart give different tokens") {
  const auto cfg = build_default_table(1024, 64, default_vocab().size());
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    EmbodiedAction a = random_action(rng), b = a;
    const auto c = static_cast<std::size_t>(rng.below(7));
    const double shift = 2.0 / 64 + 1e-6 + rng.uniform() * 0.2;
    b.v[c] = a.v[c] + shift <= 1.0 ? a.v[c] + shift : a.v[c] - shift;
    CHECK(encode_embodied(a, cfg) != encode_embodied(b, cfg));
  }
}

TEST_CASE("build_default_table assigns the reserved tail in order") {
  const TokenId text = default_vocab().size();
  const auto cfg = build_default_table(1024, 256, text);
  REQUIRE(cfg.table().size() == 256);
  for (int b = 0; b < 256; ++b) CHECK(cfg.token_for_bin(b) == 768 + b);
  CHECK(cfg.injective());
  for (TokenId id = 0; id < text; ++id) CHECK_FALSE(cfg.is_action_token(id));
  CHECK_THROWS_AS(build_default_table(text + 10, 256, text), InvalidArgument);
}

TEST_CASE("default table round-trips 1,000 random actions within the bound") {
  const auto cfg = build_default_table(1024, 256, default_vocab().size());
  Rng rng(1234);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_action(rng);
    const auto back = decode_embodied(encode_embodied(a, cfg), cfg);
    for (std::size_t c = 0; c < kEmbodiedDims; ++c) CHECK(std::abs(back.v[c] - a.v[c]) <= 1.0 / 256);
  }
}

TEST_CASE("codec config rejects ids that collide with text or exceed the vocabulary") {
  CHECK_THROWS_AS(ActionCodecConfig(2, {5, 6}, 10, 6), InvalidArgument);
  CHECK_THROWS_AS(ActionCodecConfig(2, {8, 10}, 10, 0), InvalidArgument);
  CHECK_THROWS_AS(ActionCodecConfig(3, {1, 2}, 10, 0), InvalidArgument);
}

TEST_CASE("GUI and embodied encodings occupy disjoint id ranges") {
  const auto cfg = build_default_table(1024, 256, default_vocab().size());
  Rng rng(3);
  std::set<TokenId> gui_ids, emb_ids;
  for (int i = 0; i < 200; ++i) {
    for (auto t : encode_gui(GuiAction::click(rng.uniform(), rng.uniform()))) gui_ids.insert(t);
    for (auto t : encode_embodied(random_action(rng), cfg)) emb_ids.insert(t);
  }
  for (auto t : gui_ids) CHECK_FALSE(emb_ids.contains(t));
}

TEST_CASE("table file round-trip") {
  const auto cfg = build_default_table(600, 32, default_vocab().size());
  const auto parsed = parse_table(format_table(cfg), 600, default_vocab().size());
  CHECK(parsed == cfg);
  CHECK_THROWS_AS(parse_table("0\t700\n2\t701\n"), ParseError);
  CHECK_THROWS_AS(parse_table("0 700\n"), ParseError);
  const auto commented = parse_table("# header\n0\t700\n\n1\t701\n");
  CHECK(commented.k_bins() == 2);
  CHECK(commented.vocab_size() == 702);
}

TEST_CASE("GUI canonical text and round-trips") {
  CHECK(format_gui(GuiAction::click(0.312, 0.744)) == "click(x=0.312,y=0.744)");
  CHECK(format_gui(GuiAction::done()) == "done()");
  CHECK(format_gui(GuiAction::type("say \"hi\" \\ ok")) == "type(text=\"say \\\"hi\\\" \\\\ ok\")");

  const auto back = decode_gui(encode_gui(GuiAction::click(0.5, 0.5)));
  CHECK(back.kind == GuiVerb::kClick);
  CHECK(std::abs(*back.x - 0.5) <= 5e-4);
  CHECK(decode_gui(encode_gui(GuiAction::done())) == GuiAction::done());
}

TEST_CASE("GUI fuzz: 10,000 random valid actions round-trip to print precision") {
  Rng rng(77);
  const std::string alphabet = "abc XYZ019 \"\\,()=.";
  for (int i = 0; i < 10000; ++i) {
    GuiAction a;
    switch (rng.below(5)) {
      case 0: a = GuiAction::click(rng.uniform(), rng.uniform()); break;
      case 1: a = GuiAction::tap(rng.uniform(), rng.uniform()); break;
      case 2: a = GuiAction::scroll(rng.uniform(), rng.uniform()); break;
      case 3: {
        std::string s;
        const auto n = rng.below(12);
        for (std::uint64_t j = 0; j < n; ++j) s += alphabet[rng.below(alphabet.size())];
        a = GuiAction::type(s);
        break;
      }
      default: a = GuiAction::done();
    }
    const GuiAction b = decode_gui(encode_gui(a));
    REQUIRE(b.kind == a.kind);
    REQUIRE(b.text == a.text);
    REQUIRE(b.x.has_value() == a.x.has_value());
    if (a.x) {
      REQUIRE(std::abs(*b.x - *a.x) <= 5e-4 + 1e-12);
      REQUIRE(std::abs(*b.y - *a.y) <= 5e-4 + 1e-12);
    }
  }
}

TEST_CASE("GUI parse errors carry a position") {
  try {
    parse_gui("click(x=0.5;y=0.5)");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.position() == 11);
  }
  CHECK_THROWS_AS(parse_gui("jump()"), ParseError);
  CHECK_THROWS_AS(parse_gui("click(x=1.5,y=0.5)"), Error);
  CHECK_THROWS_AS(parse_gui("done() "), ParseError);
  CHECK_THROWS_AS(parse_gui("type(text=\"unterminated)"), ParseError);
}

TEST_CASE("the canonical click serializes to twelve toy tokens") {
  CHECK(encode_gui(GuiAction::click(0.125, 0.375)).size() == 12);
}
