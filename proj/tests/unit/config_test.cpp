#include "doctest.h"

#include "omni/config.hpp"
#include "omni/error.hpp"

using namespace omni;

TEST_CASE("key-value text: comments, whitespace and overrides") {
  const auto kv = KeyValues::parse("# run\n  model.n_layers = 6\n\ntrain.learning_rate=0.001\n");
  CHECK(kv.get_int("model.n_layers", 0) == 6);
  CHECK(kv.get_double("train.learning_rate", 0) == 0.001);
  CHECK(kv.get_int("missing", 7) == 7);
  CHECK_THROWS_AS(KeyValues::parse("model.n_layers 6\n"), ParseError);
  KeyValues o = kv;
  o.set_assignment("model.n_layers=8");
  CHECK(o.get_int("model.n_layers", 0) == 8);
  CHECK_THROWS_AS(o.set_assignment("novalue"), ParseError);
  KeyValues bad;
  bad.set("model.n_layers", "six");
  CHECK_THROWS_AS(bad.get_int("model.n_layers", 0), ConfigMismatch);
  CHECK_THROWS_AS(bad.require("absent"), ConfigMismatch);
}

TEST_CASE("doubles survive text round-trips exactly") {
  KeyValues kv;
  for (double v : {0.1, 1.0 / 3.0, 3e-4, 1e-300, 123456.789}) {
    kv.set("x", v);
    CHECK(KeyValues::parse(kv.to_text()).get_double("x", 0) == v);
  }
}

TEST_CASE("run config round-trips through its text form") {
  RunConfig c;
  c.model.n_layers = 6;
  c.model.share_threshold = 3;
  c.train.learning_rate = 2.5e-3;
  c.train.variant = Variant::kMixedShared;
  c.codec.k_bins = 64;
  c.data.gui_samples = 123;
  c.data.params.dynamics.step_size = 0.2;
  c.eval.episodes = 17;
  c.analysis.feature_layers = {0, 2, 5};
  c.ablation.seeds = {4, 5};
  const auto back = RunConfig::from_kv(KeyValues::parse(c.to_kv().to_text()));
  CHECK(back == c);
  CHECK(back.to_kv().to_text() == c.to_kv().to_text());
}

TEST_CASE("run config validation reports the first violated invariant") {
  RunConfig c;
  c.model.share_threshold = c.model.n_layers;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  RunConfig d;
  d.codec.k_bins = 1;
  CHECK_THROWS_AS(d.validate(), InvalidArgument);
  RunConfig e;
  e.ablation.seeds.clear();
  CHECK_THROWS_AS(e.validate(), InvalidArgument);
}

TEST_CASE("codec settings build the default table unless a file is given") {
  ModelConfig m;
  const auto codec = make_codec(CodecSettings{}, m);
  CHECK(codec.k_bins() == 256);
  CHECK(codec.token_for_bin(0) == m.vocab_size - 256);
  KeyValues kv;
  write_codec_config(kv, codec);
  CHECK(read_codec_config(kv) == codec);
}

TEST_CASE("list parsing") {
  CHECK(parse_u64_list("0,1,2") == std::vector<std::uint64_t>{0, 1, 2});
  CHECK(parse_int_list("") .empty());
  CHECK(join_list(std::vector<int>{3, 4}) == "3,4");
  CHECK_THROWS(parse_u64_list("1,x"));
}
