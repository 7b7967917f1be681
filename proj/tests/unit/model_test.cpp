#include "doctest.h"

#include <bit>
#include <cstring>
#include <map>
#include <set>

#include "omni/error.hpp"
#include "omni/model.hpp"
#include "support/oracles.hpp"
#include "support/small_model.hpp"

using namespace omni;

namespace {

bool bit_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

std::vector<float> logits_of(const LayerHetModel& m, const ModelInput& in) {
  Tape tape;
  tape.set_recording(false);
  const Tensor t = forward(tape, m, in);
  return {t.data().begin(), t.data().end()};
}

void fill(Tensor t, float v) {
  for (auto& x : t.mutable_data()) x = v;
}

void copy_into(Tensor dst, const Tensor& src) { std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin()); }

void copy_block(BlockParams& dst, const BlockParams& src) {
  copy_into(dst.ln1.gain, src.ln1.gain);
  copy_into(dst.ln1.bias, src.ln1.bias);
  copy_into(dst.ln2.gain, src.ln2.gain);
  copy_into(dst.ln2.bias, src.ln2.bias);
  for (auto [d, s] : {std::pair{&dst.attn.wq, &src.attn.wq}, {&dst.attn.bq, &src.attn.bq}, {&dst.attn.wk, &src.attn.wk},
                      {&dst.attn.bk, &src.attn.bk}, {&dst.attn.wv, &src.attn.wv}, {&dst.attn.bv, &src.attn.bv},
                      {&dst.attn.wo, &src.attn.wo}, {&dst.attn.bo, &src.attn.bo}, {&dst.ffn.w_up, &src.ffn.w_up},
                      {&dst.ffn.b_up, &src.ffn.b_up}, {&dst.ffn.w_down, &src.ffn.w_down}, {&dst.ffn.b_down, &src.ffn.b_down}})
    copy_into(*d, *s);
}

void zero_block(BlockParams& b) {
  for (auto* t : {&b.ln1.gain, &b.ln1.bias, &b.ln2.gain, &b.ln2.bias, &b.attn.wq, &b.attn.bq, &b.attn.wk, &b.attn.bk,
                  &b.attn.wv, &b.attn.bv, &b.attn.wo, &b.attn.bo, &b.ffn.w_up, &b.ffn.b_up, &b.ffn.w_down, &b.ffn.b_down})
    fill(*t, 0.0f);
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = testing::small_config();
  CHECK_NOTHROW(c.validate());
  c.share_threshold = c.n_layers;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = testing::small_config();
  c.share_threshold = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = testing::small_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = testing::small_config();
  c.patch_size = 5;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("embed_inputs: patch prefix, prompt-only context and lookup") {
  ModelConfig c = testing::small_config();
  c.image_side = 16;
  const auto m = LayerHetModel::init(c, 1);
  Tape tape;
  const ModelInput empty{std::vector<float>(256, 0.5f), {}, TaskLabel::kGui};
  CHECK(embed_inputs(tape, m, empty).rows() == 4);

  UnifiedSample s = testing::gui_samples(1)[0];
  s.image = GrayImage{16, std::vector<float>(256, 0.25f)};
  s.instruction.clear();
  const auto in = encode_context(s);
  CHECK(in.tokens.size() == default_vocab().tokenize(s.system_prompt).size() + 2);
  CHECK(embed_inputs(tape, m, in).rows() == 4 + in.tokens.size());

  // Zero image and zero positions isolate the token lookup.
  auto z = m.clone();
  fill(z.pos_embed, 0.0f);
  const ModelInput one{std::vector<float>(256, 0.0f), {42}, TaskLabel::kGui};
  const Tensor e = embed_inputs(tape, z, one);
  for (std::size_t j = 0; j < e.cols(); ++j) CHECK(e.at(4, j) == z.token_embed.at(42, j));
}

TEST_CASE("embed_inputs: overlong sequences and wrong images are rejected") {
  const auto m = LayerHetModel::init(testing::small_config(), 1);
  Tape tape;
  ModelInput in{std::vector<float>(1024, 0.0f), std::vector<TokenId>(60, 5), TaskLabel::kGui};
  CHECK_THROWS_WITH_AS(embed_inputs(tape, m, in), doctest::Contains("exceeds max_seq_len 64"), InvalidArgument);
  in.tokens.resize(3);
  in.image.resize(100);
  CHECK_THROWS_AS(embed_inputs(tape, m, in), InvalidArgument);
}

TEST_CASE("forward: logits shape and single expert layer at K = L - 1") {
  ModelConfig c = testing::small_config();
  c.share_threshold = c.n_layers - 1;
  const auto m = LayerHetModel::init(c, 2);
  CHECK(m.shared.size() == static_cast<std::size_t>(c.n_layers - 1));
  CHECK(m.experts.size() == 1);
  const auto in = encode_context(testing::gui_samples(1)[0]);
  const auto logits = logits_of(m, in);
  CHECK(logits.size() == (16 + in.tokens.size()) * static_cast<std::size_t>(c.vocab_size));
}

TEST_CASE("causality: perturbing position j leaves earlier positions bit-identical") {
  const auto m = LayerHetModel::init(testing::small_config(), 3);
  auto in = encode_context(testing::robot_samples(1)[0]);
  const auto base = logits_of(m, in);
  const std::size_t j = 16 + 5;
  in.tokens[5] = in.tokens[5] == 7 ? 8 : 7;
  const auto pert = logits_of(m, in);
  const std::size_t v = static_cast<std::size_t>(m.config().vocab_size);
  CHECK(bit_equal(std::span(base).first(j * v), std::span(pert).first(j * v)));
  CHECK_FALSE(bit_equal(std::span(base).subspan(j * v, v), std::span(pert).subspan(j * v, v)));
}

TEST_CASE("routing isolation (forward): zeroing the other branch changes nothing") {
  const auto m = LayerHetModel::init(testing::small_config(), 4);
  for (TaskLabel label : {TaskLabel::kGui, TaskLabel::kRobot}) {
    const auto s = label == TaskLabel::kGui ? testing::gui_samples(1)[0] : testing::robot_samples(1)[0];
    const auto in = encode_context(s);
    auto z = m.clone();
    const TaskLabel other = label == TaskLabel::kGui ? TaskLabel::kRobot : TaskLabel::kGui;
    for (auto& e : z.experts) zero_block(e.branch(other));
    fill(z.head(other).proj, 0.0f);
    fill(z.head(other).norm.gain, 0.0f);
    CHECK(bit_equal(logits_of(m, in), logits_of(z, in)));
  }
}

TEST_CASE("branch symmetry: a robot branch copied from gui equals the shared block") {
  const ModelConfig c = testing::small_config();
  auto m = LayerHetModel::init(c, 5);
  copy_block(m.experts[0].rob, m.experts[0].gui);
  Rng rng(1);
  const Tensor x({10, static_cast<std::size_t>(c.d_model)}, oracle::random_vector(rng, 10 * 16));
  Tape tape;
  const Tensor a = forward_expert(tape, m.experts[0], x, TaskLabel::kRobot, c);
  const Tensor b = forward_shared(tape, m.experts[0].gui, x, c);
  CHECK(bit_equal(a.data(), b.data()));
}

TEST_CASE("routing isolation (backward): inactive branch gradients are bitwise zero") {
  auto m = LayerHetModel::init(testing::small_config(), 6);
  const auto codec = testing::small_codec();
  for (TaskLabel label : {TaskLabel::kGui, TaskLabel::kRobot}) {
    m.zero_grad();
    const auto samples = label == TaskLabel::kGui ? testing::gui_samples(2) : testing::robot_samples(2);
    Tape tape;
    tape.backward(batch_loss(tape, m, collate(samples, codec)));
    const std::string inactive = label == TaskLabel::kGui ? ".rob." : ".gui.";
    std::size_t checked = 0;
    for (const auto& p : m.named_parameters()) {
      const bool is_inactive = p.name.find(inactive) != std::string::npos ||
                               p.name.rfind(label == TaskLabel::kGui ? "head.rob" : "head.gui", 0) == 0;
      if (!is_inactive) continue;
      ++checked;
      CHECK_FALSE(p.tensor.grad_touched());
      for (float g : p.tensor.grad()) REQUIRE(std::bit_cast<std::uint32_t>(g) == 0u);
    }
    CHECK(checked > 0);
  }
}

TEST_CASE("shared synergy: each label contributes to every shared block parameter") {
  auto m = LayerHetModel::init(testing::small_config(), 7);
  const auto codec = testing::small_codec();
  auto grads_for = [&](const std::vector<UnifiedSample>& samples) {
    m.zero_grad();
    Tape tape;
    tape.backward(batch_loss(tape, m, collate(samples, codec)));
    std::map<std::string, std::vector<float>> out;
    for (const auto& p : m.named_parameters())
      if (p.name.find(".shared.") != std::string::npos) out[p.name] = {p.tensor.grad().begin(), p.tensor.grad().end()};
    return out;
  };
  const auto g = grads_for(testing::gui_samples(2));
  const auto r = grads_for(testing::robot_samples(2));
  REQUIRE(!g.empty());
  for (const auto& [name, vals] : g) {
    bool gui_nonzero = false, rob_nonzero = false;
    for (float v : vals) gui_nonzero |= v != 0.0f;
    for (float v : r.at(name)) rob_nonzero |= v != 0.0f;
    INFO(name);
    CHECK(gui_nonzero);
    CHECK(rob_nonzero);
  }
}

TEST_CASE("tied heads and copied branches make forward label-independent") {
  auto m = LayerHetModel::init(testing::small_config(), 8);
  for (auto& e : m.experts) copy_block(e.rob, e.gui);
  copy_into(m.head_rob.proj, m.head_gui.proj);
  copy_into(m.head_rob.norm.gain, m.head_gui.norm.gain);
  copy_into(m.head_rob.norm.bias, m.head_gui.norm.bias);
  auto in = encode_context(testing::gui_samples(1)[0]);
  const auto a = logits_of(m, in);
  in.label = TaskLabel::kRobot;
  CHECK(bit_equal(a, logits_of(m, in)));
}

TEST_CASE("parameter count: extra branch blocks plus one extra head") {
  const ModelConfig het = testing::small_config();
  ModelConfig dense = het;
  dense.topology = Topology::kDense;
  dense.share_threshold = dense.n_layers;
  const auto m_het = LayerHetModel::init(het, 1);
  const auto m_dense = LayerHetModel::init(dense, 1);
  const std::size_t L = static_cast<std::size_t>(het.n_layers), K = static_cast<std::size_t>(het.share_threshold);
  CHECK(m_het.parameter_count() ==
        m_dense.parameter_count() + (L - K) * block_parameter_count(het) + head_parameter_count(het));
  // Direct count of one block: 2 norms, 4 projections with bias, 2-layer MLP.
  const std::size_t d = 16, f = 32;
  CHECK(block_parameter_count(het) == 4 * d + 4 * (d * d + d) + d * f + f + f * d + d);
}

TEST_CASE("heads are disjoint and shared tensors appear once") {
  const auto m = LayerHetModel::init(testing::small_config(), 1);
  CHECK_FALSE(m.head_gui.proj.same_storage(m.head_rob.proj));
  std::set<const void*> seen;
  std::set<std::string> names;
  for (const auto& p : m.named_parameters()) {
    CHECK(seen.insert(p.tensor.impl()).second);
    CHECK(names.insert(p.name).second);
  }
}

TEST_CASE("init is deterministic and clone is deep") {
  const auto a = LayerHetModel::init(testing::small_config(), 9);
  const auto b = LayerHetModel::init(testing::small_config(), 9);
  const auto pa = a.named_parameters(), pb = b.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bit_equal(pa[i].tensor.data(), pb[i].tensor.data()));
  auto c = a.clone();
  fill(c.token_embed, 0.0f);
  CHECK(a.token_embed.data()[0] != 0.0f);
}

TEST_CASE("generate_action: a head concentrated on one bin decodes that bin everywhere") {
  auto m = LayerHetModel::init(testing::small_config(), 10);
  const auto codec = testing::small_codec();
  const TokenId target = codec.token_for_bin(5);
  // LN output becomes the constant bias, so logits are the bias times the column sums.
  fill(m.head_rob.norm.gain, 0.0f);
  fill(m.head_rob.norm.bias, 1.0f);
  fill(m.head_rob.proj, 0.0f);
  for (std::size_t r = 0; r < m.head_rob.proj.rows(); ++r)
    m.head_rob.proj.mutable_data()[r * m.head_rob.proj.cols() + static_cast<std::size_t>(target)] = 1.0f;
  const auto a = std::get<EmbodiedAction>(generate_action(m, testing::robot_samples(1)[0], codec));
  for (double v : a.v) CHECK(v == bin_center(5, codec.k_bins()));
}

TEST_CASE("generate_action: non-action robot tokens are reported; decoding is deterministic") {
  auto m = LayerHetModel::init(testing::small_config(), 11);
  const auto codec = testing::small_codec();
  fill(m.head_rob.norm.gain, 0.0f);
  fill(m.head_rob.norm.bias, 1.0f);
  fill(m.head_rob.proj, 0.0f);
  for (std::size_t r = 0; r < m.head_rob.proj.rows(); ++r) m.head_rob.proj.mutable_data()[r * m.head_rob.proj.cols() + 40] = 1.0f;
  CHECK_THROWS_WITH(generate_action(m, testing::robot_samples(1)[0], codec), doctest::Contains("invalid action token 40"));

  const auto fresh = LayerHetModel::init(testing::small_config(), 12);
  const auto s = testing::gui_samples(1)[0];
  auto once = [&]() -> std::string {
    try {
      return format_gui(std::get<GuiAction>(generate_action(fresh, s, codec)));
    } catch (const Error& e) {
      return e.what();
    }
  };
  CHECK(once() == once());
}

TEST_CASE("degenerate equivalence: copied branches and tied heads reproduce the dense model bitwise") {
  ModelConfig dc = testing::small_config();
  dc.topology = Topology::kDense;
  dc.share_threshold = dc.n_layers;
  const auto dense = LayerHetModel::init(dc, 13);
  auto het = LayerHetModel::init(testing::small_config(), 13);
  const std::size_t k = het.shared.size();
  for (std::size_t i = 0; i < k; ++i) {
    // Shared blocks initialize identically by name.
    CHECK(bit_equal(het.shared[i].attn.wq.data(), dense.shared[i].attn.wq.data()));
  }
  for (std::size_t i = 0; i < het.experts.size(); ++i) {
    copy_block(het.experts[i].gui, dense.shared[k + i]);
    copy_block(het.experts[i].rob, dense.shared[k + i]);
  }
  for (OutputHead* h : {&het.head_gui, &het.head_rob}) {
    copy_into(h->proj, dense.head_gui.proj);
    copy_into(h->norm.gain, dense.head_gui.norm.gain);
    copy_into(h->norm.bias, dense.head_gui.norm.bias);
  }
  auto samples = testing::gui_samples(5);
  const auto rob = testing::robot_samples(5);
  samples.insert(samples.end(), rob.begin(), rob.end());
  for (const auto& s : samples) {
    auto in = encode_context(s);
    for (TaskLabel l : {TaskLabel::kGui, TaskLabel::kRobot}) {
      in.label = l;
      CHECK(bit_equal(logits_of(dense, in), logits_of(het, in)));
    }
  }
}

// The acceptance suite covers every parameter; here one shared block, one
// expert layer and the heads keep the run short.
TEST_CASE("finite differences agree on a slice of the small model") {
  auto m = LayerHetModel::init(testing::small_config(), 14);
  const auto codec = testing::small_codec();
  const Batch gui = collate(testing::gui_samples(1), codec);
  const Batch rob = collate(testing::robot_samples(1), codec);
  auto run = [&](Tape& tape) { return add(tape, batch_loss(tape, m, gui), batch_loss(tape, m, rob)); };
  m.zero_grad();
  {
    Tape tape;
    tape.backward(run(tape));
  }
  std::vector<NamedTensor> params;
  std::size_t expected = 0;
  for (const auto& p : m.named_parameters())
    if (p.name.rfind("blocks.1.", 0) == 0 || p.name.rfind("blocks.3.", 0) == 0 || p.name.rfind("head.", 0) == 0) {
      params.push_back(p);
      expected += p.tensor.numel();
    }
  REQUIRE(expected == 3 * block_parameter_count(m.config()) + 2 * head_parameter_count(m.config()));
  const auto r = oracle::finite_difference_check(params, [&] {
    Tape tape;
    tape.set_recording(false);
    return static_cast<double>(run(tape).item());
  });
  INFO("worst ", r.worst_name, " off by ", r.worst_abs);
  CHECK(r.failures == 0);
  CHECK(r.checked == expected);
}
