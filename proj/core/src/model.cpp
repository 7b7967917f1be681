#include "omni/model.hpp"

#include <cmath>

#include "omni/error.hpp"
#include "omni/rng.hpp"

namespace omni {

const char* topology_name(Topology t) {
  switch (t) {
    case Topology::kDense: return "dense";
    case Topology::kLayerHet: return "layer_het";
    case Topology::kHard: return "hard";
  }
  return "?";
}

Topology parse_topology(std::string_view s) {
  if (s == "dense") return Topology::kDense;
  if (s == "layer_het") return Topology::kLayerHet;
  if (s == "hard") return Topology::kHard;
  throw InvalidArgument("unknown topology '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidArgument("model config: " + m); };
  if (n_layers < 1) fail("n_layers must be positive");
  if (d_model < 1 || n_heads < 1 || d_ff < 1 || max_seq_len < 1 || vocab_size < 1 || patch_size < 1 || image_side < 1) {
    fail("extents must be positive");
  }
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (image_side % patch_size != 0) fail("image_side must be divisible by patch_size");
  switch (topology) {
    case Topology::kLayerHet:
      if (share_threshold < 1 || share_threshold >= n_layers) fail("share_threshold K must satisfy 1 <= K < n_layers");
      break;
    case Topology::kDense:
      if (share_threshold != n_layers) fail("dense topology requires share_threshold == n_layers");
      break;
    case Topology::kHard:
      if (share_threshold != 0) fail("hard topology requires share_threshold == 0");
      break;
  }
  if (!(ln_eps > 0.0f)) fail("ln_eps must be positive");
}

int ModelConfig::shared_layers() const { return share_threshold; }

std::size_t block_parameter_count(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model), f = static_cast<std::size_t>(c.d_ff);
  return 4 * d                 // two layer norms
         + 4 * (d * d + d)     // q, k, v, o
         + (d * f + f) + (f * d + d);
}

std::size_t head_parameter_count(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  return 2 * d + d * static_cast<std::size_t>(c.vocab_size);
}

namespace {

Tensor normal_tensor(Rng rng, Shape shape, double stddev) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal() * stddev);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor filled(Shape shape, float value) {
  return Tensor(shape, std::vector<float>(shape_numel(shape), value), true);
}

BlockParams init_block(const Rng& rng, const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model), f = static_cast<std::size_t>(c.d_ff);
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_scale = 1.0 / std::sqrt(2.0 * c.n_layers);
  BlockParams b;
  b.ln1 = {filled({d}, 1.0f), filled({d}, 0.0f)};
  b.ln2 = {filled({d}, 1.0f), filled({d}, 0.0f)};
  b.attn.wq = normal_tensor(rng.split("attn.q"), {d, d}, in_std);
  b.attn.wk = normal_tensor(rng.split("attn.k"), {d, d}, in_std);
  b.attn.wv = normal_tensor(rng.split("attn.v"), {d, d}, in_std);
  b.attn.wo = normal_tensor(rng.split("attn.o"), {d, d}, in_std * out_scale);
  b.attn.bq = filled({d}, 0.0f);
  b.attn.bk = filled({d}, 0.0f);
  b.attn.bv = filled({d}, 0.0f);
  b.attn.bo = filled({d}, 0.0f);
  b.ffn.w_up = normal_tensor(rng.split("ffn.up"), {d, f}, in_std);
  b.ffn.b_up = filled({f}, 0.0f);
  b.ffn.w_down = normal_tensor(rng.split("ffn.down"), {f, d}, out_scale / std::sqrt(static_cast<double>(f)));
  b.ffn.b_down = filled({d}, 0.0f);
  return b;
}

OutputHead init_head(const Rng& rng, const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  return OutputHead{{filled({d}, 1.0f), filled({d}, 0.0f)},
                    normal_tensor(rng.split("proj"), {d, static_cast<std::size_t>(c.vocab_size)}, 1.0 / std::sqrt(static_cast<double>(d)))};
}

void append_block(std::vector<NamedTensor>& out, const std::string& prefix, const BlockParams& b) {
  out.push_back({prefix + ".ln1.gain", b.ln1.gain});
  out.push_back({prefix + ".ln1.bias", b.ln1.bias});
  out.push_back({prefix + ".attn.q.weight", b.attn.wq});
  out.push_back({prefix + ".attn.q.bias", b.attn.bq});
  out.push_back({prefix + ".attn.k.weight", b.attn.wk});
  out.push_back({prefix + ".attn.k.bias", b.attn.bk});
  out.push_back({prefix + ".attn.v.weight", b.attn.wv});
  out.push_back({prefix + ".attn.v.bias", b.attn.bv});
  out.push_back({prefix + ".attn.o.weight", b.attn.wo});
  out.push_back({prefix + ".attn.o.bias", b.attn.bo});
  out.push_back({prefix + ".ln2.gain", b.ln2.gain});
  out.push_back({prefix + ".ln2.bias", b.ln2.bias});
  out.push_back({prefix + ".ffn.up.weight", b.ffn.w_up});
  out.push_back({prefix + ".ffn.up.bias", b.ffn.b_up});
  out.push_back({prefix + ".ffn.down.weight", b.ffn.w_down});
  out.push_back({prefix + ".ffn.down.bias", b.ffn.b_down});
}

void append_head(std::vector<NamedTensor>& out, const std::string& prefix, const OutputHead& h) {
  out.push_back({prefix + ".norm.gain", h.norm.gain});
  out.push_back({prefix + ".norm.bias", h.norm.bias});
  out.push_back({prefix + ".proj.weight", h.proj});
}

BlockParams clone_block(const BlockParams& b) {
  return BlockParams{{b.ln1.gain.clone(), b.ln1.bias.clone()},
                     {b.attn.wq.clone(), b.attn.bq.clone(), b.attn.wk.clone(), b.attn.bk.clone(), b.attn.wv.clone(),
                      b.attn.bv.clone(), b.attn.wo.clone(), b.attn.bo.clone()},
                     {b.ln2.gain.clone(), b.ln2.bias.clone()},
                     {b.ffn.w_up.clone(), b.ffn.b_up.clone(), b.ffn.w_down.clone(), b.ffn.b_down.clone()}};
}

OutputHead clone_head(const OutputHead& h) {
  if (!h.proj.defined()) return {};
  return OutputHead{{h.norm.gain.clone(), h.norm.bias.clone()}, h.proj.clone()};
}

}  // namespace

LayerHetModel LayerHetModel::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const Rng root(derive_seed(seed, "model-init"));
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto p2 = static_cast<std::size_t>(config.patch_size * config.patch_size);
  LayerHetModel m;
  m.config_ = config;
  m.token_embed = normal_tensor(root.split("embed.token"), {static_cast<std::size_t>(config.vocab_size), d}, 0.1);
  m.patch_w = normal_tensor(root.split("embed.patch"), {p2, d}, 1.0 / std::sqrt(static_cast<double>(p2)));
  m.patch_b = filled({d}, 0.0f);
  m.pos_embed = normal_tensor(root.split("embed.pos"), {static_cast<std::size_t>(config.max_seq_len), d}, 0.1);
  for (int i = 0; i < config.n_layers; ++i) {
    const Rng layer = root.split("blocks." + std::to_string(i));
    if (i < config.share_threshold) {
      m.shared.push_back(init_block(layer.split("shared"), config));
    } else {
      m.experts.push_back(ExpertBlock{init_block(layer.split("gui"), config), init_block(layer.split("rob"), config)});
    }
  }
  if (config.topology == Topology::kDense) {
    m.head_gui = init_head(root.split("head.shared"), config);
  } else {
    m.head_gui = init_head(root.split("head.gui"), config);
    m.head_rob = init_head(root.split("head.rob"), config);
  }
  return m;
}

std::vector<NamedTensor> LayerHetModel::named_parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"embed.token.weight", token_embed});
  out.push_back({"embed.patch.weight", patch_w});
  out.push_back({"embed.patch.bias", patch_b});
  out.push_back({"embed.pos.weight", pos_embed});
  for (std::size_t i = 0; i < shared.size(); ++i) append_block(out, "blocks." + std::to_string(i) + ".shared", shared[i]);
  for (std::size_t j = 0; j < experts.size(); ++j) {
    const std::string idx = std::to_string(shared.size() + j);
    append_block(out, "blocks." + idx + ".gui", experts[j].gui);
    append_block(out, "blocks." + idx + ".rob", experts[j].rob);
  }
  if (config_.topology == Topology::kDense) {
    append_head(out, "head.shared", head_gui);
  } else {
    append_head(out, "head.gui", head_gui);
    append_head(out, "head.rob", head_rob);
  }
  return out;
}

std::size_t LayerHetModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

LayerHetModel LayerHetModel::clone() const {
  LayerHetModel m;
  m.config_ = config_;
  m.token_embed = token_embed.clone();
  m.patch_w = patch_w.clone();
  m.patch_b = patch_b.clone();
  m.pos_embed = pos_embed.clone();
  for (const auto& b : shared) m.shared.push_back(clone_block(b));
  for (const auto& e : experts) m.experts.push_back(ExpertBlock{clone_block(e.gui), clone_block(e.rob)});
  m.head_gui = clone_head(head_gui);
  m.head_rob = clone_head(head_rob);
  return m;
}

void LayerHetModel::zero_grad() {
  for (auto& p : named_parameters()) p.tensor.zero_grad();
}

const OutputHead& LayerHetModel::head(TaskLabel l) const {
  return (config_.topology == Topology::kDense || l == TaskLabel::kGui) ? head_gui : head_rob;
}

OutputHead& LayerHetModel::head(TaskLabel l) {
  return (config_.topology == Topology::kDense || l == TaskLabel::kGui) ? head_gui : head_rob;
}

Tensor embed_inputs(Tape& tape, const LayerHetModel& model, const ModelInput& input) {
  const ModelConfig& c = model.config();
  const auto side = static_cast<std::size_t>(c.image_side);
  const auto ps = static_cast<std::size_t>(c.patch_size);
  if (input.image.size() != side * side) {
    throw InvalidArgument("image has " + std::to_string(input.image.size()) + " pixels, model expects " +
                          std::to_string(side) + "x" + std::to_string(side));
  }
  const std::size_t per_side = side / ps;
  const std::size_t n_patches = per_side * per_side;
  const std::size_t seq = n_patches + input.tokens.size();
  if (seq > static_cast<std::size_t>(c.max_seq_len)) {
    throw InvalidArgument("sequence of " + std::to_string(n_patches) + " patches + " + std::to_string(input.tokens.size()) +
                          " tokens exceeds max_seq_len " + std::to_string(c.max_seq_len));
  }
  std::vector<float> patches(n_patches * ps * ps);
  for (std::size_t py = 0; py < per_side; ++py) {
    for (std::size_t px = 0; px < per_side; ++px) {
      float* dst = patches.data() + (py * per_side + px) * ps * ps;
      for (std::size_t y = 0; y < ps; ++y)
        for (std::size_t x = 0; x < ps; ++x) dst[y * ps + x] = input.image[(py * ps + y) * side + px * ps + x];
    }
  }
  const Tensor patch_in({n_patches, ps * ps}, std::move(patches));
  const Tensor parts[] = {linear(tape, patch_in, model.patch_w, model.patch_b), embedding(tape, model.token_embed, input.tokens)};
  const Tensor x = input.tokens.empty() ? parts[0] : concat_rows(tape, parts);
  return add(tape, x, slice_rows(tape, model.pos_embed, 0, seq));
}

Tensor forward_block(Tape& tape, const BlockParams& b, const Tensor& x, const ModelConfig& c) {
  const std::size_t whole = x.rows();
  return forward_block(tape, b, x, c, std::span<const std::size_t>(&whole, 1));
}

Tensor forward_block(Tape& tape, const BlockParams& b, const Tensor& x, const ModelConfig& c,
                     std::span<const std::size_t> segment_lengths) {
  const Tensor h = layer_norm(tape, x, b.ln1.gain, b.ln1.bias, c.ln_eps);
  const Tensor q = linear(tape, h, b.attn.wq, b.attn.bq);
  const Tensor k = linear(tape, h, b.attn.wk, b.attn.bk);
  const Tensor v = linear(tape, h, b.attn.wv, b.attn.bv);
  const auto dh = static_cast<std::size_t>(c.head_dim());
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<Tensor> segments;
  segments.reserve(segment_lengths.size());
  std::size_t offset = 0;
  for (const std::size_t len : segment_lengths) {
    const bool whole = segment_lengths.size() == 1;
    const Tensor qs = whole ? q : slice_rows(tape, q, offset, len);
    const Tensor ks = whole ? k : slice_rows(tape, k, offset, len);
    const Tensor vs = whole ? v : slice_rows(tape, v, offset, len);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(c.n_heads));
    for (std::size_t hd = 0; hd < static_cast<std::size_t>(c.n_heads); ++hd) {
      const Tensor qh = slice_cols(tape, qs, hd * dh, dh);
      const Tensor kh = slice_cols(tape, ks, hd * dh, dh);
      const Tensor vh = slice_cols(tape, vs, hd * dh, dh);
      const Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
      heads.push_back(matmul(tape, causal_softmax(tape, scores), vh));
    }
    segments.push_back(concat_cols(tape, heads));
    offset += len;
  }
  if (offset != x.rows()) throw ShapeError("forward_block: segments cover " + std::to_string(offset) + " of " + std::to_string(x.rows()) + " rows");
  const Tensor mixed = segments.size() == 1 ? segments[0] : concat_rows(tape, segments);
  const Tensor attn = linear(tape, mixed, b.attn.wo, b.attn.bo);
  const Tensor x1 = add(tape, attn, x);

  const Tensor h2 = layer_norm(tape, x1, b.ln2.gain, b.ln2.bias, c.ln_eps);
  const Tensor ff = linear(tape, gelu(tape, linear(tape, h2, b.ffn.w_up, b.ffn.b_up)), b.ffn.w_down, b.ffn.b_down);
  return add(tape, ff, x1);
}

Tensor forward_expert(Tape& tape, const ExpertBlock& block, const Tensor& x, TaskLabel label, const ModelConfig& config,
                      std::span<const std::size_t> segment_lengths) {
  if (segment_lengths.empty()) return forward_block(tape, block.branch(label), x, config);
  return forward_block(tape, block.branch(label), x, config, segment_lengths);
}

Tensor forward_hidden_batch(Tape& tape, const LayerHetModel& model, std::span<const ModelInput> inputs,
                            std::vector<std::size_t>& segment_lengths) {
  if (inputs.empty()) throw InvalidArgument("forward_hidden_batch: no inputs");
  const ModelConfig& c = model.config();
  const TaskLabel label = inputs.front().label;
  std::vector<Tensor> parts;
  parts.reserve(inputs.size());
  segment_lengths.clear();
  for (const auto& in : inputs) {
    if (in.label != label) throw InvalidArgument("forward_hidden_batch: inputs carry different task labels");
    parts.push_back(embed_inputs(tape, model, in));
    segment_lengths.push_back(parts.back().rows());
  }
  Tensor x = parts.size() == 1 ? parts[0] : concat_rows(tape, parts);
  for (const auto& b : model.shared) x = forward_block(tape, b, x, c, segment_lengths);
  for (const auto& e : model.experts) x = forward_expert(tape, e, x, label, c, segment_lengths);
  return x;
}

Tensor forward_hidden(Tape& tape, const LayerHetModel& model, const ModelInput& input, std::vector<Tensor>* layer_outputs) {
  const ModelConfig& c = model.config();
  Tensor x = embed_inputs(tape, model, input);
  for (const auto& b : model.shared) {
    x = forward_shared(tape, b, x, c);
    if (layer_outputs) layer_outputs->push_back(x);
  }
  for (const auto& e : model.experts) {
    x = forward_expert(tape, e, x, input.label, c);
    if (layer_outputs) layer_outputs->push_back(x);
  }
  return x;
}

namespace {
Tensor apply_head(Tape& tape, const OutputHead& head, const Tensor& hidden, float eps) {
  return matmul(tape, layer_norm(tape, hidden, head.norm.gain, head.norm.bias, eps), head.proj);
}
}  // namespace

Tensor forward(Tape& tape, const LayerHetModel& model, const ModelInput& input) {
  const Tensor h = forward_hidden(tape, model, input);
  return apply_head(tape, model.head(input.label), h, model.config().ln_eps);
}

Tensor forward_at(Tape& tape, const LayerHetModel& model, const ModelInput& input, std::span<const std::size_t> positions) {
  const Tensor h = forward_hidden(tape, model, input);
  return apply_head(tape, model.head(input.label), gather_rows(tape, h, positions), model.config().ln_eps);
}

Tensor batch_loss(Tape& tape, const LayerHetModel& model, const Batch& batch) {
  const auto n_patches = static_cast<std::size_t>(model.config().n_patches());
  std::vector<ModelInput> inputs;
  std::vector<std::size_t> positions;
  std::vector<TokenId> targets;
  std::size_t offset = 0;
  for (const auto& s : batch.samples) {
    if (s.input.label != batch.label) throw InvalidArgument("batch_loss: sample label differs from batch label");
    const std::size_t before = positions.size();
    for (std::size_t p = 1; p < s.input.tokens.size(); ++p) {
      if (!s.loss_mask[p]) continue;
      positions.push_back(offset + n_patches + p - 1);
      targets.push_back(s.input.tokens[p]);
    }
    if (positions.size() == before) continue;
    inputs.push_back({s.input.image, {s.input.tokens.begin(), s.input.tokens.end() - 1}, s.input.label});
    offset += n_patches + inputs.back().tokens.size();
  }
  if (inputs.empty()) throw Error("empty loss: batch has no action tokens");
  std::vector<std::size_t> segments;
  const Tensor h = forward_hidden_batch(tape, model, inputs, segments);
  const Tensor all = apply_head(tape, model.head(batch.label), gather_rows(tape, h, positions), model.config().ln_eps);
  const Mask mask(targets.size(), 1);
  return softmax_cross_entropy(tape, all, targets, mask);
}

namespace {
TokenId greedy_next(const LayerHetModel& model, const ModelInput& in) {
  Tape tape;
  tape.set_recording(false);
  const std::size_t last = static_cast<std::size_t>(model.config().n_patches()) + in.tokens.size() - 1;
  const Tensor logits = forward_at(tape, model, in, std::span<const std::size_t>(&last, 1));
  const auto row = logits.data();
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return static_cast<TokenId>(best);
}
}  // namespace

Action generate_action(const LayerHetModel& model, const UnifiedSample& sample, const ActionCodecConfig& codec,
                       const TextVocab& vocab, const GenerateOptions& options) {
  ModelInput in = encode_context(sample, vocab);
  const std::size_t max_tokens = static_cast<std::size_t>(model.config().max_seq_len - model.config().n_patches());
  if (sample.label == TaskLabel::kRobot) {
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < kEmbodiedDims; ++i) {
      if (in.tokens.size() >= max_tokens) throw InvalidArgument("robot decoding ran past max_seq_len");
      const TokenId t = greedy_next(model, in);
      if (!codec.is_action_token(t)) throw InvalidArgument("invalid action token " + std::to_string(t));
      out.push_back(t);
      in.tokens.push_back(t);
    }
    return decode_embodied(out, codec);
  }
  std::vector<TokenId> out;
  for (int step = 0; step < options.max_gui_tokens && in.tokens.size() < max_tokens; ++step) {
    const TokenId t = greedy_next(model, in);
    out.push_back(t);
    in.tokens.push_back(t);
    try {
      return decode_gui(out, vocab);
    } catch (const ParseError&) {
    }
  }
  throw InvalidArgument("gui decoding produced no complete action within " + std::to_string(out.size()) + " tokens");
}

}  // namespace omni
