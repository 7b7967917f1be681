#pragma once

// Layer-heterogeneity network.
//
//   input  = [patch embeddings] ++ [token embeddings] + positions
//   blocks 0..K-1   shared by both task families
//   blocks K..L-1   one parameter branch per family, picked by the task label
//   heads           final norm + vocabulary projection, one per family
//
// Every block is pre-norm:
//   x' = MSA(LN1(x)) + x
//   y  = FFN(LN2(x')) + x'
// with causal attention.
//
// Topology::kDense keeps every block shared and a single head (the plain
// mixed-training baseline); Topology::kHard separates every block and head.

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "omni/action_codec.hpp"
#include "omni/data.hpp"
#include "omni/kv.hpp"
#include "omni/task.hpp"
#include "omni/tensor.hpp"

namespace omni {

enum class Topology { kDense, kLayerHet, kHard };

const char* topology_name(Topology t);
Topology parse_topology(std::string_view s);

struct ModelConfig {
  int n_layers = 14;
  /// Number of shared blocks K: 1 <= K < L for kLayerHet, L for kDense,
  /// 0 for kHard.
  int share_threshold = 4;
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 512;
  int max_seq_len = 64;
  int vocab_size = 1024;
  int patch_size = 8;
  int image_side = 32;
  Topology topology = Topology::kLayerHet;
  float ln_eps = 1e-5f;

  /// Throws InvalidArgument describing the first violated invariant.
  void validate() const;
  int n_patches() const { return (image_side / patch_size) * (image_side / patch_size); }
  int head_dim() const { return d_model / n_heads; }
  int shared_layers() const;
  bool operator==(const ModelConfig&) const = default;
};

/// `model.*` keys.
void write_model_config(KeyValues& kv, const ModelConfig& c);
/// Missing keys take the defaults above; the result is validated.
ModelConfig read_model_config(const KeyValues& kv);

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FfnParams {
  Tensor w_up, b_up, w_down, b_down;
};

struct BlockParams {
  LayerNormParams ln1;
  AttentionParams attn;
  LayerNormParams ln2;
  FfnParams ffn;
};

struct ExpertBlock {
  BlockParams gui;
  BlockParams rob;
  const BlockParams& branch(TaskLabel l) const { return l == TaskLabel::kGui ? gui : rob; }
  BlockParams& branch(TaskLabel l) { return l == TaskLabel::kGui ? gui : rob; }
};

struct OutputHead {
  LayerNormParams norm;
  Tensor proj;  // [d_model, vocab_size]
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class LayerHetModel {
 public:
  /// Randomly initialized model; the same (config, seed) always yields the
  /// same parameters.
  static LayerHetModel init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }

  /// Every parameter under its checkpoint name, in a fixed order:
  ///   embed.token.weight, embed.patch.{weight,bias}, embed.pos.weight,
  ///   blocks.<i>.<shared|gui|rob>.<ln1|attn|ln2|ffn>.<...>,
  ///   head.<shared|gui|rob>.{norm.gain,norm.bias,proj.weight}
  std::vector<NamedTensor> named_parameters() const;
  std::size_t parameter_count() const;
  /// Deep copy with independent storage.
  LayerHetModel clone() const;
  void zero_grad();

  const OutputHead& head(TaskLabel l) const;
  OutputHead& head(TaskLabel l);

  Tensor token_embed;  // [vocab, d]
  Tensor patch_w;      // [patch^2, d]
  Tensor patch_b;      // [d]
  Tensor pos_embed;    // [max_seq_len, d]
  std::vector<BlockParams> shared;
  std::vector<ExpertBlock> experts;
  OutputHead head_gui;  // also the single head of a dense model
  OutputHead head_rob;

 private:
  ModelConfig config_;
};

/// Scalar parameters per block: 2 norms, 4 projections with bias, 2-layer MLP.
std::size_t block_parameter_count(const ModelConfig& c);
std::size_t head_parameter_count(const ModelConfig& c);

/// Patch embeddings followed by text token embeddings, plus positions.
/// Throws InvalidArgument if the image does not match the config or the
/// sequence exceeds max_seq_len.
Tensor embed_inputs(Tape& tape, const LayerHetModel& model, const ModelInput& input);
Tensor forward_block(Tape& tape, const BlockParams& block, const Tensor& x, const ModelConfig& config);
/// x stacks several sequences row-wise; attention stays within each segment.
Tensor forward_block(Tape& tape, const BlockParams& block, const Tensor& x, const ModelConfig& config,
                     std::span<const std::size_t> segment_lengths);
inline Tensor forward_shared(Tape& tape, const BlockParams& block, const Tensor& x, const ModelConfig& config) {
  return forward_block(tape, block, x, config);
}
Tensor forward_expert(Tape& tape, const ExpertBlock& block, const Tensor& x, TaskLabel label, const ModelConfig& config,
                      std::span<const std::size_t> segment_lengths = {});

/// Runs embedding and all blocks. If layer_outputs is given it receives the
/// hidden state after each block (L entries).
Tensor forward_hidden(Tape& tape, const LayerHetModel& model, const ModelInput& input,
                      std::vector<Tensor>* layer_outputs = nullptr);
/// Several same-label inputs stacked row-wise (in order); row offsets of each
/// input are the running sums of segment_lengths, which is filled in.
Tensor forward_hidden_batch(Tape& tape, const LayerHetModel& model, std::span<const ModelInput> inputs,
                            std::vector<std::size_t>& segment_lengths);
/// Head for input.label applied to the final hidden state; logits [seq, vocab].
Tensor forward(Tape& tape, const LayerHetModel& model, const ModelInput& input);
/// Logits only at the given sequence positions (rows of the hidden state).
Tensor forward_at(Tape& tape, const LayerHetModel& model, const ModelInput& input, std::span<const std::size_t> positions);

/// Masked next-token loss over one label-homogeneous batch: each action token
/// is predicted from the position before it. The final token is not fed.
Tensor batch_loss(Tape& tape, const LayerHetModel& model, const Batch& batch);

struct GenerateOptions {
  int max_gui_tokens = 64;
};

/// Greedy decoding. Robot: exactly 7 tokens decoded with the bin table (a
/// non-action token raises "invalid action token"). GUI: tokens until the
/// decoded text parses as a complete action, capped at max_gui_tokens.
Action generate_action(const LayerHetModel& model, const UnifiedSample& sample, const ActionCodecConfig& codec,
                       const TextVocab& vocab = default_vocab(), const GenerateOptions& options = {});

}  // namespace omni
