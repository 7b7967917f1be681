#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "omni/action_codec.hpp"
#include "omni/checkpoint.hpp"
#include "omni/data.hpp"
#include "omni/kv.hpp"
#include "omni/model.hpp"

namespace omni {

/// Training variants of the sharing/separation ablation.
enum class Variant {
  kGuiOnly,       // dense model, GUI data only
  kEaOnly,        // dense model, embodied data only
  kMixedShared,   // dense model, both families
  kLayerHet,      // K shared blocks, L-K expert blocks, two heads
  kLayerHetHard,  // every block and head separated
};

const char* variant_name(Variant v);
Variant parse_variant(std::string_view s);
inline constexpr Variant kAllVariants[] = {Variant::kGuiOnly, Variant::kEaOnly, Variant::kMixedShared,
                                           Variant::kLayerHetHard, Variant::kLayerHet};

Topology topology_for(Variant v);
bool variant_trains(Variant v, TaskLabel family);
/// Copies `base` with the topology and share threshold the variant implies
/// (K = L for dense, 0 for hard, base.share_threshold for layer_het).
ModelConfig model_config_for(Variant v, ModelConfig base);

struct TrainConfig {
  Variant variant = Variant::kLayerHet;
  int steps = 2000;
  int batch_size = 32;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double warmup_ratio = 0.03;
  std::uint64_t seed = 0;
  /// Write a checkpoint every N steps (0: only the final one).
  int checkpoint_every = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// `train.*` keys.
void write_train_config(KeyValues& kv, const TrainConfig& c);
TrainConfig read_train_config(const KeyValues& kv);

/// max(1, ceil(warmup_ratio * steps)).
int warmup_steps(int steps, double warmup_ratio);
/// Linear warmup then cosine decay to zero. Steps are 1-based:
/// lr(s) = lr_max * s / W for s <= W, then
/// lr(s) = lr_max * 0.5 * (1 + cos(pi * (s - W) / (steps - W))). lr(0) = 0.
double learning_rate_at(int step, int steps, double warmup_ratio, double lr_max);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam. Only parameters whose gradient was touched
/// by the last backward are updated (hard routing leaves inactive branches
/// without a gradient, and they must stay bitwise unchanged). Weight decay
/// applies to matrices only.
class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, AdamWConfig config);

  void step(double lr);
  std::vector<OptimizerSlot> state() const;
  /// Throws CheckpointShapeError if names or sizes differ.
  void load_state(const std::vector<OptimizerSlot>& slots);

 private:
  struct Slot {
    NamedTensor param;
    std::vector<float> m;
    std::vector<float> v;
    std::uint64_t t = 0;
  };
  std::vector<Slot> slots_;
  AdamWConfig config_;
};

/// Label-homogeneous batches drawn from a training stream. The stream is
/// walked in order (epoch 0) and reshuffled with the seed for later epochs;
/// samples go to a per-label buffer and a batch is emitted whenever a buffer
/// fills, so both families are interleaved in stream proportion.
class BatchScheduler {
 public:
  BatchScheduler(std::span<const UnifiedSample> stream, int batch_size, std::uint64_t seed);
  /// Indices into the stream, all with the same label.
  std::vector<std::size_t> next();
  std::uint64_t rng_state() const { return rng_.state(); }

 private:
  void refill();

  std::span<const UnifiedSample> stream_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> buffers_[2];
};

struct TrainOptions {
  /// Starting parameters; when absent the model is initialized from the seed.
  std::optional<LayerHetModel> initial;
  /// If set, periodic/final checkpoints and loss.csv go here.
  std::optional<std::filesystem::path> out_dir;
  /// Extra keys stored in the checkpoint config (codec, data params...).
  KeyValues extra_config;
  std::function<void(int step, double loss, double lr)> on_step;
};

struct TrainResult {
  LayerHetModel model;
  Checkpoint checkpoint;
  std::vector<double> losses;
};

/// Runs cfg.steps steps of masked cross-entropy + AdamW with warmup/cosine.
/// Throws NumericalError on a non-finite loss after writing a diagnostic
/// checkpoint (`diverged.ckpt`) when out_dir is set.
TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg, std::span<const UnifiedSample> stream,
                  const ActionCodecConfig& codec, TrainOptions options = {});

}  // namespace omni
