#include "omni/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "omni/config.hpp"
#include "omni/error.hpp"

namespace omni {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kGuiOnly: return "gui_only";
    case Variant::kEaOnly: return "ea_only";
    case Variant::kMixedShared: return "mixed_shared";
    case Variant::kLayerHet: return "layer_het";
    case Variant::kLayerHetHard: return "layer_het_hard";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  for (Variant v : kAllVariants)
    if (s == variant_name(v)) return v;
  throw InvalidArgument("unknown variant '" + std::string(s) +
                        "' (expected gui_only, ea_only, mixed_shared, layer_het or layer_het_hard)");
}

Topology topology_for(Variant v) {
  switch (v) {
    case Variant::kLayerHet: return Topology::kLayerHet;
    case Variant::kLayerHetHard: return Topology::kHard;
    default: return Topology::kDense;
  }
}

bool variant_trains(Variant v, TaskLabel family) {
  if (v == Variant::kGuiOnly) return family == TaskLabel::kGui;
  if (v == Variant::kEaOnly) return family == TaskLabel::kRobot;
  return true;
}

ModelConfig model_config_for(Variant v, ModelConfig base) {
  base.topology = topology_for(v);
  if (base.topology == Topology::kDense) base.share_threshold = base.n_layers;
  if (base.topology == Topology::kHard) base.share_threshold = 0;
  return base;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidArgument("train config: " + m); };
  if (steps < 1) fail("steps must be positive");
  if (batch_size < 1) fail("batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) fail("warmup_ratio must lie in [0, 1]");
  if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
}

int warmup_steps(int steps, double warmup_ratio) {
  return std::max(1, static_cast<int>(std::ceil(warmup_ratio * steps)));
}

double learning_rate_at(int step, int steps, double warmup_ratio, double lr_max) {
  if (step <= 0) return 0.0;
  const int w = warmup_steps(steps, warmup_ratio);
  if (step <= w) return lr_max * step / w;
  if (step >= steps) return 0.0;
  const double progress = static_cast<double>(step - w) / static_cast<double>(steps - w);
  return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---- AdamW -----------------------------------------------------------------

AdamW::AdamW(std::vector<NamedTensor> params, AdamWConfig config) : config_(config) {
  for (auto& p : params) {
    const auto n = p.tensor.numel();
    slots_.push_back(Slot{std::move(p), std::vector<float>(n, 0.0f), std::vector<float>(n, 0.0f), 0});
  }
}

void AdamW::step(double lr) {
  for (auto& s : slots_) {
    Tensor& p = s.param.tensor;
    if (!p.grad_touched()) continue;
    ++s.t;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(s.t));
    const double decay = p.rank() == 2 ? 1.0 - lr * config_.weight_decay : 1.0;
    auto w = p.mutable_data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double m = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * gi;
      const double v = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * gi * gi;
      s.m[i] = static_cast<float>(m);
      s.v[i] = static_cast<float>(v);
      const double update = (m / bc1) / (std::sqrt(v / bc2) + config_.eps);
      w[i] = static_cast<float>(w[i] * decay - lr * update);
    }
  }
}

std::vector<OptimizerSlot> AdamW::state() const {
  std::vector<OptimizerSlot> out;
  for (const auto& s : slots_) out.push_back({s.param.name, s.t, s.m, s.v});
  return out;
}

void AdamW::load_state(const std::vector<OptimizerSlot>& slots) {
  if (slots.size() != slots_.size()) {
    throw CheckpointShapeError("optimizer state has " + std::to_string(slots.size()) + " slots, model has " +
                               std::to_string(slots_.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].name != slots_[i].param.name || slots[i].m.size() != slots_[i].m.size() ||
        slots[i].v.size() != slots_[i].v.size()) {
      throw CheckpointShapeError("optimizer slot '" + slots[i].name + "' does not match parameter '" +
                                 slots_[i].param.name + "'");
    }
    slots_[i].t = slots[i].t;
    slots_[i].m = slots[i].m;
    slots_[i].v = slots[i].v;
  }
}

// ---- batches ---------------------------------------------------------------

BatchScheduler::BatchScheduler(std::span<const UnifiedSample> stream, int batch_size, std::uint64_t seed)
    : stream_(stream), batch_size_(static_cast<std::size_t>(batch_size)), rng_(seed) {
  if (stream.empty()) throw InvalidArgument("training stream is empty");
  if (batch_size < 1) throw InvalidArgument("batch_size must be positive");
  order_.resize(stream.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
}

void BatchScheduler::refill() {
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  cursor_ = 0;
}

std::vector<std::size_t> BatchScheduler::next() {
  for (;;) {
    if (cursor_ == order_.size()) refill();
    const std::size_t idx = order_[cursor_++];
    auto& buf = buffers_[stream_[idx].label == TaskLabel::kGui ? 0 : 1];
    buf.push_back(idx);
    if (buf.size() == batch_size_) {
      std::vector<std::size_t> out;
      out.swap(buf);
      return out;
    }
  }
}

// ---- training loop ---------------------------------------------------------

namespace {

bool all_finite(const LayerHetModel& model) {
  for (const auto& p : model.named_parameters())
    for (float v : p.tensor.data())
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg, std::span<const UnifiedSample> stream,
                  const ActionCodecConfig& codec, TrainOptions options) {
  cfg.validate();
  const ModelConfig mc = model_config_for(cfg.variant, model_cfg);
  LayerHetModel model = options.initial ? options.initial->clone() : LayerHetModel::init(mc, cfg.seed);
  if (model.config() != mc) {
    throw ConfigMismatch(std::string("initial model does not match the ") + variant_name(cfg.variant) +
                         " topology implied by the config");
  }

  std::vector<UnifiedSample> kept;
  for (const auto& s : stream)
    if (variant_trains(cfg.variant, s.label)) kept.push_back(s);
  if (kept.empty()) throw InvalidArgument(std::string("no training samples for variant ") + variant_name(cfg.variant));
  std::vector<EncodedSample> encoded;
  encoded.reserve(kept.size());
  for (const auto& s : kept) encoded.push_back(encode_sample(s, codec));

  BatchScheduler scheduler(kept, cfg.batch_size, derive_seed(cfg.seed, "batches"));
  AdamW opt(model.named_parameters(), {cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay});
  const std::uint64_t base_hash = parameter_hash(model);

  KeyValues ckpt_config = options.extra_config;
  write_train_config(ckpt_config, cfg);
  write_codec_config(ckpt_config, codec);

  auto snapshot = [&](int step) {
    Checkpoint c = make_checkpoint(model, ckpt_config);
    c.step = static_cast<std::uint64_t>(step);
    c.rng_state = scheduler.rng_state();
    c.base_hash = base_hash;
    c.optimizer = opt.state();
    return c;
  };

  std::ofstream log;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    log.open(*options.out_dir / "loss.csv", std::ios::trunc);
    if (!log) throw IoError("cannot write " + (*options.out_dir / "loss.csv").string());
    log << "step,loss,lr\n";
  }

  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 1; step <= cfg.steps; ++step) {
    Batch batch;
    const auto idx = scheduler.next();
    batch.label = kept[idx.front()].label;
    for (auto i : idx) batch.samples.push_back(encoded[i]);

    model.zero_grad();
    Tape tape;
    const Tensor loss = batch_loss(tape, model, batch);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      if (options.out_dir) save_checkpoint(*options.out_dir / "diverged.ckpt", snapshot(step - 1));
      throw NumericalError("loss became non-finite at step " + std::to_string(step));
    }
    tape.backward(loss);
    const double lr = learning_rate_at(step, cfg.steps, cfg.warmup_ratio, cfg.learning_rate);
    opt.step(lr);
    losses.push_back(value);
    if (log) {
      char line[96];
      std::snprintf(line, sizeof line, "%d,%.9g,%.9g\n", step, value, lr);
      log << line;
    }
    if (options.on_step) options.on_step(step, value, lr);
    if (options.out_dir && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps) {
      save_checkpoint(*options.out_dir / ("step_" + std::to_string(step) + ".ckpt"), snapshot(step));
    }
  }
  if (!all_finite(model)) {
    if (options.out_dir) save_checkpoint(*options.out_dir / "diverged.ckpt", snapshot(cfg.steps));
    throw NumericalError("parameters became non-finite");
  }

  Checkpoint final = snapshot(cfg.steps);
  if (options.out_dir) save_checkpoint(*options.out_dir / "final.ckpt", final);
  return TrainResult{std::move(model), std::move(final), std::move(losses)};
}

}  // namespace omni
