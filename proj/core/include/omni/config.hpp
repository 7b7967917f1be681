#pragma once

// Resolved run configuration: every knob of a command in one flat key-value
// file. Sections:
//   model.*  train.*  codec.*  data.*  eval.*  analysis.*  ablation.*
// Missing keys take the defaults below, so an empty file is a valid config.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "omni/action_codec.hpp"
#include "omni/data.hpp"
#include "omni/kv.hpp"
#include "omni/model.hpp"
#include "omni/trainer.hpp"

namespace omni {

struct CodecSettings {
  int k_bins = kDefaultBins;
  /// Optional mapping table file; empty means build_default_table.
  std::string table_path;
  bool operator==(const CodecSettings&) const = default;
};

struct DataSettings {
  std::uint64_t seed = 0;
  std::size_t gui_samples = 2500;
  std::size_t robot_episodes = 500;
  int resample_factor = 5;
  GenParams params;
  bool operator==(const DataSettings&) const = default;
};

struct EvalSettings {
  int episodes = 100;
  std::uint64_t seed = 0;
  /// A GUI click succeeds within this normalized distance of the target.
  double click_tolerance = 0.1;
  bool operator==(const EvalSettings&) const = default;
};

struct AnalysisSettings {
  /// Fixed-step probe length for update similarity.
  int probe_steps = 200;
  double k_cutoff = 0.2;
  std::vector<int> feature_layers;  // empty: every layer
  int feature_samples = 32;
  bool operator==(const AnalysisSettings&) const = default;
};

struct AblationSettings {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  bool operator==(const AblationSettings&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  CodecSettings codec;
  DataSettings data;
  EvalSettings eval;
  AnalysisSettings analysis;
  AblationSettings ablation;

  static RunConfig from_kv(const KeyValues& kv);
  KeyValues to_kv() const;
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// The codec a config implies (vocab size comes from model.vocab_size).
ActionCodecConfig make_codec(const CodecSettings& s, const ModelConfig& m);
void write_codec_config(KeyValues& kv, const ActionCodecConfig& codec);
/// Rebuilds a codec stored by write_codec_config (the full table is stored,
/// so checkpoints are self-contained).
ActionCodecConfig read_codec_config(const KeyValues& kv);

std::vector<std::uint64_t> parse_u64_list(std::string_view s);
std::vector<int> parse_int_list(std::string_view s);
std::string join_list(const std::vector<std::uint64_t>& v);
std::string join_list(const std::vector<int>& v);

}  // namespace omni
