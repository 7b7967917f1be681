#pragma once

// Binary checkpoint container (all integers and floats little-endian):
//
//   "OMNICKPT"  u32 version
//   u64 step    u64 rng_state    u64 base_hash
//   str config                   resolved key=value text (model.*, codec.*, train.*)
//   u32 n, then n x { str name, u32 rank, u64 dims[rank], f32 data[] }
//   u32 has_optimizer, then n x { str name, u64 t, f32 m[], f32 v[] }
//   u64 FNV-1a of every preceding byte
//
// where str = u32 length + bytes. Parameter names follow
// blocks.<i>.<shared|gui|rob>.<submodule>.<param>.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "omni/error.hpp"
#include "omni/kv.hpp"
#include "omni/model.hpp"

namespace omni {

/// Bad magic bytes or an unsupported format version.
class CheckpointVersionError : public IoError {
 public:
  using IoError::IoError;
};

/// File ends early or its checksum does not match.
class CheckpointTruncatedError : public IoError {
 public:
  using IoError::IoError;
};

/// Tensor names or shapes disagree with the stored model config.
class CheckpointShapeError : public ConfigMismatch {
 public:
  using ConfigMismatch::ConfigMismatch;
};

struct OptimizerSlot {
  std::string name;
  std::uint64_t t = 0;
  std::vector<float> m;
  std::vector<float> v;
  bool operator==(const OptimizerSlot&) const = default;
};

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
  bool operator==(const StoredTensor&) const = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t step = 0;
  std::uint64_t rng_state = 0;
  /// Hash of the parameters training started from (see parameter_hash).
  std::uint64_t base_hash = 0;
  KeyValues config;
  std::vector<StoredTensor> params;
  std::optional<std::vector<OptimizerSlot>> optimizer;

  ModelConfig model_config() const;
  const StoredTensor* find(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

/// FNV-1a over every (name, shape, data bytes) in order.
std::uint64_t parameter_hash(const std::vector<StoredTensor>& params);
std::uint64_t parameter_hash(const LayerHetModel& model);

std::vector<StoredTensor> snapshot_parameters(const LayerHetModel& model);
/// Writes model config keys into `config` (other keys are kept).
Checkpoint make_checkpoint(const LayerHetModel& model, KeyValues config = {});
/// Rebuilds the model; throws CheckpointShapeError if the tensor set does not
/// match what the stored config implies.
LayerHetModel model_from_checkpoint(const Checkpoint& ckpt);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);
/// Atomic: writes `<path>.tmp` then renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace omni
