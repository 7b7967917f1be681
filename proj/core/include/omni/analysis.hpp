#pragma once

// Interference diagnostics.
//
// Update similarity: two runs start from one base checkpoint, one on GUI data
// and one on robot data. With d = theta_after - theta_base per run, every
// comparable tensor pair gets cos(d_gui, d_rob). Shared tensors pair by name;
// expert tensors pair the GUI branch of the GUI run with the robot branch of
// the robot run at the same block, and likewise for the heads.
//
// Feature similarity: hidden states after a block, mean-pooled over sequence
// positions, compared pairwise between a GUI and a robot sample set.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "omni/checkpoint.hpp"
#include "omni/data.hpp"
#include "omni/model.hpp"

namespace omni {

struct CosineResult {
  double value = 0.0;
  /// Either vector had zero norm; value is then 0.
  bool degenerate = false;
};

/// dot(a, b) / (|a| |b|) accumulated in double. Throws ShapeError on a length
/// mismatch.
CosineResult cosine(std::span<const float> a, std::span<const float> b);
CosineResult cosine(std::span<const double> a, std::span<const double> b);

struct ParamSimilarity {
  std::string gui_name;
  std::string rob_name;
  /// Block index, or -1 for embeddings and -2 for heads.
  int layer = 0;
  /// Name without the block/branch prefix, e.g. "attn.q.weight".
  std::string submodule;
  CosineResult cosine;
};

struct LayerSimilarity {
  int layer = 0;
  CosineResult cosine;  // over every paired tensor of the block, concatenated
};

struct UpdateSimilarityReport {
  std::vector<ParamSimilarity> params;
  std::vector<LayerSimilarity> layers;
  double cutoff = 0.2;
  /// Smallest block index whose whole-layer cosine falls below the cutoff.
  std::optional<int> recommended_k;
  /// Training steps of the probe runs (read from the GUI run's checkpoint).
  std::uint64_t probe_steps = 0;
};

/// Throws ConfigMismatch("runs not comparable ...") unless both runs carry
/// the base's parameter hash, and CheckpointShapeError on tensor mismatches.
UpdateSimilarityReport param_update_similarity(const Checkpoint& base, const Checkpoint& after_gui,
                                               const Checkpoint& after_rob, double cutoff = 0.2);

/// update_similarity.csv (layer,submodule,cosine,degenerate_flag) and
/// update_similarity_layers.csv (layer,cosine,degenerate_flag), each preceded
/// by a `#` header line carrying probe_steps and the recommended K, plus a
/// line chart update_similarity.svg.
void write_update_similarity(const std::filesystem::path& dir, const UpdateSimilarityReport& report);

struct FeatureSimilarityMatrix {
  int layer = 0;
  std::size_t rows = 0;  // GUI samples
  std::size_t cols = 0;  // robot samples
  std::vector<double> values;  // row-major
  double mean = 0.0;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

/// Mean over sequence positions of the hidden state after each requested
/// block, for the observation context of every sample. Result is
/// [layer][sample][channel].
std::vector<std::vector<std::vector<double>>> pooled_features(const LayerHetModel& model,
                                                              std::span<const UnifiedSample> samples,
                                                              std::span<const int> layers);

/// Throws InvalidArgument if a layer index is not below n_layers of both models.
std::vector<FeatureSimilarityMatrix> feature_similarity(const LayerHetModel& model_gui, const LayerHetModel& model_rob,
                                                        std::span<const UnifiedSample> gui_samples,
                                                        std::span<const UnifiedSample> rob_samples,
                                                        std::span<const int> layers);

/// feature_similarity_L<k>.csv per layer and feature_means.csv (layer,mean).
void write_feature_similarity(const std::filesystem::path& dir, std::span<const FeatureSimilarityMatrix> matrices);

}  // namespace omni
