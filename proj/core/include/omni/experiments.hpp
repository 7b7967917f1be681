#pragma once

// Drivers shared by the command line tool and the acceptance suite: training
// data assembly from a RunConfig, the update-similarity probe and the
// sharing/separation ablation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "omni/checkpoint.hpp"
#include "omni/config.hpp"
#include "omni/envs.hpp"
#include "omni/trainer.hpp"

namespace omni {

struct TrainingData {
  std::vector<UnifiedSample> gui;
  std::vector<UnifiedSample> robot;
  /// gui + robot resampled `resample_factor` times, shuffled.
  std::vector<UnifiedSample> stream;
  DatasetManifest manifest;
};

/// Generates both families from data.seed; a zero count skips a family. The
/// shuffle seed is derive_seed(data.seed, "mix").
TrainingData build_training_data(const DataSettings& s);

using Logger = std::function<void(const std::string&)>;

struct ProbeRuns {
  Checkpoint base;
  Checkpoint gui;
  Checkpoint robot;
};

/// Trains analysis.probe_steps steps from `base` on GUI data and, separately,
/// on robot data, with the variant matching the base topology. Both runs keep
/// the base's seed, so they differ only in the data family.
ProbeRuns run_update_probe(const Checkpoint& base, const RunConfig& cfg, const TrainingData& data,
                           const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct AblationCell {
  Variant variant = Variant::kLayerHet;
  TaskLabel family = TaskLabel::kGui;
  std::uint64_t seed = 0;
  std::optional<EvalReport> report;
  /// Empty when the cell completed.
  std::string error;
};

struct AblationSummary {
  Variant variant = Variant::kLayerHet;
  /// Seed-averaged success per family; empty for families the variant does
  /// not train, or when every seed failed.
  std::optional<double> gui;
  std::optional<double> robot;
  /// Mean of the variant's available family scores.
  std::optional<double> avg;
  std::size_t failed_cells = 0;
};

struct AblationResult {
  std::vector<AblationCell> cells;  // seed-major, then kAllVariants order, GUI before robot
  std::vector<AblationSummary> summary;

  /// Two-family average of one variant on one seed; empty unless both
  /// families completed.
  std::optional<double> seed_average(Variant v, std::uint64_t seed) const;
};

/// For every seed s in ablation.seeds and every variant: trains with
/// train.seed = s on the data of build_training_data(cfg.data), then evaluates
/// each family the variant trains on eval.episodes episodes from eval.seed
/// (the same episodes for every variant). A failing variant is recorded and
/// the sweep continues.
AblationResult run_ablation(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                            const Logger& log = {});

/// results.csv: variant,family,seed,success_rate,episodes,status
std::string ablation_results_csv(const AblationResult& r);
/// summary.csv: variant,gui,robot,avg,status ("-" marks a family the
/// variant cannot act in, "incomplete" a cell whose run failed).
std::string ablation_summary_csv(const AblationResult& r);
/// summary_by_seed.csv: variant,seed,avg
std::string ablation_seed_csv(const AblationResult& r, const std::vector<std::uint64_t>& seeds);

}  // namespace omni
