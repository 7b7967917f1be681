#pragma once

// Closed-loop toy environments and success-rate evaluation.
//
// GUI episodes are one step: the policy answers with one action and the
// episode succeeds iff it is a click/tap within the tolerance of the target
// centre. Robot episodes run until the gripper opens or max_steps elapse.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "omni/action_codec.hpp"
#include "omni/data.hpp"
#include "omni/kv.hpp"
#include "omni/model.hpp"

namespace omni {

struct StepResult {
  GrayImage image;
  bool done = false;
  bool success = false;
  /// Why the step failed, if it did ("out-of-range action", "wrong family"...).
  std::string failure;
};

class GuiEnv {
 public:
  GuiEnv(std::uint64_t scene_seed, const GenParams& params, double click_tolerance = 0.1);

  UnifiedSample observation() const;
  StepResult step(const Action& action);
  const GuiScene& scene() const noexcept { return scene_; }
  bool done() const noexcept { return done_; }

 private:
  std::uint64_t seed_;
  GenParams params_;
  double tolerance_;
  GuiScene scene_;
  bool done_ = false;
};

class RobotEnv {
 public:
  RobotEnv(std::uint64_t scene_seed, const GenParams& params);

  UnifiedSample observation() const;
  StepResult step(const Action& action);
  const RobotScene& scene() const noexcept { return scene_; }
  int steps() const noexcept { return steps_; }
  bool done() const noexcept { return done_; }

 private:
  std::uint64_t seed_;
  GenParams params_;
  RobotScene scene_;
  int steps_ = 0;
  bool done_ = false;
};

/// Maps an observation to an action. May throw; the harness counts a throw as
/// a failed episode.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual Action act(const UnifiedSample& observation) = 0;
};

/// Greedy decoding with a frozen model.
class ModelPolicy final : public Policy {
 public:
  ModelPolicy(const LayerHetModel& model, ActionCodecConfig codec) : model_(model), codec_(std::move(codec)) {}
  Action act(const UnifiedSample& observation) override;

 private:
  const LayerHetModel& model_;
  ActionCodecConfig codec_;
};

/// Replays the generator's expert action carried by each observation.
class ScriptedPolicy final : public Policy {
 public:
  Action act(const UnifiedSample& observation) override { return observation.action; }
};

/// Uniform random actions of the observation's family: every embodied
/// component uniform in [-1, 1]; a GUI click at a uniform point.
class RandomPolicy final : public Policy {
 public:
  explicit RandomPolicy(std::uint64_t seed) : rng_(seed) {}
  Action act(const UnifiedSample& observation) override;

 private:
  Rng rng_;
};

struct EvalReport {
  TaskLabel family = TaskLabel::kGui;
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;  // successes / episodes
  double mean_steps = 0.0;
  std::uint64_t seed = 0;
  /// Episodes ended by a policy error (decode failure, out-of-range action).
  std::size_t errors = 0;

  KeyValues to_kv() const;
  static EvalReport from_kv(const KeyValues& kv);
  bool operator==(const EvalReport&) const = default;
};

/// Runs n episodes on scene seeds from the evaluation domain (disjoint from
/// every training seed) and aggregates in seed order.
EvalReport evaluate(Policy& policy, TaskLabel family, std::size_t n_episodes, std::uint64_t seed,
                    const GenParams& params = {}, double click_tolerance = 0.1);

/// Appends `variant,family,seed,success_rate,episodes` (header if new).
void append_results_csv(const std::filesystem::path& path, const std::string& variant, const EvalReport& report);

}  // namespace omni
