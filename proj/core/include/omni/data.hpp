#pragma once

// Unified sample schema, the two synthetic task families, the mixing recipe
// and collation into model inputs.
//
// GUI family: a grid of cells, one bright cell per row over dim distractors.
// The instruction names a row; the answer is a click (or tap) at the centre of
// that row's bright cell.
//
// Robot family: a planar scene with an effector disc and a dimmer goal disc.
// The expert moves the effector by a clipped proportional displacement and
// opens the gripper once inside the grasp radius. Each trajectory step becomes
// one sample.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "omni/action_codec.hpp"
#include "omni/rng.hpp"
#include "omni/task.hpp"
#include "omni/tensor.hpp"
#include "omni/text_vocab.hpp"

namespace omni {

struct GrayImage {
  int side = 0;
  std::vector<float> pixels;  // row-major, values in [0, 1]

  float at(int row, int col) const { return pixels[static_cast<std::size_t>(row * side + col)]; }
  bool operator==(const GrayImage&) const = default;
};

using Action = std::variant<GuiAction, EmbodiedAction>;

struct UnifiedSample {
  std::uint64_t id = 0;
  /// Scene seed the sample was rendered from (shared by all steps of a robot
  /// episode). Training seeds have the top bit clear, evaluation seeds set.
  std::uint64_t scene_seed = 0;
  TaskLabel label = TaskLabel::kGui;
  std::string system_prompt;
  GrayImage image;
  std::string instruction;
  std::string history;
  Action action;

  /// Action variant matches the label, the image is image_side^2 in [0,1],
  /// and the action itself is valid.
  void validate(int image_side) const;
  bool operator==(const UnifiedSample&) const = default;
};

const std::string& system_prompt_for(TaskLabel label);

// ---- seeds ---------------------------------------------------------------

enum class SeedDomain { kTrain, kEval };
inline constexpr std::uint64_t kEvalSeedBit = 1ULL << 63;

std::uint64_t scene_seed(std::uint64_t seed, TaskLabel family, std::uint64_t index, SeedDomain domain);
inline bool is_eval_seed(std::uint64_t s) { return (s & kEvalSeedBit) != 0; }

// ---- scenes --------------------------------------------------------------

struct GuiScene {
  int grid = 4;
  std::vector<int> bright_col;     // per row
  std::vector<float> cell_level;   // grid*grid dim levels (bright cells ignore it)
  int target_row = 0;
  GuiVerb verb = GuiVerb::kClick;

  double target_x() const { return (bright_col[static_cast<std::size_t>(target_row)] + 0.5) / grid; }
  double target_y() const { return (target_row + 0.5) / grid; }
  /// True if the normalized point lies inside cell (row, col).
  bool cell_contains(int row, int col, double x, double y) const;
};

GuiScene sample_gui_scene(std::uint64_t scene_seed, int grid);
GrayImage render_gui(const GuiScene& scene, int image_side);
std::string gui_instruction(const GuiScene& scene);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Vec2&) const = default;
};

struct RobotDynamics {
  double step_size = 0.25;     // effector moves step_size * action per step
  double grasp_radius = 0.08;
  int max_steps = 50;
  double min_start_distance = 0.3;
  bool operator==(const RobotDynamics&) const = default;
};

struct RobotScene {
  Vec2 effector;
  Vec2 goal;
  double distance() const;
};

RobotScene sample_robot_scene(std::uint64_t scene_seed, const RobotDynamics& dyn);
GrayImage render_robot(const RobotScene& scene, int image_side);
std::string robot_instruction(std::uint64_t scene_seed);
/// Clipped proportional displacement toward the goal; gripper +1 inside the
/// grasp radius, else -1. Non-planar components are 0.
EmbodiedAction expert_robot_action(const RobotScene& scene, const RobotDynamics& dyn);

struct RobotTransition {
  RobotScene next;
  bool done = false;
  bool success = false;
};

/// Moves the effector (clamped to the unit box). Opening the gripper ends
/// the episode: success iff the effector is then within the grasp radius.
RobotTransition robot_transition(const RobotScene& scene, const EmbodiedAction& action, const RobotDynamics& dyn);

// ---- datasets ------------------------------------------------------------

struct GenParams {
  int image_side = 32;
  int grid = 4;
  RobotDynamics dynamics;
  bool operator==(const GenParams&) const = default;
};

/// One observation with its expert action. Generators and environments both
/// build samples here, so training and evaluation renders are identical.
UnifiedSample gui_sample(const GuiScene& scene, std::uint64_t scene_seed, const GenParams& params);
UnifiedSample robot_sample(const RobotScene& scene, std::uint64_t scene_seed, const GenParams& params);

std::vector<UnifiedSample> gen_gui_dataset(std::uint64_t seed, std::size_t n, const GenParams& params = {});
/// `episodes` expert trajectories, one sample per step.
std::vector<UnifiedSample> gen_robot_dataset(std::uint64_t seed, std::size_t episodes, const GenParams& params = {});

/// GUI samples once each plus every robot sample `factor` times, shuffled
/// with `seed`. Throws InvalidArgument if both inputs are empty or factor < 1.
std::vector<UnifiedSample> mix_and_resample(std::span<const UnifiedSample> gui, std::span<const UnifiedSample> robot,
                                            int factor, std::uint64_t seed);

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::size_t gui_samples = 0;
  std::size_t robot_episodes = 0;
  std::size_t robot_samples = 0;
  int resample_factor = 5;
  GenParams params;

  std::string to_text() const;
  static DatasetManifest from_text(const std::string& text);
};

/// One JSON object per line: image as base64 of the f32 little-endian pixels,
/// text fields verbatim, the action as its canonical text (GUI) or a numeric
/// array (robot).
void write_dataset(const std::filesystem::path& path, std::span<const UnifiedSample> samples);
std::vector<UnifiedSample> read_dataset(const std::filesystem::path& path);
std::string sample_to_json_line(const UnifiedSample& s);
UnifiedSample sample_from_json_line(const std::string& line);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

// ---- collation -----------------------------------------------------------

/// What the network consumes: a raster and a token sequence.
struct ModelInput {
  std::vector<float> image;
  std::vector<TokenId> tokens;
  TaskLabel label = TaskLabel::kGui;
};

struct EncodedSample {
  ModelInput input;   // context tokens followed by the action tokens
  Mask loss_mask;     // one entry per token; true exactly on action tokens
  std::size_t context_length = 0;
};

/// system prompt [+ "previous: " history] + instruction + <act>.
std::vector<TokenId> encode_context_tokens(const UnifiedSample& s, const TextVocab& vocab = default_vocab());
ModelInput encode_context(const UnifiedSample& s, const TextVocab& vocab = default_vocab());
std::vector<TokenId> encode_action(const Action& a, const ActionCodecConfig& codec, const TextVocab& vocab = default_vocab());
EncodedSample encode_sample(const UnifiedSample& s, const ActionCodecConfig& codec, const TextVocab& vocab = default_vocab());

struct Batch {
  TaskLabel label = TaskLabel::kGui;
  std::vector<EncodedSample> samples;
};

/// Throws InvalidArgument for an empty or label-mixed batch.
Batch collate(std::span<const UnifiedSample> samples, const ActionCodecConfig& codec,
              const TextVocab& vocab = default_vocab());

}  // namespace omni
