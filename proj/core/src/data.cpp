#include "omni/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "omni/error.hpp"

namespace omni {

TaskLabel parse_label(std::string_view s) {
  if (s == "gui") return TaskLabel::kGui;
  if (s == "robot") return TaskLabel::kRobot;
  throw InvalidArgument("unknown task family '" + std::string(s) + "' (expected gui or robot)");
}

const std::string& system_prompt_for(TaskLabel label) {
  static const std::string gui = "gui agent. actions: click tap type scroll done";
  static const std::string robot = "robot agent. actions: 7-dof bins";
  return label == TaskLabel::kGui ? gui : robot;
}

void UnifiedSample::validate(int image_side) const {
  const bool gui = std::holds_alternative<GuiAction>(action);
  if (gui != (label == TaskLabel::kGui)) {
    throw InvalidArgument("sample " + std::to_string(id) + ": action variant does not match label " + label_name(label));
  }
  if (image.side != image_side || image.pixels.size() != static_cast<std::size_t>(image_side * image_side)) {
    throw InvalidArgument("sample " + std::to_string(id) + ": image is not " + std::to_string(image_side) + "x" +
                          std::to_string(image_side));
  }
  for (float p : image.pixels) {
    if (!(p >= 0.0f && p <= 1.0f)) throw RangeError("sample " + std::to_string(id) + ": pixel outside [0,1]");
  }
  std::visit([](const auto& a) { a.validate(); }, action);
}

std::uint64_t scene_seed(std::uint64_t seed, TaskLabel family, std::uint64_t index, SeedDomain domain) {
  const std::uint64_t base = derive_seed(seed, family == TaskLabel::kGui ? "scene/gui" : "scene/robot");
  const std::uint64_t s = mix64(base + index * 0x9e3779b97f4a7c15ULL) & ~kEvalSeedBit;
  return domain == SeedDomain::kEval ? (s | kEvalSeedBit) : s;
}

// ---- GUI scenes ------------------------------------------------------------

bool GuiScene::cell_contains(int row, int col, double x, double y) const {
  const double lo_x = static_cast<double>(col) / grid, hi_x = static_cast<double>(col + 1) / grid;
  const double lo_y = static_cast<double>(row) / grid, hi_y = static_cast<double>(row + 1) / grid;
  return x >= lo_x && x <= hi_x && y >= lo_y && y <= hi_y;
}

GuiScene sample_gui_scene(std::uint64_t seed, int grid) {
  if (grid < 1 || grid > 9) throw InvalidArgument("grid must be in [1, 9]");
  Rng rng(seed);
  GuiScene s;
  s.grid = grid;
  for (int r = 0; r < grid; ++r) s.bright_col.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(grid))));
  for (int i = 0; i < grid * grid; ++i) s.cell_level.push_back(0.35f * rng.uniform_f32());
  s.target_row = static_cast<int>(rng.below(static_cast<std::uint64_t>(grid)));
  s.verb = rng.below(2) == 0 ? GuiVerb::kClick : GuiVerb::kTap;
  return s;
}

GrayImage render_gui(const GuiScene& scene, int image_side) {
  if (image_side % scene.grid != 0) throw InvalidArgument("image side must be a multiple of the grid size");
  const int cell = image_side / scene.grid;
  GrayImage img{image_side, std::vector<float>(static_cast<std::size_t>(image_side * image_side))};
  for (int y = 0; y < image_side; ++y) {
    for (int x = 0; x < image_side; ++x) {
      const int r = y / cell, c = x / cell;
      const bool bright = scene.bright_col[static_cast<std::size_t>(r)] == c;
      img.pixels[static_cast<std::size_t>(y * image_side + x)] =
          bright ? 1.0f : scene.cell_level[static_cast<std::size_t>(r * scene.grid + c)];
    }
  }
  return img;
}

std::string gui_instruction(const GuiScene& scene) {
  return std::string(verb_name(scene.verb)) + " the bright cell in row " + std::to_string(scene.target_row + 1);
}

// ---- robot scenes ------------------------------------------------------------

double RobotScene::distance() const { return std::hypot(goal.x - effector.x, goal.y - effector.y); }

RobotScene sample_robot_scene(std::uint64_t seed, const RobotDynamics& dyn) {
  Rng rng(seed);
  for (;;) {
    RobotScene s;
    s.effector = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    s.goal = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    if (s.distance() >= dyn.min_start_distance) return s;
  }
}

GrayImage render_robot(const RobotScene& scene, int image_side) {
  constexpr double kRadius = 0.1;
  GrayImage img{image_side, std::vector<float>(static_cast<std::size_t>(image_side * image_side))};
  auto cone = [](double px, double py, Vec2 c, double level) {
    const double d = std::hypot(px - c.x, py - c.y);
    return level * std::clamp(1.0 - d / kRadius, 0.0, 1.0);
  };
  for (int y = 0; y < image_side; ++y) {
    for (int x = 0; x < image_side; ++x) {
      const double px = (x + 0.5) / image_side, py = (y + 0.5) / image_side;
      const double v = std::max(cone(px, py, scene.effector, 1.0), cone(px, py, scene.goal, 0.5));
      img.pixels[static_cast<std::size_t>(y * image_side + x)] = static_cast<float>(v);
    }
  }
  return img;
}

std::string robot_instruction(std::uint64_t seed) {
  static const char* kPhrases[] = {"reach the goal", "move the arm to the goal", "go to the target"};
  return kPhrases[Rng(seed).split("instruction").below(3)];
}

EmbodiedAction expert_robot_action(const RobotScene& scene, const RobotDynamics& dyn) {
  const double gain = 1.0 / dyn.step_size;
  EmbodiedAction a;
  a.v[0] = std::clamp(gain * (scene.goal.x - scene.effector.x), -1.0, 1.0);
  a.v[1] = std::clamp(gain * (scene.goal.y - scene.effector.y), -1.0, 1.0);
  a.v[6] = scene.distance() <= dyn.grasp_radius ? 1.0 : -1.0;
  return a;
}

RobotTransition robot_transition(const RobotScene& scene, const EmbodiedAction& action, const RobotDynamics& dyn) {
  RobotTransition t;
  t.next = scene;
  t.next.effector.x = std::clamp(scene.effector.x + dyn.step_size * action.pos_x(), 0.0, 1.0);
  t.next.effector.y = std::clamp(scene.effector.y + dyn.step_size * action.pos_y(), 0.0, 1.0);
  if (action.gripper_open()) {
    t.done = true;
    t.success = t.next.distance() <= dyn.grasp_radius;
  }
  return t;
}

// ---- datasets --------------------------------------------------------------

UnifiedSample gui_sample(const GuiScene& scene, std::uint64_t scene_seed, const GenParams& params) {
  UnifiedSample s;
  s.scene_seed = scene_seed;
  s.label = TaskLabel::kGui;
  s.system_prompt = system_prompt_for(TaskLabel::kGui);
  s.image = render_gui(scene, params.image_side);
  s.instruction = gui_instruction(scene);
  s.action = GuiAction{scene.verb, scene.target_x(), scene.target_y(), std::nullopt};
  return s;
}

UnifiedSample robot_sample(const RobotScene& scene, std::uint64_t scene_seed, const GenParams& params) {
  UnifiedSample s;
  s.scene_seed = scene_seed;
  s.label = TaskLabel::kRobot;
  s.system_prompt = system_prompt_for(TaskLabel::kRobot);
  s.image = render_robot(scene, params.image_side);
  s.instruction = robot_instruction(scene_seed);
  s.action = expert_robot_action(scene, params.dynamics);
  return s;
}

std::vector<UnifiedSample> gen_gui_dataset(std::uint64_t seed, std::size_t n, const GenParams& params) {
  if (n < 1) throw InvalidArgument("gen_gui_dataset: n must be at least 1");
  std::vector<UnifiedSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ss = scene_seed(seed, TaskLabel::kGui, i, SeedDomain::kTrain);
    UnifiedSample s = gui_sample(sample_gui_scene(ss, params.grid), ss, params);
    s.id = i;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<UnifiedSample> gen_robot_dataset(std::uint64_t seed, std::size_t episodes, const GenParams& params) {
  if (episodes < 1) throw InvalidArgument("gen_robot_dataset: episodes must be at least 1");
  std::vector<UnifiedSample> out;
  std::uint64_t next_id = 0;
  for (std::size_t e = 0; e < episodes; ++e) {
    const auto ss = scene_seed(seed, TaskLabel::kRobot, e, SeedDomain::kTrain);
    RobotScene scene = sample_robot_scene(ss, params.dynamics);
    for (int t = 0; t < params.dynamics.max_steps; ++t) {
      UnifiedSample s = robot_sample(scene, ss, params);
      s.id = next_id++;
      const auto tr = robot_transition(scene, std::get<EmbodiedAction>(s.action), params.dynamics);
      out.push_back(std::move(s));
      if (tr.done) break;
      scene = tr.next;
    }
  }
  return out;
}

std::vector<UnifiedSample> mix_and_resample(std::span<const UnifiedSample> gui, std::span<const UnifiedSample> robot,
                                            int factor, std::uint64_t seed) {
  if (factor < 1) throw InvalidArgument("resample factor must be at least 1");
  if (gui.empty() && robot.empty()) throw InvalidArgument("mix_and_resample: both datasets are empty");
  std::vector<UnifiedSample> out;
  out.reserve(gui.size() + static_cast<std::size_t>(factor) * robot.size());
  out.insert(out.end(), gui.begin(), gui.end());
  for (int f = 0; f < factor; ++f) out.insert(out.end(), robot.begin(), robot.end());
  Rng rng = Rng(seed).split("mix");
  for (std::size_t i = out.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(out[i - 1], out[j]);
  }
  return out;
}

// ---- manifest ----------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", 0);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

std::string DatasetManifest::to_text() const {
  std::ostringstream os;
  os << "# dataset manifest\n"
     << "seed=" << seed << '\n'
     << "gui_samples=" << gui_samples << '\n'
     << "robot_episodes=" << robot_episodes << '\n'
     << "robot_samples=" << robot_samples << '\n'
     << "resample_factor=" << resample_factor << '\n'
     << "image_side=" << params.image_side << '\n'
     << "grid=" << params.grid << '\n'
     << "step_size=" << fmt_double(params.dynamics.step_size) << '\n'
     << "grasp_radius=" << fmt_double(params.dynamics.grasp_radius) << '\n'
     << "max_steps=" << params.dynamics.max_steps << '\n'
     << "min_start_distance=" << fmt_double(params.dynamics.min_start_distance) << '\n';
  return os.str();
}

DatasetManifest DatasetManifest::from_text(const std::string& text) {
  auto kv = parse_kv(text);
  auto get = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw ParseError(std::string("manifest lacks key ") + k, 0);
    return it->second;
  };
  DatasetManifest m;
  m.seed = std::stoull(get("seed"));
  m.gui_samples = std::stoull(get("gui_samples"));
  m.robot_episodes = std::stoull(get("robot_episodes"));
  m.robot_samples = std::stoull(get("robot_samples"));
  m.resample_factor = std::stoi(get("resample_factor"));
  m.params.image_side = std::stoi(get("image_side"));
  m.params.grid = std::stoi(get("grid"));
  m.params.dynamics.step_size = std::stod(get("step_size"));
  m.params.dynamics.grasp_radius = std::stod(get("grasp_radius"));
  m.params.dynamics.max_steps = std::stoi(get("max_steps"));
  m.params.dynamics.min_start_distance = std::stod(get("min_start_distance"));
  return m;
}

// ---- record file -------------------------------------------------------------

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kB64[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw ParseError("base64 length is not a multiple of 4", text.size());
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + static_cast<std::size_t>(k)];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        v[k] = 0;
        ++pad;
        continue;
      }
      v[k] = value(c);
      if (v[k] < 0 || pad) throw ParseError("invalid base64 character", i + static_cast<std::size_t>(k));
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((w >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w & 0xff));
  }
  return out;
}

namespace {

std::vector<std::uint8_t> floats_to_le_bytes(std::span<const float> v) {
  std::vector<std::uint8_t> bytes(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(v[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(u >> (8 * b));
  }
  return bytes;
}

std::vector<float> le_bytes_to_floats(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 4 != 0) throw ParseError("image byte count is not a multiple of 4", bytes.size());
  std::vector<float> v(bytes.size() / 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    v[i] = std::bit_cast<float>(u);
  }
  return v;
}

}  // namespace

std::string sample_to_json_line(const UnifiedSample& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["scene_seed"] = s.scene_seed;
  j["label"] = label_name(s.label);
  j["system_prompt"] = s.system_prompt;
  j["image_side"] = s.image.side;
  j["image"] = base64_encode(floats_to_le_bytes(s.image.pixels));
  j["instruction"] = s.instruction;
  j["history"] = s.history;
  if (const auto* g = std::get_if<GuiAction>(&s.action)) {
    j["action"] = format_gui(*g);
  } else {
    const auto& e = std::get<EmbodiedAction>(s.action);
    j["action"] = std::vector<double>(e.v.begin(), e.v.end());
  }
  return j.dump();
}

UnifiedSample sample_from_json_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed sample record: ") + e.what(), e.byte);
  }
  try {
    UnifiedSample s;
    s.id = j.at("id").get<std::uint64_t>();
    s.scene_seed = j.at("scene_seed").get<std::uint64_t>();
    s.label = parse_label(j.at("label").get<std::string>());
    s.system_prompt = j.at("system_prompt").get<std::string>();
    s.image.side = j.at("image_side").get<int>();
    s.image.pixels = le_bytes_to_floats(base64_decode(j.at("image").get<std::string>()));
    s.instruction = j.at("instruction").get<std::string>();
    s.history = j.at("history").get<std::string>();
    if (s.label == TaskLabel::kGui) {
      s.action = parse_gui(j.at("action").get<std::string>());
    } else {
      const auto v = j.at("action").get<std::vector<double>>();
      if (v.size() != kEmbodiedDims) throw ParseError("robot action needs 7 components", 0);
      EmbodiedAction e;
      std::copy(v.begin(), v.end(), e.v.begin());
      s.action = e;
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed sample record: ") + e.what(), 0);
  }
}

void write_dataset(const std::filesystem::path& path, std::span<const UnifiedSample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path.string());
  for (const auto& s : samples) out << sample_to_json_line(s) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<UnifiedSample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::vector<UnifiedSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(sample_from_json_line(line));
  }
  return out;
}

// ---- collation ---------------------------------------------------------------

std::vector<TokenId> encode_context_tokens(const UnifiedSample& s, const TextVocab& vocab) {
  std::vector<TokenId> tokens = vocab.tokenize(s.system_prompt);
  tokens.push_back(TextVocab::kSep);
  if (!s.history.empty()) {
    auto h = vocab.tokenize("previous: " + s.history);
    tokens.insert(tokens.end(), h.begin(), h.end());
    tokens.push_back(TextVocab::kSep);
  }
  auto instr = vocab.tokenize(s.instruction);
  tokens.insert(tokens.end(), instr.begin(), instr.end());
  tokens.push_back(TextVocab::kAct);
  return tokens;
}

ModelInput encode_context(const UnifiedSample& s, const TextVocab& vocab) {
  return ModelInput{s.image.pixels, encode_context_tokens(s, vocab), s.label};
}

std::vector<TokenId> encode_action(const Action& a, const ActionCodecConfig& codec, const TextVocab& vocab) {
  if (const auto* g = std::get_if<GuiAction>(&a)) return encode_gui(*g, vocab);
  const auto t = encode_embodied(std::get<EmbodiedAction>(a), codec);
  return {t.begin(), t.end()};
}

EncodedSample encode_sample(const UnifiedSample& s, const ActionCodecConfig& codec, const TextVocab& vocab) {
  EncodedSample e;
  e.input = encode_context(s, vocab);
  e.context_length = e.input.tokens.size();
  const auto action = encode_action(s.action, codec, vocab);
  e.input.tokens.insert(e.input.tokens.end(), action.begin(), action.end());
  e.loss_mask.assign(e.input.tokens.size(), 0);
  std::fill(e.loss_mask.begin() + static_cast<std::ptrdiff_t>(e.context_length), e.loss_mask.end(), 1);
  return e;
}

Batch collate(std::span<const UnifiedSample> samples, const ActionCodecConfig& codec, const TextVocab& vocab) {
  if (samples.empty()) throw InvalidArgument("collate: empty batch");
  Batch b;
  b.label = samples[0].label;
  for (const auto& s : samples) {
    if (s.label != b.label) throw InvalidArgument("collate: batch mixes gui and robot samples");
    b.samples.push_back(encode_sample(s, codec, vocab));
  }
  return b;
}

}  // namespace omni
