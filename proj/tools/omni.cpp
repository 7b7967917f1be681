// omni: command line entry point for data generation, training, evaluation,
// diagnostics, codec debugging and the sharing/separation ablation.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "omni/analysis.hpp"
#include "omni/checkpoint.hpp"
#include "omni/config.hpp"
#include "omni/envs.hpp"
#include "omni/error.hpp"
#include "omni/experiments.hpp"
#include "omni/rng.hpp"

namespace fs = std::filesystem;
using namespace omni;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitMismatch = 4;
constexpr int kExitNumerical = 5;

constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  2  usage error (bad flag, malformed value, invalid argument)\n"
    "  3  I/O error (missing, unreadable, truncated or corrupt file)\n"
    "  4  configuration or checkpoint mismatch\n"
    "  5  numerical failure (non-finite loss or parameters)\n"
    "Outputs go under $OMNI_RUN_DIR (default ./runs) unless --out is given.";

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
};

fs::path run_root() {
  const char* env = std::getenv("OMNI_RUN_DIR");
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path out_dir(const Common& c, const std::string& fallback) {
  return c.out.empty() ? run_root() / fallback : fs::path(c.out);
}

KeyValues load_kv(const Common& c) {
  KeyValues kv;
  if (!c.config_path.empty()) kv = KeyValues::load(c.config_path);
  for (const auto& s : c.sets) kv.set_assignment(s);
  return kv;
}

RunConfig resolve(const Common& c) { return RunConfig::from_kv(load_kv(c)); }

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

// Explicit model.* keys must agree with the checkpoint they are used with.
void check_model_keys(const Common& c, const Checkpoint& ckpt, const std::string& path) {
  KeyValues merged = ckpt.config;
  bool any = false;
  const KeyValues user = load_kv(c);
  for (const auto& [k, v] : user.values()) {
    if (k.rfind("model.", 0) != 0) continue;
    merged.set(k, v);
    any = true;
  }
  if (any && read_model_config(merged) != ckpt.model_config())
    throw ConfigMismatch("model.* settings disagree with the configuration stored in " + path);
}

void store_config(const fs::path& dir, const RunConfig& cfg) {
  cfg.validate();
  write_text(dir / "config.txt", cfg.to_kv().to_text());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<TokenId> parse_ids(const std::string& text) {
  std::vector<TokenId> ids;
  std::string cleaned = text;
  for (char& ch : cleaned)
    if (ch == ',') ch = ' ';
  std::istringstream is(cleaned);
  std::string tok;
  while (is >> tok) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(tok, &used);
    } catch (const std::exception&) {
      throw ParseError("token id '" + tok + "' is not an integer", 0);
    }
    if (used != tok.size() || v < 0) throw ParseError("token id '" + tok + "' is not a non-negative integer", 0);
    ids.push_back(static_cast<TokenId>(v));
  }
  return ids;
}

std::string join_ids(std::span<const TokenId> ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(ids[i]);
  }
  return s;
}

// ---- gen-data ---------------------------------------------------------------

struct GenDataArgs {
  std::string family;
  std::optional<std::size_t> n;
  std::optional<std::size_t> episodes;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const Common& c, const GenDataArgs& a) {
  RunConfig cfg = resolve(c);
  if (a.seed) cfg.data.seed = *a.seed;
  if (a.n) cfg.data.gui_samples = *a.n;
  if (a.episodes) cfg.data.robot_episodes = *a.episodes;
  const TaskLabel only = a.family == "robot" ? TaskLabel::kRobot : TaskLabel::kGui;
  if (a.family != "mixed") (only == TaskLabel::kGui ? cfg.data.robot_episodes : cfg.data.gui_samples) = 0;
  const fs::path dir = out_dir(c, "data");
  fs::create_directories(dir);
  store_config(dir, cfg);

  DatasetManifest manifest;
  manifest.seed = cfg.data.seed;
  manifest.resample_factor = cfg.data.resample_factor;
  manifest.params = cfg.data.params;
  if (a.family == "mixed") {
    const TrainingData d = build_training_data(cfg.data);
    write_dataset(dir / "gui.jsonl", d.gui);
    write_dataset(dir / "robot.jsonl", d.robot);
    write_dataset(dir / "mixed.jsonl", d.stream);
    manifest = d.manifest;
    std::cout << "wrote " << d.gui.size() << " gui, " << d.robot.size() << " robot and " << d.stream.size()
              << " mixed samples to " << dir.string() << "\n";
  } else if (only == TaskLabel::kGui) {
    const auto gui = gen_gui_dataset(cfg.data.seed, cfg.data.gui_samples, cfg.data.params);
    write_dataset(dir / "gui.jsonl", gui);
    manifest.gui_samples = gui.size();
    std::cout << "wrote " << gui.size() << " gui samples to " << (dir / "gui.jsonl").string() << "\n";
  } else {
    const auto rob = gen_robot_dataset(cfg.data.seed, cfg.data.robot_episodes, cfg.data.params);
    write_dataset(dir / "robot.jsonl", rob);
    manifest.robot_episodes = cfg.data.robot_episodes;
    manifest.robot_samples = rob.size();
    std::cout << "wrote " << rob.size() << " robot samples (" << cfg.data.robot_episodes << " episodes) to "
              << (dir / "robot.jsonl").string() << "\n";
  }
  write_text(dir / "manifest.txt", manifest.to_text());
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::vector<std::string> data;
  std::string variant;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
};

std::vector<UnifiedSample> training_stream(const RunConfig& cfg, const std::vector<std::string>& files) {
  if (files.empty()) return build_training_data(cfg.data).stream;
  std::vector<UnifiedSample> gui, rob;
  for (const auto& f : files) {
    for (auto& s : read_dataset(f)) (s.label == TaskLabel::kGui ? gui : rob).push_back(std::move(s));
  }
  return mix_and_resample(gui, rob, cfg.data.resample_factor, derive_seed(cfg.data.seed, "mix"));
}

int cmd_train(const Common& c, const TrainArgs& a) {
  RunConfig cfg = resolve(c);
  if (!a.variant.empty()) cfg.train.variant = parse_variant(a.variant);
  if (a.steps) cfg.train.steps = *a.steps;
  if (a.seed) cfg.train.seed = *a.seed;
  const fs::path dir = out_dir(c, "train");
  fs::create_directories(dir);
  store_config(dir, cfg);

  const auto stream = training_stream(cfg, a.data);
  const ActionCodecConfig codec = make_codec(cfg.codec, cfg.model);
  TrainOptions opts;
  opts.out_dir = dir;
  const int every = std::max(1, cfg.train.steps / 20);
  opts.on_step = [&](int step, double loss, double lr) {
    if (step % every == 0 || step == cfg.train.steps)
      std::cerr << "step " << step << "/" << cfg.train.steps << " loss " << fmt(loss) << " lr " << lr << "\n";
  };
  const auto result = train(cfg.train, cfg.model, stream, codec, std::move(opts));
  std::cout << "final loss " << fmt(result.losses.back()) << "; checkpoint " << (dir / "final.ckpt").string() << "\n";
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string family = "both";
  std::optional<int> episodes;
  std::optional<std::uint64_t> seed;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  RunConfig cfg = resolve(c);
  if (a.episodes) cfg.eval.episodes = *a.episodes;
  if (a.seed) cfg.eval.seed = *a.seed;
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  check_model_keys(c, ckpt, a.checkpoint);
  const LayerHetModel model = model_from_checkpoint(ckpt);
  const ActionCodecConfig codec = read_codec_config(ckpt.config);
  const std::string variant = ckpt.config.get_string("train.variant", "unknown");
  const fs::path dir = out_dir(c, "eval");
  fs::create_directories(dir);
  store_config(dir, cfg);

  std::vector<TaskLabel> families;
  if (a.family == "both") {
    families = {TaskLabel::kGui, TaskLabel::kRobot};
  } else {
    families = {parse_label(a.family)};
  }
  std::ostringstream csv;
  csv << "variant,family,seed,success_rate,episodes\n";
  for (TaskLabel f : families) {
    ModelPolicy policy(model, codec);
    const EvalReport r = evaluate(policy, f, static_cast<std::size_t>(cfg.eval.episodes), cfg.eval.seed,
                                  cfg.data.params, cfg.eval.click_tolerance);
    write_text(dir / (std::string("report_") + label_name(f) + ".txt"), r.to_kv().to_text());
    csv << variant << ',' << label_name(f) << ',' << r.seed << ',' << fmt(r.success_rate) << ',' << r.episodes << '\n';
    std::cout << label_name(f) << ": success_rate " << fmt(r.success_rate) << " (" << r.successes << "/" << r.episodes
              << "), mean_steps " << fmt(r.mean_steps) << ", errors " << r.errors << ", seed " << r.seed << "\n";
  }
  write_text(dir / "results.csv", csv.str());
  return kExitOk;
}

// ---- analyze ----------------------------------------------------------------

struct UpdatesArgs {
  std::string base, gui, robot;
};

int cmd_analyze_updates(const Common& c, const UpdatesArgs& a) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = out_dir(c, "analysis");
  fs::create_directories(dir);
  store_config(dir, cfg);
  const Checkpoint base = load_checkpoint(a.base);
  Checkpoint gui, rob;
  if (a.gui.empty() != a.robot.empty()) throw InvalidArgument("give both --gui and --robot, or neither to run the probe");
  if (a.gui.empty()) {
    std::cerr << "probing " << cfg.analysis.probe_steps << " steps per family from " << a.base << "\n";
    auto runs = run_update_probe(base, cfg, build_training_data(cfg.data), dir);
    gui = std::move(runs.gui);
    rob = std::move(runs.robot);
  } else {
    gui = load_checkpoint(a.gui);
    rob = load_checkpoint(a.robot);
  }
  const auto report = param_update_similarity(base, gui, rob, cfg.analysis.k_cutoff);
  write_update_similarity(dir, report);
  std::cout << "probe_steps " << report.probe_steps << "\nlayer,cosine\n";
  for (const auto& l : report.layers)
    std::cout << l.layer << ',' << (l.cosine.degenerate ? std::string("degenerate") : fmt(l.cosine.value)) << '\n';
  std::cout << "recommended_k "
            << (report.recommended_k ? std::to_string(*report.recommended_k) : std::string("none (no layer below cutoff)"))
            << "\n";
  return kExitOk;
}

struct FeaturesArgs {
  std::string gui_model, robot_model;
  std::string layers;
  std::optional<int> samples;
};

int cmd_analyze_features(const Common& c, const FeaturesArgs& a) {
  RunConfig cfg = resolve(c);
  if (!a.layers.empty()) cfg.analysis.feature_layers = parse_int_list(a.layers);
  if (a.samples) cfg.analysis.feature_samples = *a.samples;
  const fs::path dir = out_dir(c, "analysis");
  fs::create_directories(dir);
  store_config(dir, cfg);
  const std::string rob_path = a.robot_model.empty() ? a.gui_model : a.robot_model;
  const Checkpoint cg = load_checkpoint(a.gui_model), cr = load_checkpoint(rob_path);
  check_model_keys(c, cg, a.gui_model);
  check_model_keys(c, cr, rob_path);
  const LayerHetModel mg = model_from_checkpoint(cg);
  const LayerHetModel mr = model_from_checkpoint(cr);
  std::vector<int> layers = cfg.analysis.feature_layers;
  if (layers.empty())
    for (int i = 0; i < mg.config().n_layers; ++i) layers.push_back(i);
  const auto n = static_cast<std::size_t>(cfg.analysis.feature_samples);
  DataSettings ds = cfg.data;
  ds.gui_samples = n;
  ds.robot_episodes = n;
  const TrainingData d = build_training_data(ds);
  const std::span<const UnifiedSample> gui(d.gui.data(), std::min(n, d.gui.size()));
  const std::span<const UnifiedSample> rob(d.robot.data(), std::min(n, d.robot.size()));
  const auto mats = feature_similarity(mg, mr, gui, rob, layers);
  write_feature_similarity(dir, mats);
  std::cout << "pooling mean over positions\nlayer,mean_cosine\n";
  for (const auto& m : mats) std::cout << m.layer << ',' << fmt(m.mean) << '\n';
  return kExitOk;
}

// ---- codec ------------------------------------------------------------------

struct CodecArgs {
  std::string value;
  std::string table;
};

ActionCodecConfig codec_from(const Common& c, const CodecArgs& a) {
  const TokenId text = default_vocab().size();
  if (!a.table.empty()) return load_table(a.table, std::nullopt, text);
  const RunConfig cfg = resolve(c);
  return make_codec(cfg.codec, cfg.model);
}

int cmd_codec(const Common& c, const std::string& verb, const CodecArgs& a) {
  if (verb == "encode-embodied") {
    EmbodiedAction act;
    std::vector<double> v;
    std::string cleaned = a.value;
    for (char& ch : cleaned)
      if (ch == ',') ch = ' ';
    std::istringstream is(cleaned);
    std::string tok;
    while (is >> tok) {
      std::size_t used = 0;
      double x = 0;
      try {
        x = std::stod(tok, &used);
      } catch (const std::exception&) {
        throw ParseError("'" + tok + "' is not a number", 0);
      }
      if (used != tok.size()) throw ParseError("'" + tok + "' is not a number", 0);
      v.push_back(x);
    }
    if (v.size() != kEmbodiedDims)
      throw InvalidArgument("an embodied action has " + std::to_string(kEmbodiedDims) + " components, got " +
                            std::to_string(v.size()));
    for (std::size_t i = 0; i < kEmbodiedDims; ++i) act.v[i] = v[i];
    const auto ids = encode_embodied(act, codec_from(c, a));
    std::cout << join_ids(ids) << "\n";
  } else if (verb == "decode-embodied") {
    const auto ids = parse_ids(a.value);
    const auto act = decode_embodied(ids, codec_from(c, a));
    std::string out;
    for (std::size_t i = 0; i < kEmbodiedDims; ++i) out += (i ? "," : "") + fmt(act.v[i]);
    std::cout << out << "\n";
  } else if (verb == "encode-gui") {
    std::cout << join_ids(encode_gui(parse_gui(a.value))) << "\n";
  } else {
    std::cout << format_gui(decode_gui(parse_ids(a.value))) << "\n";
  }
  return kExitOk;
}

// ---- ablation ---------------------------------------------------------------

struct AblationArgs {
  std::string seeds;
};

int cmd_ablation(const Common& c, const AblationArgs& a) {
  RunConfig cfg = resolve(c);
  if (!a.seeds.empty()) cfg.ablation.seeds = parse_u64_list(a.seeds);
  const fs::path dir = out_dir(c, "ablation");
  fs::create_directories(dir);
  store_config(dir, cfg);
  const auto result = run_ablation(cfg, dir, [](const std::string& line) { std::cerr << line << "\n"; });
  std::cout << ablation_summary_csv(result);
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigMismatch*>(&e) || dynamic_cast<const ShapeError*>(&e)) return kExitMismatch;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return kExitIo;
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"omni: layer-heterogeneous toy agent (data, training, evaluation, diagnostics)"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1);

  Common common;
  app.add_option("--config", common.config_path, "Flat key=value config file")->check(CLI::ExistingFile);
  app.add_option("--set", common.sets, "Override one config key, e.g. --set model.n_layers=6")->take_all();
  app.add_option("--out", common.out, "Output directory (default: $OMNI_RUN_DIR/<command>)");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset and manifest");
  gen_cmd->add_option("--family", gen.family, "gui, robot or mixed")
      ->required()
      ->check(CLI::IsMember({"gui", "robot", "mixed"}));
  gen_cmd->add_option("--n", gen.n, "GUI samples");
  gen_cmd->add_option("--episodes", gen.episodes, "Robot expert episodes (one sample per step)");
  gen_cmd->add_option("--seed", gen.seed, "Data seed");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train one variant and write checkpoints and loss.csv");
  train_cmd->add_option("--data", tr.data, "JSONL dataset files (default: generate from data.*)");
  train_cmd->add_option("--variant", tr.variant, "gui_only, ea_only, mixed_shared, layer_het_hard or layer_het");
  train_cmd->add_option("--steps", tr.steps, "Training steps");
  train_cmd->add_option("--seed", tr.seed, "Training seed (init and batch order)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Closed-loop success rate of a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--family", ev.family, "gui, robot or both")->check(CLI::IsMember({"gui", "robot", "both"}));
  eval_cmd->add_option("--episodes", ev.episodes, "Episodes per family");
  eval_cmd->add_option("--seed", ev.seed, "Evaluation seed");

  auto* analyze_cmd = app.add_subcommand("analyze", "Interference diagnostics");
  analyze_cmd->require_subcommand(1);
  UpdatesArgs up;
  auto* updates_cmd = analyze_cmd->add_subcommand("updates", "Per-tensor and per-layer update cosines");
  updates_cmd->add_option("--base", up.base, "Base checkpoint")->required();
  updates_cmd->add_option("--gui", up.gui, "Checkpoint after GUI-only steps (omit with --robot to run the probe)");
  updates_cmd->add_option("--robot", up.robot, "Checkpoint after robot-only steps");
  FeaturesArgs fe;
  auto* features_cmd = analyze_cmd->add_subcommand("features", "Pairwise hidden-feature cosines per layer");
  features_cmd->add_option("--gui-model", fe.gui_model, "Checkpoint run on GUI samples")->required();
  features_cmd->add_option("--robot-model", fe.robot_model, "Checkpoint run on robot samples (default: --gui-model)");
  features_cmd->add_option("--layers", fe.layers, "Comma-separated block indices (default: all)");
  features_cmd->add_option("--samples", fe.samples, "Samples per family");

  auto* codec_cmd = app.add_subcommand("codec", "Encode or decode a single action");
  codec_cmd->require_subcommand(1);
  CodecArgs ca;
  for (const char* verb : {"encode-embodied", "decode-embodied", "encode-gui", "decode-gui"}) {
    auto* sub = codec_cmd->add_subcommand(verb);
    sub->add_option("value", ca.value, "Action text or token ids")->required();
    sub->add_option("--table", ca.table, "bin<TAB>token table file")->check(CLI::ExistingFile);
  }

  AblationArgs ab;
  auto* ablation_cmd = app.add_subcommand("ablation", "Train and evaluate all five variants per seed");
  ablation_cmd->add_option("--seeds", ab.seeds, "Comma-separated seeds (default: ablation.seeds)");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();
  analyze_cmd->fallthrough();
  for (auto* sub : analyze_cmd->get_subcommands({})) sub->fallthrough();
  for (auto* sub : codec_cmd->get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(common, gen);
    if (*train_cmd) return cmd_train(common, tr);
    if (*eval_cmd) return cmd_eval(common, ev);
    if (*updates_cmd) return cmd_analyze_updates(common, up);
    if (*features_cmd) return cmd_analyze_features(common, fe);
    if (*ablation_cmd) return cmd_ablation(common, ab);
    for (auto* sub : codec_cmd->get_subcommands({}))
      if (*sub) return cmd_codec(common, sub->get_name(), ca);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitUsage;
}
