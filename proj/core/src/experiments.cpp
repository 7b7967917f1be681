#include "omni/experiments.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "omni/error.hpp"
#include "omni/rng.hpp"

namespace omni {

TrainingData build_training_data(const DataSettings& s) {
  TrainingData d;
  // A zero count leaves that family out of the stream.
  if (s.gui_samples > 0) d.gui = gen_gui_dataset(s.seed, s.gui_samples, s.params);
  if (s.robot_episodes > 0) d.robot = gen_robot_dataset(s.seed, s.robot_episodes, s.params);
  d.stream = mix_and_resample(d.gui, d.robot, s.resample_factor, derive_seed(s.seed, "mix"));
  d.manifest.seed = s.seed;
  d.manifest.gui_samples = d.gui.size();
  d.manifest.robot_episodes = s.robot_episodes;
  d.manifest.robot_samples = d.robot.size();
  d.manifest.resample_factor = s.resample_factor;
  d.manifest.params = s.params;
  return d;
}

namespace {

Variant variant_for_topology(Topology t) {
  switch (t) {
    case Topology::kDense: return Variant::kMixedShared;
    case Topology::kHard: return Variant::kLayerHetHard;
    case Topology::kLayerHet: break;
  }
  return Variant::kLayerHet;
}

// Checkpoints written by train() carry their codec; bare ones fall back to
// the configured codec.
ActionCodecConfig codec_for(const Checkpoint& c, const RunConfig& cfg) {
  if (c.config.contains("codec.table")) return read_codec_config(c.config);
  return make_codec(cfg.codec, c.model_config());
}

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

ProbeRuns run_update_probe(const Checkpoint& base, const RunConfig& cfg, const TrainingData& data,
                           const std::optional<std::filesystem::path>& out_dir) {
  const LayerHetModel base_model = model_from_checkpoint(base);
  const ActionCodecConfig codec = codec_for(base, cfg);
  TrainConfig tc = cfg.train;
  tc.steps = cfg.analysis.probe_steps;
  tc.variant = variant_for_topology(base_model.config().topology);
  tc.checkpoint_every = 0;

  ProbeRuns runs;
  runs.base = base;
  for (TaskLabel family : {TaskLabel::kGui, TaskLabel::kRobot}) {
    TrainOptions opts;
    opts.initial = base_model.clone();
    if (out_dir) opts.out_dir = *out_dir / (std::string("probe_") + label_name(family));
    const auto& samples = family == TaskLabel::kGui ? data.gui : data.robot;
    auto result = train(tc, base_model.config(), samples, codec, std::move(opts));
    (family == TaskLabel::kGui ? runs.gui : runs.robot) = std::move(result.checkpoint);
  }
  return runs;
}

std::optional<double> AblationResult::seed_average(Variant v, std::uint64_t seed) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& c : cells) {
    if (c.variant != v || c.seed != seed) continue;
    if (!c.report) return std::nullopt;
    sum += c.report->success_rate;
    ++n;
  }
  if (n != 2) return std::nullopt;
  return sum / 2.0;
}

AblationResult run_ablation(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir,
                            const Logger& log) {
  cfg.validate();
  const TrainingData data = build_training_data(cfg.data);
  const ActionCodecConfig codec = make_codec(cfg.codec, cfg.model);
  AblationResult result;

  for (std::uint64_t seed : cfg.ablation.seeds) {
    for (Variant v : kAllVariants) {
      TrainConfig tc = cfg.train;
      tc.variant = v;
      tc.seed = seed;
      TrainOptions opts;
      if (out_dir) opts.out_dir = *out_dir / ("seed_" + std::to_string(seed)) / variant_name(v);
      std::optional<LayerHetModel> model;
      std::string error;
      try {
        if (log) log(std::string("train ") + variant_name(v) + " seed " + std::to_string(seed));
        model = train(tc, cfg.model, data.stream, codec, std::move(opts)).model;
      } catch (const Error& e) {
        error = e.what();
        if (log) log(std::string("  failed: ") + error);
      }
      for (TaskLabel family : {TaskLabel::kGui, TaskLabel::kRobot}) {
        if (!variant_trains(v, family)) continue;
        AblationCell cell{v, family, seed, std::nullopt, error};
        if (model) {
          ModelPolicy policy(*model, codec);
          cell.report = evaluate(policy, family, static_cast<std::size_t>(cfg.eval.episodes), cfg.eval.seed,
                                 cfg.data.params, cfg.eval.click_tolerance);
          if (log) log(std::string("  ") + label_name(family) + " success " + fixed6(cell.report->success_rate));
        }
        result.cells.push_back(std::move(cell));
      }
    }
  }

  for (Variant v : kAllVariants) {
    AblationSummary s;
    s.variant = v;
    double fam_sum = 0.0;
    int fam_n = 0;
    for (TaskLabel family : {TaskLabel::kGui, TaskLabel::kRobot}) {
      if (!variant_trains(v, family)) continue;
      double sum = 0.0;
      int n = 0;
      for (const auto& c : result.cells) {
        if (c.variant != v || c.family != family) continue;
        if (c.report) {
          sum += c.report->success_rate;
          ++n;
        } else {
          ++s.failed_cells;
        }
      }
      if (n == 0) continue;
      const double mean = sum / n;
      (family == TaskLabel::kGui ? s.gui : s.robot) = mean;
      fam_sum += mean;
      ++fam_n;
    }
    if (fam_n > 0) s.avg = fam_sum / fam_n;
    result.summary.push_back(s);
  }

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    auto write = [&](const char* name, const std::string& text) {
      std::ofstream out(*out_dir / name, std::ios::trunc);
      if (!out) throw IoError("cannot write " + (*out_dir / name).string());
      out << text;
    };
    write("results.csv", ablation_results_csv(result));
    write("summary.csv", ablation_summary_csv(result));
    write("summary_by_seed.csv", ablation_seed_csv(result, cfg.ablation.seeds));
  }
  return result;
}

std::string ablation_results_csv(const AblationResult& r) {
  std::ostringstream os;
  os << "variant,family,seed,success_rate,episodes,status\n";
  for (const auto& c : r.cells) {
    os << variant_name(c.variant) << ',' << label_name(c.family) << ',' << c.seed << ',';
    if (c.report) {
      os << fixed6(c.report->success_rate) << ',' << c.report->episodes << ",ok\n";
    } else {
      os << "-,0,incomplete\n";
    }
  }
  return os.str();
}

std::string ablation_summary_csv(const AblationResult& r) {
  std::ostringstream os;
  os << "variant,gui,robot,avg,status\n";
  for (const auto& s : r.summary) {
    auto cell = [&](const std::optional<double>& v, TaskLabel family) {
      if (!variant_trains(s.variant, family)) return std::string("-");
      return v ? fixed6(*v) : std::string("incomplete");
    };
    os << variant_name(s.variant) << ',' << cell(s.gui, TaskLabel::kGui) << ',' << cell(s.robot, TaskLabel::kRobot)
       << ',' << (s.avg ? fixed6(*s.avg) : std::string("incomplete")) << ','
       << (s.failed_cells == 0 ? std::string("complete") : "incomplete (" + std::to_string(s.failed_cells) + " failed cells)")
       << '\n';
  }
  return os.str();
}

std::string ablation_seed_csv(const AblationResult& r, const std::vector<std::uint64_t>& seeds) {
  std::ostringstream os;
  os << "variant,seed,avg\n";
  for (Variant v : kAllVariants) {
    if (!variant_trains(v, TaskLabel::kGui) || !variant_trains(v, TaskLabel::kRobot)) continue;
    for (auto seed : seeds) {
      const auto a = r.seed_average(v, seed);
      os << variant_name(v) << ',' << seed << ',' << (a ? fixed6(*a) : std::string("incomplete")) << '\n';
    }
  }
  return os.str();
}

}  // namespace omni
