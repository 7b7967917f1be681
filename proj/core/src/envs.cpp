#include "omni/envs.hpp"

#include <cassert>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "omni/error.hpp"

namespace omni {

GuiEnv::GuiEnv(std::uint64_t scene_seed, const GenParams& params, double click_tolerance)
    : seed_(scene_seed), params_(params), tolerance_(click_tolerance), scene_(sample_gui_scene(scene_seed, params.grid)) {}

UnifiedSample GuiEnv::observation() const { return gui_sample(scene_, seed_, params_); }

StepResult GuiEnv::step(const Action& action) {
  if (done_) throw InvalidArgument("GUI episode already finished");
  done_ = true;
  StepResult r;
  r.image = render_gui(scene_, params_.image_side);
  r.done = true;
  const auto* a = std::get_if<GuiAction>(&action);
  if (!a) {
    r.failure = "embodied action sent to the GUI environment";
    return r;
  }
  if (a->kind != GuiVerb::kClick && a->kind != GuiVerb::kTap) {
    r.failure = std::string("verb ") + verb_name(a->kind) + " cannot select a cell";
    return r;
  }
  const double d = std::hypot(*a->x - scene_.target_x(), *a->y - scene_.target_y());
  r.success = d <= tolerance_;
  if (!r.success) r.failure = "click missed the target";
  return r;
}

RobotEnv::RobotEnv(std::uint64_t scene_seed, const GenParams& params)
    : seed_(scene_seed), params_(params), scene_(sample_robot_scene(scene_seed, params.dynamics)) {}

UnifiedSample RobotEnv::observation() const { return robot_sample(scene_, seed_, params_); }

StepResult RobotEnv::step(const Action& action) {
  if (done_) throw InvalidArgument("robot episode already finished");
  StepResult r;
  const auto* a = std::get_if<EmbodiedAction>(&action);
  if (!a) {
    r.failure = "GUI action sent to the robot environment";
  } else {
    try {
      a->validate();
    } catch (const RangeError& e) {
      r.failure = std::string("out-of-range action: ") + e.what();
    }
  }
  ++steps_;
  if (!r.failure.empty()) {
    done_ = r.done = true;
    r.image = render_robot(scene_, params_.image_side);
    return r;
  }
  const RobotTransition t = robot_transition(scene_, *a, params_.dynamics);
  scene_ = t.next;
  r.image = render_robot(scene_, params_.image_side);
  r.done = t.done;
  r.success = t.success;
  if (t.done && !t.success) r.failure = "gripper opened away from the goal";
  if (!r.done && steps_ >= params_.dynamics.max_steps) {
    r.done = true;
    r.failure = "step cap reached";
  }
  done_ = r.done;
  return r;
}

Action ModelPolicy::act(const UnifiedSample& observation) { return generate_action(model_, observation, codec_); }

Action RandomPolicy::act(const UnifiedSample& observation) {
  if (observation.label == TaskLabel::kGui) return GuiAction::click(rng_.uniform(), rng_.uniform());
  EmbodiedAction a;
  for (auto& c : a.v) c = rng_.uniform(-1.0, 1.0);
  return a;
}

KeyValues EvalReport::to_kv() const {
  KeyValues kv;
  kv.set("family", label_name(family));
  kv.set("episodes", static_cast<std::uint64_t>(episodes));
  kv.set("successes", static_cast<std::uint64_t>(successes));
  kv.set("success_rate", success_rate);
  kv.set("mean_steps", mean_steps);
  kv.set("seed", seed);
  kv.set("errors", static_cast<std::uint64_t>(errors));
  return kv;
}

EvalReport EvalReport::from_kv(const KeyValues& kv) {
  EvalReport r;
  r.family = parse_label(kv.require("family"));
  r.episodes = kv.get_u64("episodes", 0);
  r.successes = kv.get_u64("successes", 0);
  r.success_rate = kv.get_double("success_rate", 0.0);
  r.mean_steps = kv.get_double("mean_steps", 0.0);
  r.seed = kv.get_u64("seed", 0);
  r.errors = kv.get_u64("errors", 0);
  return r;
}

EvalReport evaluate(Policy& policy, TaskLabel family, std::size_t n_episodes, std::uint64_t seed, const GenParams& params,
                    double click_tolerance) {
  if (n_episodes < 1) throw InvalidArgument("evaluate: n_episodes must be positive");
  EvalReport report;
  report.family = family;
  report.episodes = n_episodes;
  report.seed = seed;
  std::uint64_t total_steps = 0;
  for (std::size_t i = 0; i < n_episodes; ++i) {
    const std::uint64_t ss = scene_seed(seed, family, i, SeedDomain::kEval);
    if (!is_eval_seed(ss)) throw Error("evaluation drew a training-domain scene seed");
    bool success = false;
    int steps = 0;
    if (family == TaskLabel::kGui) {
      GuiEnv env(ss, params, click_tolerance);
      steps = 1;
      try {
        success = env.step(policy.act(env.observation())).success;
      } catch (const Error&) {
        ++report.errors;
      }
    } else {
      RobotEnv env(ss, params);
      try {
        while (!env.done()) {
          const StepResult r = env.step(policy.act(env.observation()));
          success = r.success;
        }
      } catch (const Error&) {
        ++report.errors;
        success = false;
      }
      steps = env.steps();
    }
    total_steps += static_cast<std::uint64_t>(steps);
    if (success) ++report.successes;
  }
  report.success_rate = static_cast<double>(report.successes) / static_cast<double>(report.episodes);
  report.mean_steps = static_cast<double>(total_steps) / static_cast<double>(report.episodes);
  return report;
}

void append_results_csv(const std::filesystem::path& path, const std::string& variant, const EvalReport& report) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  if (fresh) out << "variant,family,seed,success_rate,episodes\n";
  char rate[32];
  std::snprintf(rate, sizeof rate, "%.6f", report.success_rate);
  out << variant << ',' << label_name(report.family) << ',' << report.seed << ',' << rate << ',' << report.episodes << '\n';
}

}  // namespace omni
