#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "omni/error.hpp"
#include "omni/experiments.hpp"
#include "support/small_model.hpp"

using namespace omni;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.model = testing::small_config();
  c.codec.k_bins = 32;
  c.train.steps = 6;
  c.train.batch_size = 4;
  c.train.learning_rate = 1e-3;
  c.data.seed = 1;
  c.data.gui_samples = 16;
  c.data.robot_episodes = 4;
  c.eval.episodes = 4;
  c.ablation.seeds = {0, 1, 2};
  return c;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("training data: deterministic and mixed in the configured proportion") {
  const RunConfig c = tiny_config();
  const auto a = build_training_data(c.data), b = build_training_data(c.data);
  CHECK(a.stream.size() == a.gui.size() + 5 * a.robot.size());
  CHECK(a.manifest.robot_samples == a.robot.size());
  REQUIRE(a.stream.size() == b.stream.size());
  for (std::size_t i = 0; i < a.stream.size(); ++i) CHECK(sample_to_json_line(a.stream[i]) == sample_to_json_line(b.stream[i]));
}

TEST_CASE("ablation: row shape, per-variant averages and determinism") {
  const RunConfig c = tiny_config();
  const auto r = run_ablation(c);
  const auto rows = parse_csv(ablation_results_csv(r));
  REQUIRE(!rows.empty());
  CHECK(rows[0] == std::vector<std::string>{"variant", "family", "seed", "success_rate", "episodes", "status"});

  std::map<std::pair<std::string, std::string>, int> count;
  for (std::size_t i = 1; i < rows.size(); ++i) ++count[{rows[i][0], rows[i][1]}];
  // A family a variant cannot act in has no row.
  CHECK_FALSE(count.contains({"gui_only", "robot"}));
  CHECK_FALSE(count.contains({"ea_only", "gui"}));
  // Three seeds give three rows per (variant, family).
  CHECK(count.size() == 8);
  for (const auto& [key, n] : count) CHECK(n == 3);

  for (const auto& s : r.summary) {
    double sum = 0.0;
    int n = 0;
    for (auto fam : {s.gui, s.robot})
      if (fam) sum += *fam, ++n;
    REQUIRE(s.avg.has_value());
    CHECK(*s.avg == doctest::Approx(sum / n).epsilon(1e-12));
    CHECK(s.failed_cells == 0);
  }
  const auto* het = &r.summary.back();
  CHECK(het->variant == Variant::kLayerHet);
  double gui = 0.0;
  for (const auto& cell : r.cells)
    if (cell.variant == Variant::kLayerHet && cell.family == TaskLabel::kGui) gui += cell.report->success_rate;
  CHECK(*het->gui == doctest::Approx(gui / 3.0).epsilon(1e-12));

  CHECK(ablation_results_csv(run_ablation(c)) == ablation_results_csv(r));
}

TEST_CASE("ablation: a failing variant is recorded and the sweep continues") {
  RunConfig c = tiny_config();
  c.data.robot_episodes = 0;  // ea_only has nothing to train on
  c.ablation.seeds = {0};
  const auto r = run_ablation(c);
  bool saw_failure = false;
  for (const auto& cell : r.cells) {
    if (cell.variant == Variant::kEaOnly) {
      saw_failure = true;
      CHECK_FALSE(cell.report.has_value());
      CHECK(cell.error.find("no training samples") != std::string::npos);
    } else {
      CHECK(cell.report.has_value());
    }
  }
  CHECK(saw_failure);
  const std::string results = ablation_results_csv(r);
  CHECK(results.find("ea_only,robot,0,-,0,incomplete") != std::string::npos);
  const std::string summary = ablation_summary_csv(r);
  CHECK(summary.find("ea_only,-,incomplete,incomplete,incomplete (1 failed cells)") != std::string::npos);
  CHECK(summary.find("gui_only,") != std::string::npos);
  CHECK_FALSE(r.seed_average(Variant::kEaOnly, 0).has_value());
  CHECK(r.seed_average(Variant::kLayerHet, 0).has_value());
}

TEST_CASE("ablation writes its CSVs under the output directory") {
  RunConfig c = tiny_config();
  c.ablation.seeds = {4};
  const auto dir = std::filesystem::temp_directory_path() / "omni_test_ablation";
  std::filesystem::remove_all(dir);
  run_ablation(c, dir);
  for (const char* f : {"results.csv", "summary.csv", "summary_by_seed.csv"}) CHECK(std::filesystem::exists(dir / f));
  CHECK(std::filesystem::exists(dir / "seed_4" / "layer_het" / "final.ckpt"));
  std::ifstream in(dir / "summary_by_seed.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "variant,seed,avg");
}

TEST_CASE("update probe: both runs start from the base and record the probe length") {
  RunConfig c = tiny_config();
  c.analysis.probe_steps = 3;
  const auto base_model = LayerHetModel::init(c.model, 5);
  const Checkpoint base = make_checkpoint(base_model);
  const auto runs = run_update_probe(base, c, build_training_data(c.data));
  CHECK(runs.gui.step == 3);
  CHECK(runs.robot.step == 3);
  CHECK(runs.gui.base_hash == parameter_hash(base.params));
  CHECK(runs.robot.base_hash == parameter_hash(base.params));
  CHECK(parameter_hash(runs.gui.params) != parameter_hash(runs.robot.params));
}
