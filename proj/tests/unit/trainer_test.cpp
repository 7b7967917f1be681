#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "omni/error.hpp"
#include "omni/trainer.hpp"
#include "support/oracles.hpp"
#include "support/small_model.hpp"

using namespace omni;

namespace {

TrainConfig quick_config(Variant v, int steps) {
  TrainConfig c;
  c.variant = v;
  c.steps = steps;
  c.batch_size = 2;
  c.learning_rate = 3e-3;
  c.seed = 4;
  return c;
}

std::vector<UnifiedSample> mixed_stream() {
  auto s = testing::gui_samples(6);
  const auto r = testing::robot_samples(6);
  s.insert(s.end(), r.begin(), r.end());
  return s;
}

bool same_params(const LayerHetModel& a, const LayerHetModel& b) {
  const auto pa = a.named_parameters(), pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto x = pa[i].tensor.data(), y = pb[i].tensor.data();
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("schedule: warmup ramp, peak and cosine tail") {
  const double lr = 1e-3;
  const int steps = 1000;
  const int w = warmup_steps(steps, 0.03);
  CHECK(w == 30);
  CHECK(warmup_steps(10, 0.0) == 1);
  CHECK(learning_rate_at(0, steps, 0.03, lr) == 0.0);
  CHECK(std::abs(learning_rate_at(1, steps, 0.03, lr) - lr / w) <= 1e-12);
  CHECK(std::abs(learning_rate_at(w, steps, 0.03, lr) - lr) <= 1e-12);
  CHECK(std::abs(learning_rate_at(steps, steps, 0.03, lr)) <= 1e-9);
  const int mid = w + (steps - w) / 2;
  CHECK(std::abs(learning_rate_at(mid, steps, 0.03, lr) - lr * 0.5 * (1 + std::cos(std::numbers::pi * (mid - w) / (steps - w)))) <=
        1e-12);
  double prev = lr;
  for (int s = w; s <= steps; ++s) {
    const double cur = learning_rate_at(s, steps, 0.03, lr);
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }
}

TEST_CASE("AdamW matches a double-precision reference over three steps") {
  Tensor mat({2, 5}, {0.5f, -0.25f, 1.0f, 0.0f, 2.0f, -1.5f, 0.75f, 0.1f, -0.2f, 0.3f}, true);
  Tensor vec({3}, {1.0f, -1.0f, 0.25f}, true);
  std::vector<double> ref_w;
  for (float v : mat.data()) ref_w.push_back(v);
  for (float v : vec.data()) ref_w.push_back(v);
  std::vector<double> m(13, 0.0), v(13, 0.0);
  const AdamWConfig cfg{0.9, 0.999, 1e-8, 0.1};
  AdamW opt({{"mat", mat}, {"vec", vec}}, cfg);
  const double lrs[] = {1e-2, 5e-3, 2e-2};
  Rng rng(8);
  for (int step = 1; step <= 3; ++step) {
    const auto gm = oracle::random_vector(rng, 10);
    const auto gv = oracle::random_vector(rng, 3);
    mat.zero_grad();
    vec.zero_grad();
    Tape tape;
    const Tensor loss = add(tape, sum(tape, mul(tape, mat, Tensor({2, 5}, gm))), sum(tape, mul(tape, vec, Tensor({3}, gv))));
    tape.backward(loss);
    opt.step(lrs[step - 1]);
    const double lr = lrs[step - 1];
    for (std::size_t i = 0; i < 13; ++i) {
      const double g = i < 10 ? gm[i] : gv[i - 10];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, step)), vh = v[i] / (1 - std::pow(0.999, step));
      const double decay = i < 10 ? 1 - lr * 0.1 : 1.0;
      ref_w[i] = ref_w[i] * decay - lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (std::size_t i = 0; i < 10; ++i) CHECK(std::abs(mat.data()[i] - ref_w[i]) <= 1e-6);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(vec.data()[i] - ref_w[10 + i]) <= 1e-6);
  for (const auto& slot : opt.state()) CHECK(slot.t == 3);
}

TEST_CASE("AdamW skips parameters the last backward did not reach") {
  Tensor used({2, 2}, {1, 2, 3, 4}, true);
  Tensor idle({2, 2}, {1, 2, 3, 4}, true);
  AdamW opt({{"used", used}, {"idle", idle}}, AdamWConfig{0.9, 0.999, 1e-8, 0.5});
  for (int i = 0; i < 5; ++i) {
    used.zero_grad();
    idle.zero_grad();
    Tape tape;
    tape.backward(sum(tape, used));
    opt.step(0.1);
  }
  CHECK(std::vector<float>(idle.data().begin(), idle.data().end()) == std::vector<float>{1, 2, 3, 4});
  CHECK(opt.state()[1].t == 0);
  CHECK(opt.state()[0].t == 5);
  auto state = opt.state();
  state[0].m.pop_back();
  CHECK_THROWS_AS(opt.load_state(state), CheckpointShapeError);
}

TEST_CASE("batch scheduler: homogeneous batches, stream order first, deterministic") {
  const auto stream = mixed_stream();
  BatchScheduler a(stream, 3, 1), b(stream, 3, 1);
  std::size_t gui = 0, rob = 0;
  for (int i = 0; i < 40; ++i) {
    const auto batch = a.next();
    CHECK(batch == b.next());
    REQUIRE(batch.size() == 3);
    for (auto idx : batch) CHECK(stream[idx].label == stream[batch[0]].label);
    (stream[batch[0]].label == TaskLabel::kGui ? gui : rob) += 1;
  }
  CHECK(gui > 0);
  CHECK(rob > 0);
  BatchScheduler c(stream, 3, 1);
  CHECK(c.next() == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(BatchScheduler(stream, 0, 1), InvalidArgument);
}

TEST_CASE("batch_loss equals the token-weighted cross-entropy of the forward logits") {
  const auto m = LayerHetModel::init(testing::small_config(), 3);
  const auto samples = testing::gui_samples(2);
  const Batch batch = collate(samples, testing::small_codec());
  Tape tape;
  tape.set_recording(false);
  const double got = batch_loss(tape, m, batch).item();

  double total = 0.0;
  std::size_t count = 0;
  const std::size_t np = static_cast<std::size_t>(m.config().n_patches());
  const std::size_t vocab = static_cast<std::size_t>(m.config().vocab_size);
  for (const auto& e : batch.samples) {
    const Tensor logits = forward(tape, m, e.input);
    for (std::size_t p = 0; p < e.input.tokens.size(); ++p) {
      if (!e.loss_mask[p]) continue;
      const std::int32_t target[] = {e.input.tokens[p]};
      const std::uint8_t on[] = {1};
      total += oracle::cross_entropy(logits.data().subspan((np + p - 1) * vocab, vocab), 1, vocab, target, on);
      ++count;
    }
  }
  CHECK(std::abs(got - total / static_cast<double>(count)) <= 1e-5);
}

TEST_CASE("duplicating a batch leaves the gradient unchanged") {
  auto m = LayerHetModel::init(testing::small_config(), 3);
  const auto one = testing::robot_samples(1);
  std::vector<UnifiedSample> two = {one[0], one[0]};
  auto grads = [&](const std::vector<UnifiedSample>& s) {
    m.zero_grad();
    Tape tape;
    tape.backward(batch_loss(tape, m, collate(s, testing::small_codec())));
    return std::vector<float>(m.head_rob.proj.grad().begin(), m.head_rob.proj.grad().end());
  };
  const auto g1 = grads(one), g2 = grads(two);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(std::abs(g1[i] - g2[i]) <= 1e-6 + 1e-5 * std::abs(g1[i]));
}

TEST_CASE("learning rate zero leaves every parameter unchanged") {
  auto cfg = quick_config(Variant::kLayerHet, 5);
  cfg.learning_rate = 0.0;
  const auto stream = mixed_stream();
  const auto r = train(cfg, testing::small_config(), stream, testing::small_codec());
  CHECK(same_params(r.model, LayerHetModel::init(testing::small_config(), cfg.seed)));
  CHECK(r.losses.size() == 5);
}

TEST_CASE("training is deterministic to the byte") {
  const auto stream = mixed_stream();
  const auto cfg = quick_config(Variant::kMixedShared, 6);
  const auto a = train(cfg, testing::small_config(), stream, testing::small_codec());
  const auto b = train(cfg, testing::small_config(), stream, testing::small_codec());
  CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));
  CHECK(a.losses == b.losses);
  CHECK(a.checkpoint.step == 6);
  CHECK(a.checkpoint.base_hash == parameter_hash(LayerHetModel::init(model_config_for(cfg.variant, testing::small_config()), cfg.seed)));
}

TEST_CASE("overfitting one robot sample recovers its action") {
  const auto sample = testing::robot_samples(1);
  TrainConfig cfg = quick_config(Variant::kLayerHet, 200);
  cfg.batch_size = 1;
  cfg.learning_rate = 1e-2;
  cfg.weight_decay = 0.0;
  const auto r = train(cfg, testing::small_config(), sample, testing::small_codec());
  INFO("final loss ", r.losses.back());
  CHECK(r.losses.back() < 0.05);
  const auto& codec = testing::small_codec();
  const auto want = decode_embodied(encode_embodied(std::get<EmbodiedAction>(sample[0].action), codec), codec);
  CHECK(std::get<EmbodiedAction>(generate_action(r.model, sample[0], codec)) == want);
}

TEST_CASE("variants filter the stream and pick their topology") {
  CHECK(variant_trains(Variant::kGuiOnly, TaskLabel::kGui));
  CHECK_FALSE(variant_trains(Variant::kGuiOnly, TaskLabel::kRobot));
  CHECK_FALSE(variant_trains(Variant::kEaOnly, TaskLabel::kGui));
  CHECK(model_config_for(Variant::kLayerHetHard, testing::small_config()).share_threshold == 0);
  CHECK(model_config_for(Variant::kMixedShared, testing::small_config()).share_threshold == 4);
  for (Variant v : kAllVariants) CHECK(parse_variant(variant_name(v)) == v);
  CHECK_THROWS_AS(parse_variant("both"), InvalidArgument);

  // gui_only on a robot-only stream has nothing to learn from.
  CHECK_THROWS_AS(train(quick_config(Variant::kGuiOnly, 2), testing::small_config(), testing::robot_samples(4),
                        testing::small_codec()),
                  InvalidArgument);
}

TEST_CASE("routing isolation holds through AdamW with weight decay") {
  const auto cfg = quick_config(Variant::kLayerHet, 8);
  const auto r = train(cfg, testing::small_config(), testing::gui_samples(8), testing::small_codec());
  const auto init = LayerHetModel::init(testing::small_config(), cfg.seed);
  const auto after = r.model.named_parameters(), before = init.named_parameters();
  std::size_t rob = 0, changed_shared = 0, shared = 0;
  for (std::size_t i = 0; i < after.size(); ++i) {
    const auto x = after[i].tensor.data(), y = before[i].tensor.data();
    const bool same = std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0;
    if (after[i].name.find(".rob.") != std::string::npos || after[i].name.rfind("head.rob", 0) == 0) {
      ++rob;
      CHECK_MESSAGE(same, after[i].name);
    }
    if (after[i].name.find(".shared.") != std::string::npos) {
      ++shared;
      changed_shared += !same;
    }
  }
  CHECK(rob > 0);
  CHECK(changed_shared == shared);
}

TEST_CASE("training artifacts: loss log, periodic and final checkpoints") {
  const auto dir = std::filesystem::temp_directory_path() / "omni_test_train";
  std::filesystem::remove_all(dir);
  auto cfg = quick_config(Variant::kLayerHet, 4);
  cfg.checkpoint_every = 2;
  TrainOptions opts;
  opts.out_dir = dir;
  const auto r = train(cfg, testing::small_config(), mixed_stream(), testing::small_codec(), opts);
  CHECK(std::filesystem::exists(dir / "step_2.ckpt"));
  CHECK(std::filesystem::exists(dir / "final.ckpt"));
  std::ifstream log(dir / "loss.csv");
  std::string line;
  std::getline(log, line);
  CHECK(line == "step,loss,lr");
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 4);
  const auto back = load_checkpoint(dir / "final.ckpt");
  CHECK(back == r.checkpoint);
  CHECK(read_train_config(back.config) == cfg);
  CHECK(back.optimizer.has_value());
}

TEST_CASE("train config keys round-trip and are validated") {
  TrainConfig c;
  c.variant = Variant::kLayerHetHard;
  c.learning_rate = 1.2345e-4;
  c.seed = 99;
  KeyValues kv;
  write_train_config(kv, c);
  CHECK(read_train_config(kv) == c);
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = TrainConfig{};
  c.warmup_ratio = 1.5;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}
