// Micro benchmarks for the hot paths of training and evaluation.

#include <benchmark/benchmark.h>

#include <algorithm>

#include "omni/action_codec.hpp"
#include "omni/data.hpp"
#include "omni/model.hpp"
#include "omni/rng.hpp"
#include "omni/trainer.hpp"

using namespace omni;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, bool grad = false) {
  Rng rng(seed);
  std::vector<float> v(r * c);
  for (auto& x : v) x = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  return Tensor({r, c}, std::move(v), grad);
}

// The desk preset's model shape.
ModelConfig desk_model() {
  ModelConfig c;
  c.n_layers = 4;
  c.share_threshold = 2;
  c.d_model = 32;
  c.n_heads = 2;
  c.d_ff = 128;
  c.vocab_size = 256;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor(n, n, 1), b = random_tensor(n, n, 2);
  Tape tape;
  tape.set_recording(false);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(tape, a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(512);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor(n, n, 1, true), b = random_tensor(n, n, 2, true);
  for (auto _ : state) {
    Tape tape;
    tape.backward(sum(tape, matmul(tape, a, b)));
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(32)->Arg(128);

void BM_ForwardOneSample(benchmark::State& state) {
  const auto model = LayerHetModel::init(desk_model(), 1);
  const auto in = encode_context(gen_robot_dataset(1, 1)[0]);
  for (auto _ : state) {
    Tape tape;
    tape.set_recording(false);
    benchmark::DoNotOptimize(forward(tape, model, in));
  }
}
BENCHMARK(BM_ForwardOneSample);

void BM_TrainStep(benchmark::State& state) {
  auto model = LayerHetModel::init(desk_model(), 1);
  const auto codec = build_default_table(256, 64, default_vocab().size());
  const auto samples = gen_gui_dataset(1, static_cast<std::size_t>(state.range(0)));
  const Batch batch = collate(samples, codec);
  AdamW opt(model.named_parameters(), {});
  for (auto _ : state) {
    model.zero_grad();
    Tape tape;
    const Tensor loss = batch_loss(tape, model, batch);
    tape.backward(loss);
    opt.step(1e-4);
  }
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(16);

void BM_GenerateRobotAction(benchmark::State& state) {
  auto model = LayerHetModel::init(desk_model(), 1);
  const auto codec = build_default_table(256, 64, default_vocab().size());
  // Constant head: every position predicts one action token, so all seven
  // decode steps run.
  auto& head = model.head_rob;
  std::fill(head.norm.gain.mutable_data().begin(), head.norm.gain.mutable_data().end(), 0.0f);
  std::fill(head.norm.bias.mutable_data().begin(), head.norm.bias.mutable_data().end(), 1.0f);
  std::fill(head.proj.mutable_data().begin(), head.proj.mutable_data().end(), 0.0f);
  const auto token = static_cast<std::size_t>(codec.token_for_bin(5));
  for (std::size_t r = 0; r < head.proj.rows(); ++r) head.proj.mutable_data()[r * head.proj.cols() + token] = 1.0f;
  const auto sample = gen_robot_dataset(1, 1)[0];
  for (auto _ : state) benchmark::DoNotOptimize(generate_action(model, sample, codec));
}
BENCHMARK(BM_GenerateRobotAction);

void BM_CodecRoundTrip(benchmark::State& state) {
  const auto codec = build_default_table(1024, kDefaultBins, default_vocab().size());
  EmbodiedAction a;
  a.v = {0.043, -0.075, -0.579, 0.0, -0.147, -0.080, 1.0};
  for (auto _ : state) benchmark::DoNotOptimize(decode_embodied(encode_embodied(a, codec), codec));
}
BENCHMARK(BM_CodecRoundTrip);

}  // namespace

BENCHMARK_MAIN();
