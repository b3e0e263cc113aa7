#include <benchmark/benchmark.h>

#include "symdiff/denoiser.hpp"
#include "symdiff/diffusion.hpp"
#include "symdiff/metrics.hpp"
#include "symdiff/sampler.hpp"
#include "symdiff/trainer.hpp"

using namespace symdiff;

namespace {

TokenSequence random_melody(int steps, Rng& rng) {
  TokenSequence seq(1, steps);
  for (int s = 0; s < steps; ++s) seq.set(s, 0, static_cast<Token>(uniform_int(rng, 0, PitchVocab::kSize - 1)));
  return seq;
}

std::vector<TokenSequence> random_corpus(int count, int steps, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenSequence> out;
  for (int i = 0; i < count; ++i) out.push_back(random_melody(steps, rng));
  return out;
}

void BM_QSample(benchmark::State& state) {
  const DiffusionSchedule sch{1024};
  Rng rng(1);
  const auto x0 = random_melody(static_cast<int>(state.range(0)), rng);
  for (auto _ : state) benchmark::DoNotOptimize(q_sample(x0, 512, sch, rng));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_QSample)->Arg(256)->Arg(1024);

void BM_Posterior(benchmark::State& state) {
  const DiffusionSchedule sch{1024};
  int t = 2;
  for (auto _ : state) {
    benchmark::DoNotOptimize(posterior(PitchVocab::kSize, 40, t, sch, PitchVocab::kSize));
    t = t == 1024 ? 2 : t + 1;
  }
}
BENCHMARK(BM_Posterior);

void BM_OverlapArea(benchmark::State& state) {
  Rng rng(2);
  std::vector<Gaussian> gs;
  for (int i = 0; i < 1024; ++i) gs.push_back({60 + 10 * normal01(rng), std::exp(normal01(rng))});
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(overlap_area(gs[i % 1024], gs[(i + 1) % 1024]));
    ++i;
  }
}
BENCHMARK(BM_OverlapArea);

void BM_Evaluate(benchmark::State& state) {
  const auto a = random_corpus(100, 256, 3);
  const auto b = random_corpus(100, 256, 4);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(a, b));
}
BENCHMARK(BM_Evaluate)->Unit(benchmark::kMillisecond);

void BM_DeskForward(benchmark::State& state) {
  const Denoiser net(DenoiserConfig::desk(), 5);
  Rng rng(6);
  const auto x = q_sample(random_melody(net.config().steps, rng), 512, DiffusionSchedule{1024}, rng).xt;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
}
BENCHMARK(BM_DeskForward)->Unit(benchmark::kMillisecond);

void BM_DeskTrainStep(benchmark::State& state) {
  const auto corpus = random_corpus(32, DenoiserConfig::desk().steps, 7);
  TrainOptions o;
  o.batch_size = static_cast<int>(state.range(0));
  Trainer trainer(Denoiser(DenoiserConfig::desk(), 8), o, 9);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step(corpus));
}
BENCHMARK(BM_DeskTrainStep)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_DeskSample(benchmark::State& state) {
  const Denoiser net(DenoiserConfig::desk(), 10);
  const NetworkModel model(net);
  SampleOptions o;
  o.steps = static_cast<int>(state.range(0));
  Rng rng(11);
  for (auto _ : state) benchmark::DoNotOptimize(sample_unconditional(model, DiffusionSchedule{1024}, rng, o));
}
BENCHMARK(BM_DeskSample)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
