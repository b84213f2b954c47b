#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "storyviz/metrics.hpp"
#include "storyviz/story_ops.hpp"

namespace {

using namespace storyviz;

constexpr int64_t kB = 16, kN = 5, kL = 12, kD = 128;

struct Inputs {
  torch::Tensor s, w, mask, v, proj;
};

Inputs make_inputs(int64_t c, int64_t res) {
  torch::manual_seed(0);
  Inputs in;
  in.mask = torch::rand({kB, kN, kL}) < 0.7;
  in.mask.select(2, 0).fill_(true);
  in.s = torch::randn({kB, kN, kD});
  in.w = torch::randn({kB, kN, kD, kL});
  in.v = torch::randn({kB, kN, c, res, res});
  in.proj = torch::randn({kD, c});
  return in;
}

void BM_EnrichSentences(benchmark::State& state) {
  const auto in = make_inputs(8, 4);
  torch::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ops::enrich_sentences(in.s, in.w, in.mask).s_prime);
}
BENCHMARK(BM_EnrichSentences);

void BM_ExtendedSpatialAttention(benchmark::State& state) {
  const int64_t res = state.range(0);
  const auto in = make_inputs(32, res);
  torch::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ops::extended_spatial_attention(in.v, in.w, in.mask, in.proj).v_w);
  state.SetItemsProcessed(state.iterations() * kB * kN * res * res * kN * kL);
}
BENCHMARK(BM_ExtendedSpatialAttention)->Arg(8)->Arg(16)->Arg(32);

void BM_PerSentenceAttention(benchmark::State& state) {
  const int64_t res = state.range(0);
  const auto in = make_inputs(32, res);
  torch::NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        ops::extended_spatial_attention(in.v, in.w, in.mask, in.proj, ops::AttentionScope::kSentence).v_w);
  }
}
BENCHMARK(BM_PerSentenceAttention)->Arg(16);

void BM_FuseStory(benchmark::State& state) {
  const auto in = make_inputs(64, 16);
  const auto v = in.v.select(1, 0).contiguous();
  const auto words = ops::flatten_words(in.w, in.mask);
  const auto mask = ops::flatten_word_mask(in.mask);
  const auto proj = torch::randn({kD, 64});
  torch::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ops::fuse_features(v, words, mask, proj));
}
BENCHMARK(BM_FuseStory);

void BM_AttentionBackward(benchmark::State& state) {
  const auto in = make_inputs(32, 16);
  for (auto _ : state) {
    const auto v = in.v.clone().requires_grad_(true);
    ops::extended_spatial_attention(v, in.w, in.mask, in.proj).v_w.sum().backward();
    benchmark::DoNotOptimize(v.grad());
  }
}
BENCHMARK(BM_AttentionBackward);

void BM_FrechetDistance(benchmark::State& state) {
  const int64_t k = state.range(0);
  torch::manual_seed(1);
  const auto a = metrics::gaussian_stats(torch::randn({k + 64, k}, torch::kFloat64));
  const auto b = metrics::gaussian_stats(torch::randn({k + 64, k}, torch::kFloat64) + 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::frechet_distance(a, b));
}
BENCHMARK(BM_FrechetDistance)->Arg(64)->Arg(320);

}  // namespace

BENCHMARK_MAIN();
