#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "mageval/dataset.hpp"
#include "mageval/metrics.hpp"
#include "mageval/model_client.hpp"
#include "mageval/prompts.hpp"
#include "mageval/runner.hpp"

using namespace mageval;

namespace {

std::vector<EvalItem> make_pool(int n) {
  std::vector<EvalItem> pool;
  pool.reserve(n);
  for (int i = 0; i < n; ++i) {
    EvalItem item;
    item.id = "item-" + std::to_string(i);
    item.image_ref = "images/" + std::to_string(i) + ".jpg";
    item.question = "Is there a cat in the image?";
    item.gold = i % 2 == 0 ? Label::yes : Label::no;
    item.dataset = "bench";
    item.split = "dev";
    pool.push_back(std::move(item));
  }
  return pool;
}

void BM_ComputeMetrics(benchmark::State& state) {
  ConfusionMatrix cm;
  cm.tp = 400;
  cm.fp = 50;
  cm.tn = 450;
  cm.fn = 100;
  cm.unresolved_gold_yes = 7;
  cm.unresolved_gold_no = 3;
  for (auto _ : state) {
    benchmark::DoNotOptimize(compute_metrics(cm));
  }
}
BENCHMARK(BM_ComputeMetrics);

void BM_NormalizeAnswer(benchmark::State& state) {
  const std::string replies[] = {
      "Yes, there is a dog in the image.",
      "No, I cannot see any dogs.",
      "The image shows a park with several trees, and there is a bench.",
      "It is difficult to determine from this angle.",
  };
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(normalize_answer(replies[i++ % 4]));
  }
}
BENCHMARK(BM_NormalizeAnswer);

void BM_BalancedSample(benchmark::State& state) {
  const auto pool = make_pool(static_cast<int>(state.range(0)));
  std::uint64_t seed = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(balanced_sample(pool, state.range(0) / 4, seed++));
  }
}
BENCHMARK(BM_BalancedSample)->Arg(200)->Arg(2000);

void BM_CacheKey(benchmark::State& state) {
  const std::string prompt = render(builtin_template("magprompt"), "Is there a dog?").text;
  const std::string image_sha256(64, 'a');
  DecodingConfig decoding;
  decoding.max_output_tokens = 16;
  for (auto _ : state) {
    benchmark::DoNotOptimize(cache_key("mock-vlm", prompt, image_sha256, decoding));
  }
}
BENCHMARK(BM_CacheKey);

void BM_RenderTemplate(benchmark::State& state) {
  const PromptTemplate& tpl = builtin_template("magprompt");
  const std::string question = "Is there a dog in the image?";
  for (auto _ : state) {
    benchmark::DoNotOptimize(render(tpl, question));
  }
}
BENCHMARK(BM_RenderTemplate);

}  // namespace

BENCHMARK_MAIN();
