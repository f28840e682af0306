#include <benchmark/benchmark.h>

#include <vector>

#include "tss/autodiff.hpp"
#include "tss/clustering.hpp"
#include "tss/labeling.hpp"
#include "tss/model.hpp"
#include "tss/optimizer.hpp"
#include "tss/rng.hpp"
#include "tss/synthetic.hpp"

namespace {

using namespace tss;

std::vector<float> random_vec(Rng& rng, std::size_t dim) {
  std::vector<float> v(dim);
  for (float& x : v) x = static_cast<float>(rng.normal());
  return v;
}

const SynthCorpus& corpus() {
  static const SynthCorpus c = generate(SynthSpec{});
  return c;
}

// Scoring one clip against every raw step text, then top-3.
void BM_ScoreStepsTopK(benchmark::State& state) {
  const SynthCorpus& c = corpus();
  static const NodeSpaces spaces = build_node_spaces(c.base, c.texts);
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& clip = c.clips[i++ % c.clips.size()].feature;
    const auto scores = score_nodes(clip, spaces.step, c.texts);
    benchmark::DoNotOptimize(top_k(scores, 3));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ScoreStepsTopK);

void BM_CosineSim(benchmark::State& state) {
  Rng rng(1);
  const auto a = random_vec(rng, static_cast<std::size_t>(state.range(0)));
  const auto b = random_vec(rng, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(cosine_sim(a, b));
}
BENCHMARK(BM_CosineSim)->Arg(512)->Arg(768);

void BM_Agglomerate(benchmark::State& state) {
  Rng rng(2);
  std::vector<std::vector<float>> pts;
  for (std::int64_t i = 0; i < state.range(0); ++i) pts.push_back(random_vec(rng, kClusterDim));
  for (auto _ : state) benchmark::DoNotOptimize(agglomerate(pts, kDefaultClusterThreshold));
}
BENCHMARK(BM_Agglomerate)->Arg(100)->Arg(300)->Arg(1000)->Unit(benchmark::kMillisecond);

// One adapter + step-head update on a 256-clip batch.
void BM_AdapterTrainingStep(benchmark::State& state) {
  Rng rng(3);
  const Adapter adapter = Adapter::init(4);
  const TaskHead head = TaskHead::init(kMatchDim, 100, 5);
  std::vector<ad::Tensor> params;
  for (const ParamList& list : {adapter.params("a"), head.params("h")}) {
    for (const NamedParam& p : list) params.push_back(p.tensor);
  }
  Adam adam(params, AdamConfig{});
  std::vector<double> x(256 * kMatchDim), t(256 * 100, 0.0);
  for (double& v : x) v = rng.normal();
  for (std::size_t r = 0; r < 256; ++r) t[r * 100 + r % 100] = 1.0;
  const ad::Tensor input = ad::Tensor::from(256, kMatchDim, x);
  for (auto _ : state) {
    ad::Tensor loss = ad::bce_with_logits(head.forward(adapter.forward(input)), t);
    adam.zero_grad();
    loss.backward();
    adam.step();
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_AdapterTrainingStep)->Unit(benchmark::kMillisecond);

// Forward + backward of the downstream transformer on 16 five-segment videos.
void BM_TransformerBatch(benchmark::State& state) {
  Rng rng(6);
  const auto model = DownstreamTransformer::init(kMatchDim, 768, 100, MlpOrder::literal, 7);
  std::vector<ad::Tensor> seqs;
  for (int i = 0; i < 16; ++i) {
    std::vector<double> v(5 * kMatchDim);
    for (double& x : v) x = rng.normal();
    seqs.push_back(ad::Tensor::from(5, kMatchDim, v));
  }
  std::vector<std::size_t> labels(16);
  for (std::size_t i = 0; i < 16; ++i) labels[i] = i;
  for (auto _ : state) {
    ad::Tensor loss = ad::cross_entropy(model.forward(seqs), labels);
    loss.backward();
    for (const NamedParam& p : model.params()) {
      ad::Tensor t = p.tensor;
      t.zero_grad();
    }
  }
}
BENCHMARK(BM_TransformerBatch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
