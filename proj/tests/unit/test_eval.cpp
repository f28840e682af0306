#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "temp_dir.hpp"
#include "tss/eval.hpp"
#include "tss/fusion.hpp"
#include "tss/rng.hpp"
#include "tss/synthetic.hpp"

namespace tss {
namespace {

SequenceStore store_of(std::size_t videos, std::size_t segments, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  ClipStore clips(dim);
  for (std::size_t v = 0; v < videos; ++v) {
    for (std::size_t g = 0; g < segments; ++g) {
      std::vector<float> f(dim);
      for (float& x : f) x = static_cast<float>(rng.normal());
      clips.add({std::int64_t(v), std::int64_t(g), f});
    }
  }
  return SequenceStore::from_clips(clips);
}

std::vector<Annotation> annotate(std::size_t videos, std::size_t segments) {
  std::vector<Annotation> out;
  for (std::size_t v = 0; v < videos; ++v) {
    for (std::size_t g = 0; g < segments; ++g) {
      out.push_back({std::int64_t(v), std::int64_t(g), std::int64_t(100 + g), std::int64_t(v % 3), "mid"});
    }
  }
  return out;
}

TEST(BuildSamples, OneVideoFourSegments) {
  const SequenceStore s = store_of(1, 4, 8, 1);
  const auto ann = annotate(1, 4);
  const auto sf = build_samples(s, ann, TaskKind::sf);
  ASSERT_EQ(sf.size(), 3u);
  EXPECT_EQ(sf[0].rows, 1u);
  EXPECT_EQ(sf[2].rows, 3u);
  EXPECT_EQ(sf[2].label, 103);
  EXPECT_EQ(sf[2].segment_index, 3);
  const auto sr = build_samples(s, ann, TaskKind::sr);
  ASSERT_EQ(sr.size(), 4u);
  for (const auto& x : sr) EXPECT_EQ(x.rows, 1u);
  const auto tr = build_samples(s, ann, TaskKind::tr);
  ASSERT_EQ(tr.size(), 1u);
  EXPECT_EQ(tr[0].rows, 4u);
  EXPECT_EQ(tr[0].label, 0);
}

TEST(BuildSamples, HistoryIsTruncated) {
  const SequenceStore s = store_of(1, 10, 4, 2);
  const auto sf = build_samples(s, annotate(1, 10), TaskKind::sf, 4);
  ASSERT_EQ(sf.size(), 9u);
  EXPECT_EQ(sf[8].rows, 4u);
  // Last window covers segments 5..8.
  const auto& seg5 = s.rows()[5].feature;
  EXPECT_TRUE(std::equal(seg5.begin(), seg5.end(), sf[8].features.begin()));
  EXPECT_THROW(build_samples(s, annotate(1, 10), TaskKind::sf, 0), ConfigError);
}

TEST(BuildSamples, CountsOnSyntheticCorpus) {
  SynthSpec spec;
  spec.n_tasks = 6;
  spec.steps_per_task = 4;
  spec.clips_per_step = 3;
  spec.match_dim = 16;
  spec.cluster_dim = 16;
  const SynthCorpus c = generate(spec);
  const SequenceStore s = SequenceStore::from_clips(c.clips);
  const std::size_t videos = spec.n_tasks * spec.clips_per_step;
  EXPECT_EQ(build_samples(s, c.annotations, TaskKind::tr).size(), videos);
  EXPECT_EQ(build_samples(s, c.annotations, TaskKind::sr).size(), videos * spec.steps_per_task);
  EXPECT_EQ(build_samples(s, c.annotations, TaskKind::sf).size(), videos * (spec.steps_per_task - 1));
}

TEST(BuildSamples, SingleSegmentVideosGiveNoForecast) {
  const SequenceStore s = store_of(3, 1, 4, 3);
  EXPECT_TRUE(build_samples(s, annotate(3, 1), TaskKind::sf).empty());
}

TEST(BuildSamples, MissingFeaturesAndConflictingTasks) {
  const SequenceStore s = store_of(1, 2, 4, 4);
  auto ann = annotate(2, 2);
  EXPECT_THROW(build_samples(s, ann, TaskKind::sr), DataError);
  ann = annotate(1, 2);
  ann[1].task_id = 9;
  EXPECT_THROW(build_samples(s, ann, TaskKind::tr), DataError);
}

TEST(Annotations, ReadSortAndRoundTrip) {
  std::istringstream in(R"({"video":2,"segment":0,"step":5,"task":1}
{"video":1,"segment":1,"step":4,"task":0,"state":"after"}
{"video":1,"segment":0,"step":3,"task":0}
)");
  const auto a = read_annotations(in, "ann");
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[0].video_id, 1);
  EXPECT_EQ(a[0].segment_index, 0);
  EXPECT_EQ(a[1].state, "after");
  testing::TempDir dir;
  save_annotations(a, dir / "a.jsonl");
  EXPECT_EQ(load_annotations(dir / "a.jsonl"), a);
  std::istringstream dup(R"({"video":1,"segment":0,"step":3,"task":0}
{"video":1,"segment":0,"step":4,"task":0}
)");
  EXPECT_THROW(read_annotations(dup, "dup"), DataError);
}

TEST(Eval, ParseNames) {
  EXPECT_EQ(parse_task_kind("sr"), TaskKind::sr);
  EXPECT_EQ(parse_task_kind("SF"), TaskKind::sf);
  EXPECT_EQ(parse_eval_head("transformer"), EvalHead::transformer);
  EXPECT_THROW(parse_task_kind("XX"), ConfigError);
  EXPECT_THROW(parse_eval_head("cnn"), ConfigError);
  EXPECT_EQ(default_hidden(TaskKind::tr), 128u);
  EXPECT_EQ(default_hidden(TaskKind::sr), 768u);
  EXPECT_EQ(default_hidden(TaskKind::sf), 768u);
}

TEST(Eval, SplitProportions) {
  std::size_t counts[3] = {0, 0, 0};
  for (std::int64_t v = 0; v < 20000; ++v) ++counts[static_cast<int>(split_of(v, 7))];
  EXPECT_NEAR(counts[0] / 20000.0, 0.7, 0.015);
  EXPECT_NEAR(counts[1] / 20000.0, 0.1, 0.015);
  EXPECT_NEAR(counts[2] / 20000.0, 0.2, 0.015);
  EXPECT_EQ(split_of(42, 1), split_of(42, 1));
}

std::vector<DownstreamSample> samples_with_labels(std::size_t n, std::size_t dim,
                                                  const std::function<std::int64_t(std::size_t)>& label) {
  Rng rng(11);
  std::vector<DownstreamSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    DownstreamSample s;
    s.video_id = std::int64_t(i);
    s.kind = TaskKind::sr;
    s.rows = 1;
    s.features.resize(dim);
    for (float& x : s.features) x = static_cast<float>(rng.normal());
    s.label = label(i);
    out.push_back(std::move(s));
  }
  return out;
}

TEST(Eval, ConstantLabelsGivePerfectAccuracy) {
  const auto samples = samples_with_labels(100, 8, [](std::size_t) { return 5; });
  EvalConfig cfg;
  cfg.max_epochs = 3;
  cfg.hidden = 8;
  const EvalResult r = finetune_and_test(samples, cfg);
  EXPECT_EQ(r.classes, 1u);
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST(Eval, UntrainedHeadIsAtChance) {
  Rng rng(12);
  const std::size_t classes = 10;
  std::vector<std::int64_t> labels(3000);
  for (auto& l : labels) l = std::int64_t(rng.below(classes));
  const auto samples = samples_with_labels(3000, 16, [&](std::size_t i) { return labels[i]; });
  EvalConfig cfg;
  cfg.max_epochs = 0;
  cfg.hidden = 16;
  const EvalResult r = finetune_and_test(samples, cfg);
  const double p = 1.0 / double(classes);
  const double bound = 2.576 * std::sqrt(p * (1.0 - p) / double(r.test_count));
  EXPECT_NEAR(r.accuracy, p, bound);
  EXPECT_EQ(r.epochs_run, 0u);
}

TEST(Eval, AccuracyIsCorrectOverTestCountAndDeterministic) {
  const auto samples = samples_with_labels(200, 8, [](std::size_t i) { return std::int64_t(i % 4); });
  EvalConfig cfg;
  cfg.max_epochs = 20;
  cfg.patience = 3;
  cfg.hidden = 8;
  cfg.adam.lr = 1e-2;
  const EvalResult a = finetune_and_test(samples, cfg);
  const EvalResult b = finetune_and_test(samples, cfg);
  EXPECT_EQ(a.accuracy, double(a.correct) / double(a.test_count));
  EXPECT_GE(a.accuracy, 0.0);
  EXPECT_LE(a.accuracy, 1.0);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.best_epoch, b.best_epoch);
  EXPECT_LE(a.epochs_run, a.best_epoch + cfg.patience);
  EXPECT_EQ(a.train_count + a.val_count + a.test_count, samples.size());
}

TEST(Eval, LearnsSeparableClasses) {
  // Class is encoded in one dominant coordinate.
  Rng rng(13);
  std::vector<DownstreamSample> samples;
  for (std::size_t i = 0; i < 300; ++i) {
    DownstreamSample s;
    s.video_id = std::int64_t(i);
    s.rows = 1;
    s.label = std::int64_t(i % 3);
    s.features.assign(8, 0.0f);
    for (float& x : s.features) x = static_cast<float>(0.1 * rng.normal());
    s.features[s.label] += 3.0f;
    samples.push_back(std::move(s));
  }
  EvalConfig cfg;
  cfg.max_epochs = 30;
  cfg.hidden = 16;
  cfg.adam.lr = 1e-2;
  EXPECT_GT(finetune_and_test(samples, cfg).accuracy, 0.9);
  cfg.head = EvalHead::transformer;
  cfg.max_epochs = 5;
  EXPECT_GT(finetune_and_test(samples, cfg).accuracy, 0.5);
}

TEST(Eval, EmptySplitAndBadConfig) {
  const auto few = samples_with_labels(2, 4, [](std::size_t i) { return std::int64_t(i); });
  EXPECT_THROW(finetune_and_test(few, EvalConfig{}), DataError);
  EvalConfig cfg;
  cfg.patience = 0;
  EXPECT_THROW(finetune_and_test(few, cfg), ConfigError);
  EXPECT_THROW(finetune_and_test({}, EvalConfig{}), DataError);
}

TEST(Eval, ResultJsonRoundTrip) {
  testing::TempDir dir;
  ResultRow row{"path2", "synthetic", EvalHead::transformer, TaskKind::sf, 3, {}};
  row.result.accuracy = 0.25;
  row.result.correct = 1;
  row.result.test_count = 4;
  {
    std::ofstream out(dir / "r.jsonl");
    out << result_to_json(row) << "\n";
  }
  const auto back = load_results(dir / "r.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].pathway, "path2");
  EXPECT_EQ(back[0].head, EvalHead::transformer);
  EXPECT_EQ(back[0].task, TaskKind::sf);
  EXPECT_EQ(back[0].result.accuracy, 0.25);
}

}  // namespace
}  // namespace tss
