#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "temp_dir.hpp"
#include "tss/curriculum.hpp"
#include "tss/synthetic.hpp"

namespace tss {
namespace {

struct Setup {
  SynthCorpus corpus;
  NodeSpaces spaces;
  std::vector<PseudoLabelRecord> labels;
  NodeCounts counts;
};

const Setup& setup() {
  static const Setup s = [] {
    SynthSpec spec;
    spec.n_tasks = 4;
    spec.steps_per_task = 4;
    spec.clips_per_step = 3;
    spec.match_dim = 24;
    spec.cluster_dim = 32;
    spec.noise = 0.1;
    spec.seed = 5;
    Setup out{generate(spec), {}, {}, {}};
    out.spaces = build_node_spaces(out.corpus.base, out.corpus.texts);
    out.labels = generate_all(out.corpus.clips, out.spaces, out.corpus.base, out.corpus.texts);
    out.counts = NodeCounts::of(out.spaces);
    return out;
  }();
  return s;
}

TrainingData data_for(StateHeadLayout layout = StateHeadLayout::union_masked) {
  const auto fams = all_families(layout);
  return TrainingData::build(setup().corpus.clips, setup().labels, setup().counts, fams);
}

TrainConfig small_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs_per_stage = epochs;
  c.batch_size = 16;
  c.seed = 3;
  return c;
}

std::vector<float> tensor_values(const Checkpoint& c, const std::string& name) {
  return c.at(name).values;
}

TEST(Pathway, Presets) {
  using enum StageLevel;
  EXPECT_EQ(parse_pathway("task").stages, (std::vector<StageLevel>{task}));
  EXPECT_EQ(parse_pathway("task").name, "path1");
  const Pathway p6 = parse_pathway("task,step,state,step,task");
  EXPECT_EQ(p6.name, "path6");
  EXPECT_EQ(p6.stages.size(), 5u);
  EXPECT_EQ(parse_pathway("Path-6"), p6);
  EXPECT_EQ(parse_pathway("task -> step -> state"), parse_pathway("path3"));
  EXPECT_EQ(parse_pathway("task\xE2\x86\x92step"), parse_pathway("path2"));
  EXPECT_EQ(parse_pathway("state,task").name, "custom");
  EXPECT_THROW(parse_pathway("task,banana"), ConfigError);
  EXPECT_THROW(parse_pathway(""), ConfigError);
  ASSERT_EQ(preset_pathways().size(), 6u);
  EXPECT_EQ(preset_pathways()[3].stages, (std::vector<StageLevel>{task, step, state, task}));
  EXPECT_EQ(preset_pathways()[4].stages, (std::vector<StageLevel>{task, step, state, step}));
}

TEST(Pathway, FamiliesPerLevel) {
  EXPECT_EQ(families_for(StageLevel::task, StateHeadLayout::union_masked),
            (std::vector<Family>{Family::task_vnm}));
  EXPECT_EQ(families_for(StageLevel::step, StateHeadLayout::union_masked).size(), 4u);
  EXPECT_EQ(families_for(StageLevel::state, StateHeadLayout::union_masked),
            (std::vector<Family>{Family::state_vnm}));
  EXPECT_EQ(families_for(StageLevel::state, StateHeadLayout::per_type).size(), 3u);
  EXPECT_EQ(all_families(StateHeadLayout::union_masked).size(), 6u);
  EXPECT_EQ(all_families(StateHeadLayout::per_type).size(), 8u);
  for (Family f : all_families(StateHeadLayout::per_type)) EXPECT_EQ(parse_family(to_string(f)), f);
  EXPECT_THROW(parse_family("nope"), ConfigError);
}

TEST(TrainingData, MultiHotCountsAndStateMask) {
  const TrainingData d = data_for();
  const NodeCounts& c = setup().counts;
  const auto check_ones = [&](Family f, std::size_t expected) {
    const FamilyTargets& t = d.targets(f);
    for (std::size_t i = 0; i < d.size(); ++i) {
      double ones = 0.0;
      for (std::size_t j = 0; j < t.width; ++j) ones += t.targets[i * t.width + j];
      EXPECT_EQ(ones, double(expected)) << to_string(f) << " row " << i;
    }
  };
  check_ones(Family::task_vnm, std::min<std::size_t>(3, c.task));
  check_ones(Family::step_vnm, std::min<std::size_t>(3, c.step));
  const FamilyTargets& s = d.targets(Family::state_vnm);
  EXPECT_EQ(s.width, c.before + c.mid + c.after);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const PseudoLabelRecord& r = setup().labels[i];
    const std::size_t off = r.state_type == StateType::before ? 0
                            : r.state_type == StateType::mid  ? c.before
                                                              : c.before + c.mid;
    const std::size_t len = r.state_type == StateType::before ? c.before
                            : r.state_type == StateType::mid  ? c.mid
                                                              : c.after;
    for (std::size_t j = 0; j < s.width; ++j) {
      const bool inside = j >= off && j < off + len;
      EXPECT_EQ(s.mask[i * s.width + j], inside ? 1.0 : 0.0);
      if (!inside) {
        EXPECT_EQ(s.targets[i * s.width + j], 0.0);
      }
    }
  }
}

TEST(TrainingData, MissingLabelsAreRejected) {
  auto labels = setup().labels;
  labels.pop_back();
  const auto fams = all_families(StateHeadLayout::union_masked);
  EXPECT_THROW(TrainingData::build(setup().corpus.clips, labels, setup().counts, fams), DataError);
  const TrainingData task_only = TrainingData::build(
      setup().corpus.clips, setup().labels, setup().counts, std::vector<Family>{Family::task_vnm});
  StagePlan plan{0, "step", {Family::step_vnm}, 1};
  EXPECT_THROW(run_stage(plan, Adapter::init(1, task_only.dim()), task_only, small_config(1)), DataError);
}

TEST(Curriculum, ZeroEpochStageIsIdentity) {
  const TrainingData d = data_for();
  const Adapter a = Adapter::init(9, d.dim());
  StagePlan plan{0, "task", {Family::task_vnm}, 0};
  const StageOutcome out = run_stage(plan, a, d, small_config(0));
  const ParamList before = a.params(), after = out.adapter.params();
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto x = before[i].tensor.values(), y = after[i].tensor.values();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
  }
  EXPECT_TRUE(out.metrics.empty());
}

TEST(Curriculum, SingleBatchStageMatchesHandReplayedAdam) {
  const TrainingData d = data_for();
  TrainConfig cfg = small_config(1);
  cfg.batch_size = d.size();  // one batch, one Adam step
  cfg.adam.lr = 1e-3;
  const Adapter a = Adapter::init(11, d.dim());
  StagePlan plan{0, "step", families_for(StageLevel::step, cfg.state_layout), 1};
  const StageOutcome out = run_stage(plan, a, d, cfg);

  oracle::ReplayNetwork net;
  net.down = {oracle::from_tensor(a.down().weight), oracle::from_tensor(a.down().bias), {}, {}};
  net.up = {oracle::from_tensor(a.up().weight), oracle::from_tensor(a.up().bias), {}, {}};
  for (Family f : plan.families) {
    const FamilyTargets& t = d.targets(f);
    const TaskHead h = TaskHead::init(d.dim(), t.width, head_seed(cfg.seed, 0, f));
    oracle::ReplayHead rh;
    rh.family = f;
    const ParamList hp = h.params("h");
    for (std::size_t l = 0; l < 3; ++l) {
      rh.layers.push_back({oracle::from_tensor(hp[2 * l].tensor), oracle::from_tensor(hp[2 * l + 1].tensor), {}, {}});
    }
    rh.targets = t.targets;
    rh.mask = t.mask;
    net.heads.push_back(std::move(rh));
  }
  const oracle::Mat x{d.size(), d.dim(), {d.features().begin(), d.features().end()}};
  const double loss = oracle::replay_gradients(net, x);
  EXPECT_NEAR(out.metrics.front().loss, loss, 1e-9);

  auto check = [&](const std::string& name, const oracle::Mat& p0, const oracle::Mat& g) {
    const auto m = tensor_values(out.checkpoint, "adam.m." + name);
    const auto final_p = tensor_values(out.checkpoint, name);
    for (std::size_t i = 0; i < g.v.size(); ++i) {
      // m after one step is (1 - beta1) g, stored as f32.
      EXPECT_NEAR(m[i] / (1.0 - cfg.adam.beta1), g.v[i], 1e-6 * std::max(1.0, std::abs(g.v[i])))
          << name << "[" << i << "]";
      const double expect = round_to_f32(oracle::adam_first_step(p0.v[i], g.v[i], cfg.adam.lr));
      EXPECT_NEAR(final_p[i], expect, 1e-6) << name << "[" << i << "]";
    }
  };
  check("adapter.down.weight", net.down.weight, net.down.grad_weight);
  check("adapter.down.bias", net.down.bias, net.down.grad_bias);
  check("adapter.up.weight", net.up.weight, net.up.grad_weight);
  check("adapter.up.bias", net.up.bias, net.up.grad_bias);
  const auto& tcl = net.heads.back();
  check("head.step_tcl.0.l2.weight", tcl.layers[2].weight, tcl.layers[2].grad_weight);
}

TEST(Curriculum, CarryoverIsBitwise) {
  const TrainingData d = data_for();
  const auto outs = run_pathway(parse_pathway("path6"), d, small_config(2));
  ASSERT_EQ(outs.size(), 5u);
  for (std::size_t i = 1; i < outs.size(); ++i) {
    for (const char* name : {"down.weight", "down.bias", "up.weight", "up.bias"}) {
      EXPECT_EQ(tensor_values(outs[i].checkpoint, std::string("adapter_init.") + name),
                tensor_values(outs[i - 1].checkpoint, std::string("adapter.") + name))
          << "stage " << i << " " << name;
    }
  }
}

TEST(Curriculum, HeadsAreFreshEachStage) {
  const TrainingData d = data_for();
  const auto init = run_pathway(parse_pathway("path6"), d, small_config(0));
  const auto trained = run_pathway(parse_pathway("path6"), d, small_config(2));
  // Stage 1 and stage 3 are both step stages; stage 3's initial head must
  // not reuse stage 1's trained or initial weights.
  for (const char* layer : {"l0", "l1", "l2"}) {
    const std::string w = std::string(".") + layer + ".weight";
    const auto fresh = tensor_values(init[3].checkpoint, "head.step_vnm.3" + w);
    EXPECT_NE(fresh, tensor_values(trained[1].checkpoint, "head.step_vnm.1" + w));
    EXPECT_NE(fresh, tensor_values(init[1].checkpoint, "head.step_vnm.1" + w));
  }
  // The trained stage-3 checkpoint holds no stage-1 heads.
  EXPECT_EQ(trained[3].checkpoint.find("head.step_vnm.1.l0.weight"), nullptr);
}

TEST(Curriculum, PathwayWritesCheckpointsAndMetrics) {
  testing::TempDir dir;
  const TrainingData d = data_for();
  run_pathway(parse_pathway("path2"), d, small_config(1), dir.path());
  EXPECT_TRUE(std::filesystem::exists(dir / "stage0.task.tssckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "stage1.step.tssckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "metrics.jsonl"));
  const Checkpoint c1 = load_checkpoint(dir / "stage1.step.tssckpt");
  EXPECT_NE(c1.meta_json.find("\"pathway\":\"path2\""), std::string::npos);
  const Checkpoint c0 = load_checkpoint(dir / "stage0.task.tssckpt");
  EXPECT_EQ(c1.at("adapter_init.up.weight").values, c0.at("adapter.up.weight").values);
}

TEST(Curriculum, SameSeedSameBytes) {
  const TrainingData d = data_for();
  const auto a = run_pathway(parse_pathway("path3"), d, small_config(2));
  const auto b = run_pathway(parse_pathway("path3"), d, small_config(2));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(checkpoint_to_bytes(a[i].checkpoint), checkpoint_to_bytes(b[i].checkpoint));
  }
}

TEST(Curriculum, ZeroFeaturesWithFrozenParamsGiveConstantLoss) {
  ClipStore zeros(setup().corpus.clips.dim());
  for (ClipRecord c : setup().corpus.clips.clips()) {
    std::fill(c.feature.begin(), c.feature.end(), 0.0f);
    zeros.add(c);
  }
  const std::vector<Family> fams{Family::task_vnm};
  const TrainingData d = TrainingData::build(zeros, setup().labels, setup().counts, fams);
  TrainConfig cfg = small_config(3);
  cfg.adam.lr = 0.0;
  const auto outs = run_pathway(parse_pathway("path1"), d, cfg);
  // Analytic value: every row sees the same logits head(adapter(0)).
  const Adapter a = Adapter::init(adapter_seed(cfg.seed), d.dim());
  const TaskHead h = TaskHead::init(d.dim(), d.targets(Family::task_vnm).width,
                                    head_seed(cfg.seed, 0, Family::task_vnm));
  const ad::Tensor logits = h.forward(a.forward(ad::Tensor::zeros(1, d.dim())));
  const FamilyTargets& t = d.targets(Family::task_vnm);
  double ref = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < t.width; ++j) {
      const double z = logits.at(0, j), y = t.targets[i * t.width + j];
      ref += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
  }
  ref /= double(d.size() * t.width);
  for (const EpochMetrics& m : outs[0].metrics) EXPECT_NEAR(m.loss, ref, 1e-12);
}

TEST(Curriculum, TrainingLossDecreasesOnPlantedCorpus) {
  const TrainingData d = data_for();
  TrainConfig cfg = small_config(15);
  cfg.adam.lr = 1e-3;
  const auto outs = run_pathway(parse_pathway("path3"), d, cfg);
  for (const StageOutcome& o : outs) EXPECT_LT(o.metrics.back().loss, o.metrics.front().loss);
}

TEST(MixTrain, SingleCheckpointWithAllFamilies) {
  testing::TempDir dir;
  const TrainingData d = data_for();
  const StageOutcome out = run_mix_train(d, small_config(1), dir.path());
  EXPECT_TRUE(std::filesystem::exists(dir / "stage0.mix.tssckpt"));
  ASSERT_EQ(out.metrics.size(), 1u);
  EXPECT_EQ(out.metrics[0].family_loss.size(), 6u);
  for (Family f : all_families(StateHeadLayout::union_masked)) {
    EXPECT_NE(out.checkpoint.find("head." + std::string(to_string(f)) + ".0.l0.weight"), nullptr);
  }
}

TEST(MixTrain, PerTypeLayoutHasEightHeads) {
  TrainConfig cfg = small_config(1);
  cfg.state_layout = StateHeadLayout::per_type;
  const StageOutcome out = run_mix_train(data_for(StateHeadLayout::per_type), cfg);
  EXPECT_EQ(out.metrics[0].family_loss.size(), 8u);
}

TEST(MixTrain, DegenerateWeightsMatchSingleStage) {
  const TrainingData d = data_for();
  TrainConfig mix = small_config(2);
  for (Family f : all_families(StateHeadLayout::union_masked)) mix.loss_weights[f] = 0.0;
  mix.loss_weights[Family::task_vnm] = 1.0;
  const StageOutcome m = run_mix_train(d, mix);
  const auto single = run_pathway(parse_pathway("path1"), d, small_config(2));
  for (const char* name : {"adapter.down.weight", "adapter.up.bias", "head.task_vnm.0.l2.weight"}) {
    EXPECT_EQ(tensor_values(m.checkpoint, name), tensor_values(single[0].checkpoint, name)) << name;
  }
  // Zero-weight heads never move.
  const auto init = run_mix_train(d, small_config(0));
  EXPECT_EQ(tensor_values(m.checkpoint, "head.step_vnm.0.l0.weight"),
            tensor_values(init.checkpoint, "head.step_vnm.0.l0.weight"));
}

TEST(Curriculum, MetricsJsonl) {
  const TrainingData d = data_for();
  const auto outs = run_pathway(parse_pathway("path1"), d, small_config(2));
  const std::string text = metrics_to_jsonl(outs[0].metrics);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_NE(text.find("\"task_vnm\""), std::string::npos);
}

}  // namespace
}  // namespace tss
