#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tss/checkpoint.hpp"
#include "tss/embeddings.hpp"
#include "tss/labeling.hpp"
#include "tss/model.hpp"
#include "tss/optimizer.hpp"

namespace tss {

enum class StageLevel : std::uint8_t { task, step, state };

std::string_view to_string(StageLevel level) noexcept;

// Ordered stage levels. Presets path1..path6 are the six progressive
// pathways (Task, Task->Step, ..., Task->Step->State->Step->Task).
struct Pathway {
  std::string name;
  std::vector<StageLevel> stages;

  bool operator==(const Pathway&) const = default;
};

const std::vector<Pathway>& preset_pathways();
// Accepts a preset name ("path6", "Path-6") or level names separated by
// ',', '->' or the arrow character.
Pathway parse_pathway(std::string_view text);

enum class Family : std::uint8_t {
  task_vnm,
  step_vnm,
  step_nrl_in,
  step_nrl_out,
  step_tcl,
  state_vnm,         // one head over the union of the three phase spaces
  state_vnm_before,  // per-phase variant
  state_vnm_mid,
  state_vnm_after,
};

std::string_view to_string(Family family) noexcept;
Family parse_family(std::string_view name);

enum class StateHeadLayout { union_masked, per_type };

std::vector<Family> families_for(StageLevel level, StateHeadLayout layout);
// Every family, for joint training.
std::vector<Family> all_families(StateHeadLayout layout);

struct NodeCounts {
  std::size_t task = 0;
  std::size_t step = 0;
  std::size_t before = 0;
  std::size_t mid = 0;
  std::size_t after = 0;

  static NodeCounts of(const NodeSpaces& spaces);
};

// Dense supervision for one family: N x d multi-hot targets plus an
// optional N x d mask (entries that take part in the loss).
struct FamilyTargets {
  std::size_t width = 0;
  std::vector<double> targets;
  std::vector<double> mask;
};

// Clip features aligned with their pseudo-labels, ready for training.
class TrainingData {
 public:
  static TrainingData build(const ClipStore& clips, std::span<const PseudoLabelRecord> labels,
                            const NodeCounts& counts, std::span<const Family> families);

  std::size_t size() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> features() const noexcept { return features_; }
  bool has(Family family) const { return families_.contains(family); }
  const FamilyTargets& targets(Family family) const;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> features_;
  std::map<Family, FamilyTargets> families_;
};

struct TrainConfig {
  AdamConfig adam{};  // lr 1e-4, weight decay 0
  std::size_t batch_size = 256;
  std::size_t epochs_per_stage = 10;
  std::uint64_t seed = 0;
  StateHeadLayout state_layout = StateHeadLayout::union_masked;
  // Missing families weigh 1.
  std::map<Family, double> loss_weights;

  double weight(Family f) const {
    auto it = loss_weights.find(f);
    return it == loss_weights.end() ? 1.0 : it->second;
  }
};

struct StagePlan {
  std::size_t index = 0;
  std::string label;  // stage level name, or "mix"
  std::vector<Family> families;
  std::size_t epochs = 0;
};

struct EpochMetrics {
  std::size_t stage = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  std::map<Family, double> family_loss;
};

struct StageOutcome {
  Adapter adapter;
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
};

// Seeds of fresh heads and batch order depend only on (seed, stage index,
// family), never on earlier draws.
std::uint64_t head_seed(std::uint64_t seed, std::size_t stage_index, Family family);
std::uint64_t adapter_seed(std::uint64_t seed);

// Trains a copy of `adapter_in` together with freshly initialised heads
// for the plan's families. The returned checkpoint holds the initial and
// final adapter, the trained heads and the optimiser moments.
StageOutcome run_stage(const StagePlan& plan, const Adapter& adapter_in, const TrainingData& data,
                       const TrainConfig& config,
                       const std::string& pathway_name = "");

// Runs every stage, carrying the adapter over and re-initialising heads.
// When `out_dir` is non-empty each stage checkpoint is written there as
// stage<i>.<level>.tssckpt together with metrics.jsonl.
std::vector<StageOutcome> run_pathway(const Pathway& pathway, const TrainingData& data,
                                      const TrainConfig& config,
                                      const std::filesystem::path& out_dir = {});

// Joint baseline: one stage supervised by all families at once.
StageOutcome run_mix_train(const TrainingData& data, const TrainConfig& config,
                           const std::filesystem::path& out_dir = {});

std::string metrics_to_jsonl(std::span<const EpochMetrics> metrics);

}  // namespace tss
