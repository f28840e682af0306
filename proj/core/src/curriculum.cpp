#include "tss/curriculum.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <numeric>

#include "tss/error.hpp"
#include "tss/io.hpp"
#include "tss/rng.hpp"

namespace tss {

using json = nlohmann::ordered_json;

std::string_view to_string(StageLevel level) noexcept {
  switch (level) {
    case StageLevel::task:
      return "task";
    case StageLevel::step:
      return "step";
    case StageLevel::state:
      return "state";
  }
  return "?";
}

const std::vector<Pathway>& preset_pathways() {
  using enum StageLevel;
  static const std::vector<Pathway> presets{
      {"path1", {task}},
      {"path2", {task, step}},
      {"path3", {task, step, state}},
      {"path4", {task, step, state, task}},
      {"path5", {task, step, state, step}},
      {"path6", {task, step, state, step, task}},
  };
  return presets;
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

Pathway parse_pathway(std::string_view text) {
  std::string t = lower(io::trim(text));
  std::string compact;
  for (char c : t) {
    if (c != '-' && c != '_') compact.push_back(c);
  }
  for (const Pathway& p : preset_pathways()) {
    if (compact == p.name) return p;
  }

  // Normalise separators to ','.
  std::string s;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.compare(i, 2, "->") == 0) {
      s.push_back(',');
      ++i;
    } else if (t.compare(i, 3, "\xE2\x86\x92") == 0) {  // U+2192
      s.push_back(',');
      i += 2;
    } else {
      s.push_back(t[i]);
    }
  }
  Pathway out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t end = s.find(',', pos);
    if (end == std::string::npos) end = s.size();
    const std::string name = io::trim(std::string_view(s).substr(pos, end - pos));
    if (name == "task") {
      out.stages.push_back(StageLevel::task);
    } else if (name == "step") {
      out.stages.push_back(StageLevel::step);
    } else if (name == "state") {
      out.stages.push_back(StageLevel::state);
    } else {
      throw ConfigError("unknown pathway level '" + name + "' in '" + std::string(text) + "'");
    }
    pos = end + 1;
  }
  if (out.stages.empty()) throw ConfigError("empty pathway");
  out.name = "custom";
  for (const Pathway& p : preset_pathways()) {
    if (p.stages == out.stages) out.name = p.name;
  }
  return out;
}

std::string_view to_string(Family family) noexcept {
  switch (family) {
    case Family::task_vnm:
      return "task_vnm";
    case Family::step_vnm:
      return "step_vnm";
    case Family::step_nrl_in:
      return "step_nrl_in";
    case Family::step_nrl_out:
      return "step_nrl_out";
    case Family::step_tcl:
      return "step_tcl";
    case Family::state_vnm:
      return "state_vnm";
    case Family::state_vnm_before:
      return "state_vnm_before";
    case Family::state_vnm_mid:
      return "state_vnm_mid";
    case Family::state_vnm_after:
      return "state_vnm_after";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(Family::state_vnm_after); ++i) {
    const auto f = static_cast<Family>(i);
    if (to_string(f) == name) return f;
  }
  throw ConfigError("unknown label family '" + std::string(name) + "'");
}

std::vector<Family> families_for(StageLevel level, StateHeadLayout layout) {
  switch (level) {
    case StageLevel::task:
      return {Family::task_vnm};
    case StageLevel::step:
      return {Family::step_vnm, Family::step_nrl_in, Family::step_nrl_out, Family::step_tcl};
    case StageLevel::state:
      if (layout == StateHeadLayout::per_type) {
        return {Family::state_vnm_before, Family::state_vnm_mid, Family::state_vnm_after};
      }
      return {Family::state_vnm};
  }
  return {};
}

std::vector<Family> all_families(StateHeadLayout layout) {
  std::vector<Family> out;
  for (StageLevel l : {StageLevel::task, StageLevel::step, StageLevel::state}) {
    auto f = families_for(l, layout);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

NodeCounts NodeCounts::of(const NodeSpaces& spaces) {
  return NodeCounts{spaces.task.node_count(), spaces.step.node_count(), spaces.before.node_count(),
                    spaces.mid.node_count(), spaces.after.node_count()};
}

namespace {

std::size_t family_width(Family f, const NodeCounts& c) {
  switch (f) {
    case Family::task_vnm:
      return c.task;
    case Family::step_vnm:
    case Family::step_nrl_in:
    case Family::step_nrl_out:
    case Family::step_tcl:
      return c.step;
    case Family::state_vnm:
      return c.before + c.mid + c.after;
    case Family::state_vnm_before:
      return c.before;
    case Family::state_vnm_mid:
      return c.mid;
    case Family::state_vnm_after:
      return c.after;
  }
  return 0;
}

std::size_t state_offset(StateType t, const NodeCounts& c) {
  switch (t) {
    case StateType::before:
      return 0;
    case StateType::mid:
      return c.before;
    case StateType::after:
      return c.before + c.mid;
  }
  return 0;
}

void set_ones(std::span<double> row, std::span<const std::size_t> ids, std::size_t offset, Family f) {
  for (std::size_t id : ids) {
    if (offset + id >= row.size()) {
      throw DataError("label id " + std::to_string(id) + " out of range for " +
                      std::string(to_string(f)));
    }
    row[offset + id] = 1.0;
  }
}

}  // namespace

TrainingData TrainingData::build(const ClipStore& clips, std::span<const PseudoLabelRecord> labels,
                                 const NodeCounts& counts, std::span<const Family> families) {
  std::map<std::pair<std::int64_t, std::int64_t>, const PseudoLabelRecord*> by_clip;
  for (const PseudoLabelRecord& r : labels) by_clip[{r.video_id, r.segment_index}] = &r;

  TrainingData d;
  d.rows_ = clips.size();
  d.dim_ = clips.dim();
  d.features_.reserve(d.rows_ * d.dim_);
  std::vector<const PseudoLabelRecord*> aligned;
  for (const ClipRecord& c : clips.clips()) {
    auto it = by_clip.find({c.video_id, c.segment_index});
    if (it == by_clip.end()) {
      throw DataError("no pseudo-labels for clip (" + std::to_string(c.video_id) + "," +
                      std::to_string(c.segment_index) + ")");
    }
    aligned.push_back(it->second);
    d.features_.insert(d.features_.end(), c.feature.begin(), c.feature.end());
  }

  for (Family f : families) {
    FamilyTargets t;
    t.width = family_width(f, counts);
    if (t.width == 0) throw DataError("label family " + std::string(to_string(f)) + " has no nodes");
    t.targets.assign(d.rows_ * t.width, 0.0);
    const bool masked = f == Family::state_vnm || f == Family::state_vnm_before ||
                        f == Family::state_vnm_mid || f == Family::state_vnm_after;
    if (masked) t.mask.assign(d.rows_ * t.width, 0.0);
    for (std::size_t i = 0; i < d.rows_; ++i) {
      const PseudoLabelRecord& r = *aligned[i];
      std::span<double> row(t.targets.data() + i * t.width, t.width);
      auto missing = [&] {
        return DataError("missing label family " + std::string(to_string(f)) + " for clip (" +
                         std::to_string(r.video_id) + "," + std::to_string(r.segment_index) + ")");
      };
      switch (f) {
        case Family::task_vnm:
          if (r.task_vnm.empty()) throw missing();
          set_ones(row, r.task_vnm, 0, f);
          break;
        case Family::step_vnm:
          if (r.step_vnm.empty()) throw missing();
          set_ones(row, r.step_vnm, 0, f);
          break;
        case Family::step_nrl_in:
          set_ones(row, r.nrl_in, 0, f);
          break;
        case Family::step_nrl_out:
          set_ones(row, r.nrl_out, 0, f);
          break;
        case Family::step_tcl:
          if (r.step_tcl.empty()) throw missing();
          set_ones(row, r.step_tcl, 0, f);
          break;
        case Family::state_vnm: {
          if (r.state_vnm.empty()) throw missing();
          const std::size_t off = state_offset(r.state_type, counts);
          const std::size_t n = family_width(
              r.state_type == StateType::before ? Family::state_vnm_before
              : r.state_type == StateType::mid  ? Family::state_vnm_mid
                                                : Family::state_vnm_after,
              counts);
          set_ones(row, r.state_vnm, off, f);
          std::fill_n(t.mask.begin() + static_cast<std::ptrdiff_t>(i * t.width + off), n, 1.0);
          break;
        }
        case Family::state_vnm_before:
        case Family::state_vnm_mid:
        case Family::state_vnm_after: {
          const StateType want = f == Family::state_vnm_before ? StateType::before
                                 : f == Family::state_vnm_mid  ? StateType::mid
                                                               : StateType::after;
          if (r.state_type != want) break;
          if (r.state_vnm.empty()) throw missing();
          set_ones(row, r.state_vnm, 0, f);
          std::fill_n(t.mask.begin() + static_cast<std::ptrdiff_t>(i * t.width), t.width, 1.0);
          break;
        }
      }
    }
    d.families_.emplace(f, std::move(t));
  }
  return d;
}

const FamilyTargets& TrainingData::targets(Family family) const {
  auto it = families_.find(family);
  if (it == families_.end()) {
    throw DataError("missing label family " + std::string(to_string(family)));
  }
  return it->second;
}

std::uint64_t head_seed(std::uint64_t seed, std::size_t stage_index, Family family) {
  return derive_seed(seed, "head:" + std::string(to_string(family)), stage_index);
}

std::uint64_t adapter_seed(std::uint64_t seed) { return derive_seed(seed, "adapter"); }

namespace {

std::string head_prefix(Family f, std::size_t stage) {
  return "head." + std::string(to_string(f)) + "." + std::to_string(stage);
}

void gather_rows(std::span<const double> src, std::size_t width, std::span<const std::size_t> idx,
                 std::vector<double>& dst) {
  dst.resize(idx.size() * width);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx[i] * width), width,
                dst.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
}

}  // namespace

StageOutcome run_stage(const StagePlan& plan, const Adapter& adapter_in, const TrainingData& data,
                       const TrainConfig& config,
                       const std::string& pathway_name) {
  if (config.batch_size == 0) throw ConfigError("batch size must be >= 1");
  for (Family f : plan.families) data.targets(f);

  StageOutcome outcome;
  outcome.adapter = adapter_in.clone();
  std::vector<std::pair<Family, TaskHead>> heads;
  for (Family f : plan.families) {
    heads.emplace_back(f, TaskHead::init(data.dim(), data.targets(f).width,
                                         head_seed(config.seed, plan.index, f)));
  }

  ParamList params = outcome.adapter.params("adapter");
  for (const auto& [f, head] : heads) {
    ParamList hp = head.params(head_prefix(f, plan.index));
    params.insert(params.end(), hp.begin(), hp.end());
  }
  std::vector<ad::Tensor> tensors;
  for (const NamedParam& p : params) tensors.push_back(p.tensor);
  Adam adam(tensors, config.adam);

  Checkpoint& ckpt = outcome.checkpoint;
  capture(ckpt, adapter_in.params("adapter_init"));

  Rng order_rng(derive_seed(config.seed, "batch-order", plan.index));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> xbuf, tbuf, mbuf;

  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    EpochMetrics em;
    em.stage = plan.index;
    em.epoch = epoch;
    for (Family f : plan.families) em.family_loss[f] = 0.0;
    double total_loss = 0.0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, order.size() - start);
      std::span<const std::size_t> idx(order.data() + start, b);
      gather_rows(data.features(), data.dim(), idx, xbuf);
      ad::Tensor x = ad::Tensor::from(b, data.dim(), xbuf);
      ad::Tensor fv = outcome.adapter.forward(x);

      ad::Tensor total;
      double batch_total = 0.0;
      for (const auto& [f, head] : heads) {
        const FamilyTargets& t = data.targets(f);
        gather_rows(t.targets, t.width, idx, tbuf);
        if (!t.mask.empty()) gather_rows(t.mask, t.width, idx, mbuf);
        ad::Tensor loss = ad::bce_with_logits(head.forward(fv), tbuf,
                                              t.mask.empty() ? std::span<const double>{}
                                                             : std::span<const double>(mbuf));
        em.family_loss[f] += loss.item() * static_cast<double>(b);
        const double w = config.weight(f);
        if (w == 0.0) continue;
        ad::Tensor weighted = w == 1.0 ? loss : ad::scale(loss, w);
        batch_total += weighted.item();
        total = total.defined() ? ad::add(total, weighted) : weighted;
      }
      total_loss += batch_total * static_cast<double>(b);
      if (total.defined()) {
        adam.zero_grad();
        total.backward();
        adam.step();
      }
    }
    const double n = static_cast<double>(std::max<std::size_t>(data.size(), 1));
    em.loss = total_loss / n;
    for (auto& [f, v] : em.family_loss) v /= n;
    outcome.metrics.push_back(std::move(em));
  }

  capture(ckpt, params);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const ad::Tensor& p = params[k].tensor;
    NamedTensor m{"adam.m." + params[k].name, p.rows(), p.cols(), {}};
    NamedTensor v{"adam.v." + params[k].name, p.rows(), p.cols(), {}};
    for (double x : adam.first_moments()[k]) m.values.push_back(static_cast<float>(x));
    for (double x : adam.second_moments()[k]) v.values.push_back(static_cast<float>(x));
    ckpt.put(std::move(m));
    ckpt.put(std::move(v));
  }

  json meta;
  meta["pathway"] = pathway_name;
  meta["stage"] = plan.index;
  meta["level"] = plan.label;
  json fams = json::array();
  for (Family f : plan.families) fams.push_back(std::string(to_string(f)));
  meta["families"] = fams;
  meta["epochs"] = plan.epochs;
  meta["seed"] = config.seed;
  meta["lr"] = config.adam.lr;
  meta["weight_decay"] = config.adam.weight_decay;
  meta["batch_size"] = config.batch_size;
  meta["adam_steps"] = adam.step_count();
  ckpt.meta_json = meta.dump();
  return outcome;
}

std::string metrics_to_jsonl(std::span<const EpochMetrics> metrics) {
  std::string out;
  for (const EpochMetrics& m : metrics) {
    json j;
    j["stage"] = m.stage;
    j["epoch"] = m.epoch;
    j["loss"] = m.loss;
    json fam = json::object();
    for (const auto& [f, v] : m.family_loss) fam[std::string(to_string(f))] = v;
    j["family_loss"] = fam;
    out += j.dump() + "\n";
  }
  return out;
}

namespace {

std::string stage_file(std::size_t index, std::string_view label) {
  return "stage" + std::to_string(index) + "." + std::string(label) + ".tssckpt";
}

}  // namespace

std::vector<StageOutcome> run_pathway(const Pathway& pathway, const TrainingData& data,
                                      const TrainConfig& config,
                                      const std::filesystem::path& out_dir) {
  if (pathway.stages.empty()) throw ConfigError("pathway has no stages");
  std::vector<StageOutcome> outcomes;
  Adapter adapter = Adapter::init(adapter_seed(config.seed), data.dim());
  std::vector<EpochMetrics> all_metrics;
  for (std::size_t i = 0; i < pathway.stages.size(); ++i) {
    StagePlan plan;
    plan.index = i;
    plan.label = std::string(to_string(pathway.stages[i]));
    plan.families = families_for(pathway.stages[i], config.state_layout);
    plan.epochs = config.epochs_per_stage;
    StageOutcome out = run_stage(plan, adapter, data, config, pathway.name);
    adapter = out.adapter;
    all_metrics.insert(all_metrics.end(), out.metrics.begin(), out.metrics.end());
    if (!out_dir.empty()) save_checkpoint(out.checkpoint, out_dir / stage_file(i, plan.label));
    outcomes.push_back(std::move(out));
  }
  if (!out_dir.empty()) io::write_file_atomic(out_dir / "metrics.jsonl", metrics_to_jsonl(all_metrics));
  return outcomes;
}

StageOutcome run_mix_train(const TrainingData& data, const TrainConfig& config,
                           const std::filesystem::path& out_dir) {
  StagePlan plan;
  plan.index = 0;
  plan.label = "mix";
  plan.families = all_families(config.state_layout);
  plan.epochs = config.epochs_per_stage;
  Adapter adapter = Adapter::init(adapter_seed(config.seed), data.dim());
  StageOutcome out = run_stage(plan, adapter, data, config, "mix");
  if (!out_dir.empty()) {
    save_checkpoint(out.checkpoint, out_dir / stage_file(0, "mix"));
    io::write_file_atomic(out_dir / "metrics.jsonl", metrics_to_jsonl(out.metrics));
  }
  return out;
}

}  // namespace tss
