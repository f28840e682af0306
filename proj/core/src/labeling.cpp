#include "tss/labeling.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <numeric>

#include "tss/error.hpp"
#include "tss/io.hpp"

namespace tss {

using json = nlohmann::ordered_json;

std::string_view to_string(StateType type) noexcept {
  switch (type) {
    case StateType::before:
      return "before";
    case StateType::mid:
      return "mid";
    case StateType::after:
      return "after";
  }
  return "?";
}

StateType parse_state_type(std::string_view name) {
  for (StateType t : {StateType::before, StateType::mid, StateType::after}) {
    if (to_string(t) == name) return t;
  }
  throw DataError("unknown state type '" + std::string(name) + "'");
}

Level level_of(StateType type) noexcept {
  switch (type) {
    case StateType::before:
      return Level::before;
    case StateType::mid:
      return Level::mid;
    case StateType::after:
      return Level::after;
  }
  return Level::before;
}

const NodeSpace& NodeSpaces::at(Level level) const {
  switch (level) {
    case Level::task:
      return task;
    case Level::step:
      return step;
    case Level::before:
      return before;
    case Level::mid:
      return mid;
    case Level::after:
      return after;
  }
  throw DataError("bad level");
}

NodeSpaces build_node_spaces(const KnowledgeBase& base, const TextStore& store, double threshold,
                             Linkage linkage) {
  NodeSpaces s;
  s.task = build_node_space(Level::task, base, store, threshold, linkage);
  s.step = build_node_space(Level::step, base, store, threshold, linkage);
  s.before = build_node_space(Level::before, base, store, threshold, linkage);
  s.mid = build_node_space(Level::mid, base, store, threshold, linkage);
  s.after = build_node_space(Level::after, base, store, threshold, linkage);
  return s;
}

void save_node_spaces(const NodeSpaces& spaces, const std::filesystem::path& dir) {
  for (Level level : kAllLevels) save_node_space(spaces.at(level), dir);
}

NodeSpaces load_node_spaces(const std::filesystem::path& dir) {
  NodeSpaces s;
  s.task = load_node_space(Level::task, dir);
  s.step = load_node_space(Level::step, dir);
  s.before = load_node_space(Level::before, dir);
  s.mid = load_node_space(Level::mid, dir);
  s.after = load_node_space(Level::after, dir);
  return s;
}

std::vector<double> score_nodes(std::span<const float> clip, const NodeSpace& space,
                                const TextStore& store, NodeScoring scoring) {
  if (space.node_count() == 0) throw DataError("score_nodes: empty node space");
  std::vector<double> scores(space.node_count(), 0.0);
  if (scoring == NodeScoring::centroid) {
    for (std::size_t n = 0; n < space.node_count(); ++n) {
      scores[n] = cosine_sim(clip, std::span<const double>(space.centroid(n)));
    }
    return scores;
  }
  const auto& ids = space.text_ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const TextEmbedding& t = store.at(TextKey{space.level(), ids[i]});
    scores[space.node_of_text()[i]] += cosine_sim(clip, std::span<const float>(t.match_vec));
  }
  return scores;
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k,
                               std::span<const std::uint8_t> mask) {
  if (k == 0) throw ConfigError("top_k: k must be >= 1");
  if (!mask.empty() && mask.size() != scores.size()) throw DataError("top_k: mask size mismatch");
  std::vector<std::size_t> ids;
  ids.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mask.empty() || mask[i] != 0) ids.push_back(i);
  }
  const std::size_t take = std::min(k, ids.size());
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take), ids.end(), better);
  ids.resize(take);
  return ids;
}

StateMatch state_vnm(std::span<const float> clip, const NodeSpaces& spaces, const TextStore& store,
                     std::size_t k, NodeScoring scoring) {
  bool found = false;
  double best = 0.0;
  StateType best_type = StateType::before;
  for (StateType type : {StateType::before, StateType::mid, StateType::after}) {
    const NodeSpace& space = spaces.at(level_of(type));
    for (std::int64_t id : space.text_ids()) {
      const TextEmbedding& t = store.at(TextKey{space.level(), id});
      const double s = cosine_sim(clip, std::span<const float>(t.match_vec));
      // Strict comparison keeps the earliest phase on exact ties.
      if (!found || s > best) {
        found = true;
        best = s;
        best_type = type;
      }
    }
  }
  if (!found) throw DataError("state_vnm: empty state node spaces");
  StateMatch m;
  m.type = best_type;
  m.nodes = top_k(score_nodes(clip, spaces.at(level_of(best_type)), store, scoring), k);
  return m;
}

void StepGraph::add_edge(std::size_t from, std::size_t to, EdgeSource source) {
  if (from >= node_count() || to >= node_count()) throw DataError("step graph: node out of range");
  if (from == to) return;
  auto [it, inserted] = edges_.try_emplace({from, to}, 0);
  it->second |= source;
  if (inserted) {
    out_[from].insert(std::lower_bound(out_[from].begin(), out_[from].end(), to), to);
    in_[to].insert(std::lower_bound(in_[to].begin(), in_[to].end(), from), from);
  }
}

StepGraph build_step_graph(const KnowledgeBase& base, const NodeSpace& step_space,
                           std::span<const PseudoLabelRecord> labeled) {
  StepGraph graph(step_space.node_count());
  for (const TaskEntry& task : base.tasks()) {
    for (std::size_t j = 1; j < task.step_ids.size(); ++j) {
      graph.add_edge(step_space.node_of(task.step_ids[j - 1]), step_space.node_of(task.step_ids[j]),
                     kEdgeFromProcedure);
    }
  }
  for (std::size_t i = 1; i < labeled.size(); ++i) {
    const PseudoLabelRecord& prev = labeled[i - 1];
    const PseudoLabelRecord& cur = labeled[i];
    if (prev.video_id != cur.video_id) continue;
    if (prev.step_vnm.empty() || cur.step_vnm.empty()) {
      throw DataError("build_step_graph: clip without a step label");
    }
    graph.add_edge(prev.step_vnm.front(), cur.step_vnm.front(), kEdgeFromChronology);
  }
  return graph;
}

NrlSets nrl_labels(std::size_t node, const StepGraph& graph, int hop) {
  if (hop != 1) throw ConfigError("node relation labels support hop = 1 only");
  return NrlSets{graph.predecessors(node), graph.successors(node)};
}

CoOccurrence::CoOccurrence(const KnowledgeBase& base, const NodeSpace& task_space,
                           const NodeSpace& step_space)
    : tasks_(task_space.node_count()),
      steps_(step_space.node_count()),
      bits_(tasks_ * steps_, 0) {
  for (const TaskEntry& task : base.tasks()) {
    const std::size_t t = task_space.node_of(task.task_id);
    for (std::int64_t sid : task.step_ids) bits_[t * steps_ + step_space.node_of(sid)] = 1;
  }
}

std::vector<std::size_t> tcl_labels(std::size_t best_task_node, const CoOccurrence& cooc,
                                    std::span<const double> step_scores, std::size_t k) {
  if (best_task_node >= cooc.task_count()) throw DataError("tcl_labels: task node out of range");
  if (step_scores.size() != cooc.step_count()) throw DataError("tcl_labels: score size mismatch");
  return top_k(step_scores, k, cooc.row(best_task_node));
}

std::vector<PseudoLabelRecord> generate_all(const ClipStore& clips, const NodeSpaces& spaces,
                                            const KnowledgeBase& base, const TextStore& store,
                                            const LabelingConfig& config) {
  const CoOccurrence cooc(base, spaces.task, spaces.step);
  std::vector<PseudoLabelRecord> records;
  records.reserve(clips.size());
  for (const ClipRecord& clip : clips.clips()) {
    try {
      const std::span<const float> f(clip.feature);
      PseudoLabelRecord r;
      r.video_id = clip.video_id;
      r.segment_index = clip.segment_index;
      const auto task_scores = score_nodes(f, spaces.task, store, config.scoring);
      r.task_vnm = top_k(task_scores, config.k);
      const auto step_scores = score_nodes(f, spaces.step, store, config.scoring);
      r.step_vnm = top_k(step_scores, config.k);
      StateMatch sm = state_vnm(f, spaces, store, config.k, config.scoring);
      r.state_type = sm.type;
      r.state_vnm = std::move(sm.nodes);
      r.step_tcl = tcl_labels(r.task_vnm.front(), cooc, step_scores, config.k);
      records.push_back(std::move(r));
    } catch (const Error& e) {
      throw DataError("labeling clip (" + std::to_string(clip.video_id) + "," +
                      std::to_string(clip.segment_index) + "): " + e.what());
    }
  }
  const StepGraph graph = build_step_graph(base, spaces.step, records);
  for (PseudoLabelRecord& r : records) {
    NrlSets sets = nrl_labels(r.step_vnm.front(), graph, 1);
    r.nrl_in = std::move(sets.in);
    r.nrl_out = std::move(sets.out);
  }
  return records;
}

std::string labels_to_jsonl(std::span<const PseudoLabelRecord> records) {
  std::string out;
  for (const PseudoLabelRecord& r : records) {
    json j;
    j["schema"] = kLabelSchemaVersion;
    j["video"] = r.video_id;
    j["segment"] = r.segment_index;
    j["task_vnm"] = r.task_vnm;
    j["step_vnm"] = r.step_vnm;
    j["state_type"] = std::string(to_string(r.state_type));
    j["state_vnm"] = r.state_vnm;
    j["step_tcl"] = r.step_tcl;
    j["nrl_in"] = r.nrl_in;
    j["nrl_out"] = r.nrl_out;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<PseudoLabelRecord> labels_from_jsonl(std::string_view text) {
  std::vector<PseudoLabelRecord> records;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (io::trim(line).empty()) continue;
    try {
      json j = json::parse(line);
      if (j.at("schema").get<int>() != kLabelSchemaVersion) {
        throw DataError("unsupported label schema " + j.at("schema").dump());
      }
      PseudoLabelRecord r;
      r.video_id = j.at("video").get<std::int64_t>();
      r.segment_index = j.at("segment").get<std::int64_t>();
      r.task_vnm = j.at("task_vnm").get<std::vector<std::size_t>>();
      r.step_vnm = j.at("step_vnm").get<std::vector<std::size_t>>();
      r.state_type = parse_state_type(j.at("state_type").get<std::string>());
      r.state_vnm = j.at("state_vnm").get<std::vector<std::size_t>>();
      r.step_tcl = j.at("step_tcl").get<std::vector<std::size_t>>();
      r.nrl_in = j.at("nrl_in").get<std::vector<std::size_t>>();
      r.nrl_out = j.at("nrl_out").get<std::vector<std::size_t>>();
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError("labels line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void save_labels(std::span<const PseudoLabelRecord> records, const std::filesystem::path& path) {
  io::write_file_atomic(path, labels_to_jsonl(records));
}

std::vector<PseudoLabelRecord> load_labels(const std::filesystem::path& path) {
  return labels_from_jsonl(io::read_file(path));
}

}  // namespace tss
