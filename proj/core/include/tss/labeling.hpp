#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tss/clustering.hpp"
#include "tss/corpus.hpp"
#include "tss/embeddings.hpp"

namespace tss {

inline constexpr std::size_t kDefaultTopK = 3;
inline constexpr int kLabelSchemaVersion = 1;

enum class StateType : std::uint8_t { before = 0, mid = 1, after = 2 };

std::string_view to_string(StateType type) noexcept;
StateType parse_state_type(std::string_view name);
Level level_of(StateType type) noexcept;

// Pseudo-labels of one clip across the five supervision families.
struct PseudoLabelRecord {
  std::int64_t video_id = 0;
  std::int64_t segment_index = 0;
  std::vector<std::size_t> task_vnm;
  std::vector<std::size_t> step_vnm;
  StateType state_type = StateType::before;
  std::vector<std::size_t> state_vnm;
  std::vector<std::size_t> step_tcl;
  std::vector<std::size_t> nrl_in;   // ascending
  std::vector<std::size_t> nrl_out;  // ascending

  bool operator==(const PseudoLabelRecord&) const = default;
};

// The five node spaces pseudo-labels are drawn from.
struct NodeSpaces {
  NodeSpace task;
  NodeSpace step;
  NodeSpace before;
  NodeSpace mid;
  NodeSpace after;

  const NodeSpace& at(Level level) const;
};

NodeSpaces build_node_spaces(const KnowledgeBase& base, const TextStore& store,
                             double threshold = kDefaultClusterThreshold,
                             Linkage linkage = Linkage::average);
void save_node_spaces(const NodeSpaces& spaces, const std::filesystem::path& dir);
NodeSpaces load_node_spaces(const std::filesystem::path& dir);

// How a clip is scored against a node.
enum class NodeScoring {
  summed_texts,  // sum of cosine similarities over the node's raw texts
  centroid,      // cosine similarity to the node centroid
};

// Score per node id for one clip.
std::vector<double> score_nodes(std::span<const float> clip, const NodeSpace& space,
                                const TextStore& store,
                                NodeScoring scoring = NodeScoring::summed_texts);

// The k best node ids, descending by score, ascending id on ties. k is
// clamped to the number of candidates; `mask`, when given, restricts the
// candidates to nodes with a non-zero entry.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k,
                               std::span<const std::uint8_t> mask = {});

struct StateMatch {
  StateType type = StateType::before;
  std::vector<std::size_t> nodes;
};

// Routes the clip to the phase of its single best-matching raw state text
// (ties: before < mid < after, then lower text id) and ranks nodes of that
// phase only.
StateMatch state_vnm(std::span<const float> clip, const NodeSpaces& spaces, const TextStore& store,
                     std::size_t k = kDefaultTopK, NodeScoring scoring = NodeScoring::summed_texts);

enum EdgeSource : std::uint8_t {
  kEdgeFromProcedure = 1,   // consecutive steps of a task
  kEdgeFromChronology = 2,  // consecutive clips of a video
};

// Directed graph over step nodes; no self loops, no duplicate edges.
class StepGraph {
 public:
  explicit StepGraph(std::size_t node_count = 0) : in_(node_count), out_(node_count) {}

  std::size_t node_count() const noexcept { return out_.size(); }
  void add_edge(std::size_t from, std::size_t to, EdgeSource source);
  const std::map<std::pair<std::size_t, std::size_t>, std::uint8_t>& edges() const noexcept {
    return edges_;
  }
  const std::vector<std::size_t>& predecessors(std::size_t node) const { return in_.at(node); }
  const std::vector<std::size_t>& successors(std::size_t node) const { return out_.at(node); }

 private:
  std::map<std::pair<std::size_t, std::size_t>, std::uint8_t> edges_;
  std::vector<std::vector<std::size_t>> in_;
  std::vector<std::vector<std::size_t>> out_;
};

// `labeled` must be sorted by (video, segment) and carry step_vnm.
StepGraph build_step_graph(const KnowledgeBase& base, const NodeSpace& step_space,
                           std::span<const PseudoLabelRecord> labeled);

struct NrlSets {
  std::vector<std::size_t> in;
  std::vector<std::size_t> out;
};

// Only hop = 1 is supported.
NrlSets nrl_labels(std::size_t node, const StepGraph& graph, int hop = 1);

// Boolean task-node x step-node matrix: row t is set at the nodes of task t's steps.
class CoOccurrence {
 public:
  CoOccurrence(const KnowledgeBase& base, const NodeSpace& task_space, const NodeSpace& step_space);

  std::size_t task_count() const noexcept { return tasks_; }
  std::size_t step_count() const noexcept { return steps_; }
  bool at(std::size_t task_node, std::size_t step_node) const {
    return bits_[task_node * steps_ + step_node] != 0;
  }
  std::span<const std::uint8_t> row(std::size_t task_node) const {
    return std::span<const std::uint8_t>(bits_).subspan(task_node * steps_, steps_);
  }

 private:
  std::size_t tasks_;
  std::size_t steps_;
  std::vector<std::uint8_t> bits_;
};

// Step nodes of the clip's best task, ranked by their step scores.
std::vector<std::size_t> tcl_labels(std::size_t best_task_node, const CoOccurrence& cooc,
                                    std::span<const double> step_scores,
                                    std::size_t k = kDefaultTopK);

struct LabelingConfig {
  std::size_t k = kDefaultTopK;
  NodeScoring scoring = NodeScoring::summed_texts;
};

// One record per clip, in clip-store order.
std::vector<PseudoLabelRecord> generate_all(const ClipStore& clips, const NodeSpaces& spaces,
                                            const KnowledgeBase& base, const TextStore& store,
                                            const LabelingConfig& config = {});

std::string labels_to_jsonl(std::span<const PseudoLabelRecord> records);
std::vector<PseudoLabelRecord> labels_from_jsonl(std::string_view text);
void save_labels(std::span<const PseudoLabelRecord> records, const std::filesystem::path& path);
std::vector<PseudoLabelRecord> load_labels(const std::filesystem::path& path);

}  // namespace tss
