#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tss {

struct TaskEntry {
  std::int64_t task_id = 0;
  std::string title;
  std::vector<std::int64_t> step_ids;  // in procedure order

  bool operator==(const TaskEntry&) const = default;
};

struct StepEntry {
  std::int64_t step_id = 0;
  std::int64_t task_id = 0;
  std::string headline;
  int order_index = 0;

  bool operator==(const StepEntry&) const = default;
};

struct StateTriple {
  std::int64_t step_id = 0;
  std::string before;
  std::string mid;
  std::string after;

  bool operator==(const StateTriple&) const = default;
};

// Tasks, their ordered steps and (optionally) one before/mid/after state
// description per step. Immutable once built; every constructor path
// validates the referential invariants.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;

  // Tasks are sorted by id and steps by id. `step_ids` of each task are
  // rebuilt from the steps' order indices. States must either be absent or
  // cover every step exactly once.
  static KnowledgeBase from_records(std::vector<TaskEntry> tasks, std::vector<StepEntry> steps,
                                    std::vector<StateTriple> states);

  const std::vector<TaskEntry>& tasks() const noexcept { return tasks_; }
  const std::vector<StepEntry>& steps() const noexcept { return steps_; }
  bool has_states() const noexcept { return !states_.empty(); }
  // Aligned with steps(); empty when has_states() is false.
  const std::vector<StateTriple>& states() const noexcept { return states_; }

  const TaskEntry& task(std::int64_t task_id) const;
  const StepEntry& step(std::int64_t step_id) const;
  const StateTriple& states_of(std::int64_t step_id) const;
  std::size_t state_text_count() const noexcept { return 3 * states_.size(); }

  bool operator==(const KnowledgeBase& other) const {
    return tasks_ == other.tasks_ && steps_ == other.steps_ && states_ == other.states_;
  }

 private:
  std::vector<TaskEntry> tasks_;
  std::vector<StepEntry> steps_;
  std::vector<StateTriple> states_;
  std::unordered_map<std::int64_t, std::size_t> task_index_;
  std::unordered_map<std::int64_t, std::size_t> step_index_;
};

// JSONL, one tagged record per line:
//   {"kind":"task","id":..,"title":..}
//   {"kind":"step","id":..,"task":..,"order":..,"headline":..}
//   {"kind":"state","step":..,"before":..,"mid":..,"after":..}
KnowledgeBase read_knowledge_base(std::istream& in, std::string_view source_name = "<stream>");
KnowledgeBase load_knowledge_base(const std::filesystem::path& path);
std::string knowledge_base_to_jsonl(const KnowledgeBase& base);
void save_knowledge_base(const KnowledgeBase& base, const std::filesystem::path& path);

// The state-description prompt with the goal, step and the step's first
// word substituted. Pure: identical inputs produce identical bytes.
std::string render_state_prompt(std::string_view task, std::string_view step);

// Source of before/mid/after texts for a step (an LLM in the original
// pipeline; a file or a template here).
class StateProvider {
 public:
  virtual ~StateProvider() = default;
  virtual StateTriple states_for(const TaskEntry& task, const StepEntry& step) = 0;
};

// Serves state records read from a JSONL file of {"kind":"state",...} lines.
class FileStateProvider final : public StateProvider {
 public:
  explicit FileStateProvider(const std::filesystem::path& path);
  StateTriple states_for(const TaskEntry& task, const StepEntry& step) override;

 private:
  std::unordered_map<std::int64_t, StateTriple> states_;
};

// Deterministic offline stand-in that fills a fixed template per phase.
class TemplateStateProvider final : public StateProvider {
 public:
  StateTriple states_for(const TaskEntry& task, const StepEntry& step) override;
};

// Returns a copy of `base` with one StateTriple per step. Any provider
// failure aborts with the offending step id.
KnowledgeBase attach_states(const KnowledgeBase& base, StateProvider& provider);

}  // namespace tss
