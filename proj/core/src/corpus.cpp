#include "tss/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "tss/error.hpp"
#include "tss/io.hpp"

namespace tss {

using json = nlohmann::ordered_json;

namespace {

const json& require(const json& record, const char* key, std::string_view where) {
  auto it = record.find(key);
  if (it == record.end()) throw DataError(std::string(where) + ": missing field '" + key + "'");
  return *it;
}

std::int64_t require_int(const json& record, const char* key, std::string_view where) {
  const json& v = require(record, key, where);
  if (!v.is_number_integer()) {
    throw DataError(std::string(where) + ": field '" + key + "' must be an integer");
  }
  return v.get<std::int64_t>();
}

std::string require_text(const json& record, const char* key, std::string_view where) {
  const json& v = require(record, key, where);
  if (!v.is_string()) throw DataError(std::string(where) + ": field '" + key + "' must be a string");
  return io::trim(v.get<std::string>());
}

StateTriple parse_state(const json& record, std::string_view where) {
  StateTriple s;
  s.step_id = require_int(record, "step", where);
  s.before = require_text(record, "before", where);
  s.mid = require_text(record, "mid", where);
  s.after = require_text(record, "after", where);
  return s;
}

void check_state_texts(const StateTriple& s) {
  if (s.before.empty() || s.mid.empty() || s.after.empty()) {
    throw DataError("state texts for step " + std::to_string(s.step_id) + " must be non-empty");
  }
}

}  // namespace

KnowledgeBase KnowledgeBase::from_records(std::vector<TaskEntry> tasks,
                                          std::vector<StepEntry> steps,
                                          std::vector<StateTriple> states) {
  KnowledgeBase kb;
  std::sort(tasks.begin(), tasks.end(),
            [](const TaskEntry& a, const TaskEntry& b) { return a.task_id < b.task_id; });
  std::sort(steps.begin(), steps.end(),
            [](const StepEntry& a, const StepEntry& b) { return a.step_id < b.step_id; });

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!kb.task_index_.emplace(tasks[i].task_id, i).second) {
      throw DataError("duplicate task id " + std::to_string(tasks[i].task_id));
    }
    if (tasks[i].title.empty()) {
      throw DataError("task " + std::to_string(tasks[i].task_id) + " has an empty title");
    }
  }

  std::map<std::int64_t, std::vector<std::pair<int, std::int64_t>>> by_task;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const StepEntry& s = steps[i];
    if (!kb.step_index_.emplace(s.step_id, i).second) {
      throw DataError("duplicate step id " + std::to_string(s.step_id));
    }
    if (!kb.task_index_.contains(s.task_id)) {
      throw DataError("step " + std::to_string(s.step_id) + " references missing task " +
                      std::to_string(s.task_id));
    }
    if (s.headline.empty()) {
      throw DataError("step " + std::to_string(s.step_id) + " has an empty headline");
    }
    by_task[s.task_id].emplace_back(s.order_index, s.step_id);
  }

  for (TaskEntry& t : tasks) {
    auto it = by_task.find(t.task_id);
    if (it == by_task.end()) {
      throw DataError("task " + std::to_string(t.task_id) + " has no steps");
    }
    auto& ordered = it->second;
    std::sort(ordered.begin(), ordered.end());
    t.step_ids.clear();
    for (std::size_t j = 0; j < ordered.size(); ++j) {
      if (ordered[j].first != static_cast<int>(j)) {
        throw DataError("task " + std::to_string(t.task_id) +
                        ": step order indices must be 0..n-1 without gaps");
      }
      t.step_ids.push_back(ordered[j].second);
    }
  }

  if (!states.empty()) {
    std::vector<std::optional<StateTriple>> aligned(steps.size());
    for (StateTriple& s : states) {
      auto it = kb.step_index_.find(s.step_id);
      if (it == kb.step_index_.end()) {
        throw DataError("state record references missing step " + std::to_string(s.step_id));
      }
      check_state_texts(s);
      if (aligned[it->second]) {
        throw DataError("duplicate state record for step " + std::to_string(s.step_id));
      }
      aligned[it->second] = std::move(s);
    }
    kb.states_.reserve(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (!aligned[i]) {
        throw DataError("step " + std::to_string(steps[i].step_id) + " has no state record");
      }
      kb.states_.push_back(std::move(*aligned[i]));
    }
  }

  kb.tasks_ = std::move(tasks);
  kb.steps_ = std::move(steps);
  return kb;
}

const TaskEntry& KnowledgeBase::task(std::int64_t task_id) const {
  auto it = task_index_.find(task_id);
  if (it == task_index_.end()) throw DataError("unknown task " + std::to_string(task_id));
  return tasks_[it->second];
}

const StepEntry& KnowledgeBase::step(std::int64_t step_id) const {
  auto it = step_index_.find(step_id);
  if (it == step_index_.end()) throw DataError("unknown step " + std::to_string(step_id));
  return steps_[it->second];
}

const StateTriple& KnowledgeBase::states_of(std::int64_t step_id) const {
  auto it = step_index_.find(step_id);
  if (it == step_index_.end() || states_.empty()) {
    throw DataError("no states for step " + std::to_string(step_id));
  }
  return states_[it->second];
}

KnowledgeBase read_knowledge_base(std::istream& in, std::string_view source_name) {
  std::vector<TaskEntry> tasks;
  std::vector<StepEntry> steps;
  std::vector<StateTriple> states;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    const std::string where = std::string(source_name) + ":" + std::to_string(line_no);
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": parse error: " + e.what());
    }
    if (!record.is_object()) throw DataError(where + ": record must be a JSON object");
    const std::string kind = require(record, "kind", where).get<std::string>();
    if (kind == "task") {
      TaskEntry t;
      t.task_id = require_int(record, "id", where);
      t.title = require_text(record, "title", where);
      tasks.push_back(std::move(t));
    } else if (kind == "step") {
      StepEntry s;
      s.step_id = require_int(record, "id", where);
      s.task_id = require_int(record, "task", where);
      s.order_index = static_cast<int>(require_int(record, "order", where));
      s.headline = require_text(record, "headline", where);
      steps.push_back(std::move(s));
    } else if (kind == "state") {
      states.push_back(parse_state(record, where));
    } else {
      throw DataError(where + ": unknown record kind '" + kind + "'");
    }
  }
  return KnowledgeBase::from_records(std::move(tasks), std::move(steps), std::move(states));
}

KnowledgeBase load_knowledge_base(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open knowledge base " + path.string());
  return read_knowledge_base(in, path.filename().string());
}

std::string knowledge_base_to_jsonl(const KnowledgeBase& base) {
  std::string out;
  for (const TaskEntry& t : base.tasks()) {
    json r;
    r["kind"] = "task";
    r["id"] = t.task_id;
    r["title"] = t.title;
    out += r.dump() + "\n";
  }
  for (const TaskEntry& t : base.tasks()) {
    for (std::int64_t sid : t.step_ids) {
      const StepEntry& s = base.step(sid);
      json r;
      r["kind"] = "step";
      r["id"] = s.step_id;
      r["task"] = s.task_id;
      r["order"] = s.order_index;
      r["headline"] = s.headline;
      out += r.dump() + "\n";
    }
  }
  for (const StateTriple& s : base.states()) {
    json r;
    r["kind"] = "state";
    r["step"] = s.step_id;
    r["before"] = s.before;
    r["mid"] = s.mid;
    r["after"] = s.after;
    out += r.dump() + "\n";
  }
  return out;
}

void save_knowledge_base(const KnowledgeBase& base, const std::filesystem::path& path) {
  io::write_file_atomic(path, knowledge_base_to_jsonl(base));
}

std::string render_state_prompt(std::string_view task, std::string_view step) {
  if (task.empty() || step.empty()) {
    throw ConfigError("state prompt needs a non-empty task and step");
  }
  // First token under a single-space split (an all-space prefix gives "").
  const std::string_view word = step.substr(0, step.find(' '));

  std::string p;
  p += "First, describe details of [step] for [goal] with one verb.\n";
  p += "Second, use 3 sentences to describe status changes of objects before, transitioning, "
       "and after [step], avoiding using [word].\n";
  p += "Additionally, apply common-sense constraints to the before/after states based on "
       "[last step] and [next step].\n";
  p += "\n";
  p += "[goal]: Make Kimchi Fried Rice\n";
  p += "[step]: add ham\n";
  p += "[word]: add\n";
  p += "Description:\n";
  p += "Add diced ham into the fried rice\n";
  p += "Before:\n";
  p += "- The diced ham is separate from the pan.\n";
  p += "- The pan contains fried rice.\n";
  p += "- The pan has no ham on it.\n";
  p += "Transitioning:\n";
  p += "- The diced ham is picked up from outside the pan ...\n";
  p += "- The diced ham is sprinkled into the pan ...\n";
  p += "- The diced ham gradually mixes ...\n";
  p += "After:\n";
  p += "- The diced ham is mixed with the fried rice.\n";
  p += "- The ham is on the pan.\n";
  p += "- The pan contains ham.\n";
  p += "\n";
  p += "[goal]: ";
  p += task;
  p += "\n[step]: ";
  p += step;
  p += "\n[word]: ";
  p += word;
  p += "\n";
  return p;
}

FileStateProvider::FileStateProvider(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open state file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(line_no);
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": parse error: " + e.what());
    }
    auto kind = record.find("kind");
    if (kind != record.end() && *kind != "state") continue;
    StateTriple s = parse_state(record, where);
    const std::int64_t id = s.step_id;
    if (!states_.emplace(id, std::move(s)).second) {
      throw DataError(where + ": duplicate state record for step " + std::to_string(id));
    }
  }
}

StateTriple FileStateProvider::states_for(const TaskEntry&, const StepEntry& step) {
  auto it = states_.find(step.step_id);
  if (it == states_.end()) {
    throw DataError("no state description for step " + std::to_string(step.step_id));
  }
  return it->second;
}

StateTriple TemplateStateProvider::states_for(const TaskEntry& task, const StepEntry& step) {
  StateTriple s;
  s.step_id = step.step_id;
  s.before = "Before '" + step.headline + "' while working on '" + task.title +
             "', the objects are untouched.";
  s.mid = "During '" + step.headline + "', the objects are being changed.";
  s.after = "After '" + step.headline + "', the objects show the finished result.";
  return s;
}

KnowledgeBase attach_states(const KnowledgeBase& base, StateProvider& provider) {
  std::vector<StateTriple> states;
  states.reserve(base.steps().size());
  for (const StepEntry& step : base.steps()) {
    StateTriple s;
    try {
      s = provider.states_for(base.task(step.task_id), step);
    } catch (const std::exception& e) {
      throw DataError("state generation failed for step " + std::to_string(step.step_id) + ": " +
                      e.what());
    }
    s.step_id = step.step_id;
    s.before = io::trim(s.before);
    s.mid = io::trim(s.mid);
    s.after = io::trim(s.after);
    states.push_back(std::move(s));
  }
  return KnowledgeBase::from_records(base.tasks(), base.steps(), std::move(states));
}

}  // namespace tss
