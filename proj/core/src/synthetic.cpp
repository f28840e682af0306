#include "tss/synthetic.hpp"

#include <array>
#include <cmath>
#include <nlohmann/json.hpp>

#include "tss/error.hpp"
#include "tss/io.hpp"
#include "tss/rng.hpp"

namespace tss {

using json = nlohmann::ordered_json;

void validate(const SynthSpec& spec) {
  if (spec.n_tasks == 0 || spec.steps_per_task == 0 || spec.clips_per_step == 0) {
    throw ConfigError("synthetic counts must be >= 1");
  }
  if (spec.match_dim == 0 || spec.cluster_dim == 0) {
    throw ConfigError("synthetic dimensions must be >= 1");
  }
  if (!(spec.noise >= 0.0) || !(spec.step_spread >= 0.0) || !(spec.state_spread >= 0.0)) {
    throw ConfigError("synthetic noise and spreads must be >= 0");
  }
}

std::string spec_to_json(const SynthSpec& spec) {
  json j;
  j["n_tasks"] = spec.n_tasks;
  j["steps_per_task"] = spec.steps_per_task;
  j["clips_per_step"] = spec.clips_per_step;
  j["match_dim"] = spec.match_dim;
  j["cluster_dim"] = spec.cluster_dim;
  j["noise"] = spec.noise;
  j["step_spread"] = spec.step_spread;
  j["state_spread"] = spec.state_spread;
  j["seed"] = spec.seed;
  return j.dump(2) + "\n";
}

SynthSpec spec_from_json(const std::string& text) {
  SynthSpec s;
  try {
    json j = json::parse(text);
    s.n_tasks = j.value("n_tasks", s.n_tasks);
    s.steps_per_task = j.value("steps_per_task", s.steps_per_task);
    s.clips_per_step = j.value("clips_per_step", s.clips_per_step);
    s.match_dim = j.value("match_dim", s.match_dim);
    s.cluster_dim = j.value("cluster_dim", s.cluster_dim);
    s.noise = j.value("noise", s.noise);
    s.step_spread = j.value("step_spread", s.step_spread);
    s.state_spread = j.value("state_spread", s.state_spread);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad synthetic spec: ") + e.what());
  }
  validate(s);
  return s;
}

namespace {

using Vec = std::vector<double>;

Vec normalized(Vec v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) throw NumericError("synthetic prototype has zero norm");
  for (double& x : v) x /= n;
  return v;
}

Vec random_unit(std::size_t dim, Rng& rng) {
  Vec v(dim);
  for (double& x : v) x = rng.normal();
  return normalized(std::move(v));
}

Vec perturbed(const Vec& base, double spread, Rng& rng) {
  Vec dir = random_unit(base.size(), rng);
  Vec v(base.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = base[i] + spread * dir[i];
  return normalized(std::move(v));
}

std::vector<float> to_f32(const Vec& v) { return {v.begin(), v.end()}; }

// Prototypes of one embedding space, indexed [task], [step], [step][phase].
struct Prototypes {
  std::vector<Vec> task;
  std::vector<Vec> step;
  std::vector<std::array<Vec, 3>> state;
};

Prototypes make_prototypes(const SynthSpec& spec, std::size_t dim, Rng& rng) {
  Prototypes p;
  for (std::size_t t = 0; t < spec.n_tasks; ++t) {
    p.task.push_back(random_unit(dim, rng));
    for (std::size_t j = 0; j < spec.steps_per_task; ++j) {
      p.step.push_back(perturbed(p.task.back(), spec.step_spread, rng));
      std::array<Vec, 3> phases;
      for (Vec& ph : phases) ph = perturbed(p.step.back(), spec.state_spread, rng);
      p.state.push_back(std::move(phases));
    }
  }
  return p;
}

constexpr std::array<const char*, 3> kPhaseNames{"before", "mid", "after"};
constexpr std::array<Level, 3> kPhaseLevels{Level::before, Level::mid, Level::after};

}  // namespace

SynthCorpus generate(const SynthSpec& spec) {
  validate(spec);
  Rng match_rng(derive_seed(spec.seed, "synth:match"));
  Rng cluster_rng(derive_seed(spec.seed, "synth:cluster"));
  Rng clip_rng(derive_seed(spec.seed, "synth:clips"));
  const Prototypes match = make_prototypes(spec, spec.match_dim, match_rng);
  const Prototypes cluster = make_prototypes(spec, spec.cluster_dim, cluster_rng);

  std::vector<TaskEntry> tasks;
  std::vector<StepEntry> steps;
  std::vector<StateTriple> states;
  SynthCorpus out{{}, TextStore(spec.match_dim, spec.cluster_dim), ClipStore(spec.match_dim), {}};

  for (std::size_t t = 0; t < spec.n_tasks; ++t) {
    const auto task_id = static_cast<std::int64_t>(t);
    tasks.push_back({task_id, "task " + std::to_string(t), {}});
    out.texts.add({{Level::task, task_id}, to_f32(match.task[t]), to_f32(cluster.task[t])});
    for (std::size_t j = 0; j < spec.steps_per_task; ++j) {
      const std::size_t s = t * spec.steps_per_task + j;
      const auto step_id = static_cast<std::int64_t>(s);
      const std::string headline = "do step " + std::to_string(j) + " of task " + std::to_string(t);
      steps.push_back({step_id, task_id, headline, static_cast<int>(j)});
      states.push_back({step_id, "before " + headline, "during " + headline, "after " + headline});
      out.texts.add({{Level::step, step_id}, to_f32(match.step[s]), to_f32(cluster.step[s])});
      for (std::size_t ph = 0; ph < 3; ++ph) {
        out.texts.add({{kPhaseLevels[ph], step_id}, to_f32(match.state[s][ph]),
                       to_f32(cluster.state[s][ph])});
      }
    }
  }
  out.base = KnowledgeBase::from_records(std::move(tasks), std::move(steps), std::move(states));

  for (std::size_t t = 0; t < spec.n_tasks; ++t) {
    for (std::size_t c = 0; c < spec.clips_per_step; ++c) {
      const auto video = static_cast<std::int64_t>(t * spec.clips_per_step + c);
      for (std::size_t j = 0; j < spec.steps_per_task; ++j) {
        const std::size_t s = t * spec.steps_per_task + j;
        const std::size_t ph = clip_rng.below(3);
        Vec v = match.state[s][ph];
        for (double& x : v) x += spec.noise * clip_rng.normal();
        out.clips.add({video, static_cast<std::int64_t>(j), to_f32(normalized(std::move(v)))});
        out.annotations.push_back({video, static_cast<std::int64_t>(j),
                                   static_cast<std::int64_t>(s), static_cast<std::int64_t>(t),
                                   kPhaseNames[ph]});
      }
    }
  }
  return out;
}

void write_synthetic(const SynthCorpus& corpus, const SynthSpec& spec,
                     const std::filesystem::path& dir) {
  std::string kb;
  std::string states;
  for (const TaskEntry& t : corpus.base.tasks()) {
    json r;
    r["kind"] = "task";
    r["id"] = t.task_id;
    r["title"] = t.title;
    kb += r.dump() + "\n";
  }
  for (const StepEntry& s : corpus.base.steps()) {
    json r;
    r["kind"] = "step";
    r["id"] = s.step_id;
    r["task"] = s.task_id;
    r["order"] = s.order_index;
    r["headline"] = s.headline;
    kb += r.dump() + "\n";
  }
  for (const StateTriple& st : corpus.base.states()) {
    json r;
    r["kind"] = "state";
    r["step"] = st.step_id;
    r["before"] = st.before;
    r["mid"] = st.mid;
    r["after"] = st.after;
    states += r.dump() + "\n";
  }
  io::write_file_atomic(dir / "corpus.jsonl", kb);
  io::write_file_atomic(dir / "states.jsonl", states);
  save_text_store(corpus.texts, dir / "texts.tssfeat");
  save_clip_store(corpus.clips, dir / "clips.tssfeat");
  save_annotations(corpus.annotations, dir / "annotations.jsonl");
  io::write_file_atomic(dir / "synth_spec.json", spec_to_json(spec));
}

}  // namespace tss
