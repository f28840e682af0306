#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tss/corpus.hpp"
#include "tss/embeddings.hpp"
#include "tss/eval.hpp"

namespace tss {

// Planted hierarchy. Each step prototype is its task prototype plus a
// random direction of length `step_spread`, each state prototype its step
// prototype plus one of length `state_spread`, all renormalised. Clip
// features are a state prototype plus N(0, noise^2) per dimension,
// renormalised.
struct SynthSpec {
  std::size_t n_tasks = 20;
  std::size_t steps_per_task = 5;
  std::size_t clips_per_step = 10;
  std::size_t match_dim = kMatchDim;
  std::size_t cluster_dim = kClusterDim;
  double noise = 0.05;
  double step_spread = 1.0;
  double state_spread = 0.5;
  std::uint64_t seed = 0;

  bool operator==(const SynthSpec&) const = default;
};

void validate(const SynthSpec& spec);
std::string spec_to_json(const SynthSpec& spec);
SynthSpec spec_from_json(const std::string& text);

// One video per (task, c) for c < clips_per_step; the video walks the
// task's steps in order, one segment per step, each in a random phase.
struct SynthCorpus {
  KnowledgeBase base;
  TextStore texts;
  ClipStore clips;
  std::vector<Annotation> annotations;
};

SynthCorpus generate(const SynthSpec& spec);

// Writes corpus.jsonl (tasks and steps), states.jsonl, texts.tssfeat,
// clips.tssfeat, annotations.jsonl and synth_spec.json into `dir`.
void write_synthetic(const SynthCorpus& corpus, const SynthSpec& spec,
                     const std::filesystem::path& dir);

}  // namespace tss
