#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tss/fusion.hpp"
#include "tss/model.hpp"
#include "tss/optimizer.hpp"

namespace tss {

// Ground truth for one segment.
struct Annotation {
  std::int64_t video_id = 0;
  std::int64_t segment_index = 0;
  std::int64_t step_id = 0;
  std::int64_t task_id = 0;
  std::string state;  // "before" / "mid" / "after", empty when unknown

  bool operator==(const Annotation&) const = default;
};

std::vector<Annotation> read_annotations(std::istream& in, const std::string& name);
std::vector<Annotation> load_annotations(const std::filesystem::path& path);
std::string annotations_to_jsonl(std::span<const Annotation> annotations);
void save_annotations(std::span<const Annotation> annotations, const std::filesystem::path& path);

enum class TaskKind { tr, sr, sf };
enum class EvalHead { mlp, transformer };

std::string_view to_string(TaskKind kind) noexcept;
TaskKind parse_task_kind(std::string_view name);
std::string_view to_string(EvalHead head) noexcept;
EvalHead parse_eval_head(std::string_view name);

struct DownstreamSample {
  std::int64_t video_id = 0;
  std::int64_t segment_index = 0;  // the labelled segment (TR: first segment)
  TaskKind kind = TaskKind::sr;
  std::size_t rows = 0;
  std::vector<float> features;  // rows x dim
  std::int64_t label = 0;       // raw task or step id
};

inline constexpr std::size_t kDefaultMaxHistory = 16;

// TR: the whole video -> task id. SR: one segment -> its step id.
// SF: segments up to t (at most `max_history` of them) -> step id of the
// next annotated segment. Only annotated segments are used.
std::vector<DownstreamSample> build_samples(const SequenceStore& features,
                                            std::span<const Annotation> annotations,
                                            TaskKind kind,
                                            std::size_t max_history = kDefaultMaxHistory);

enum class Split : std::uint8_t { train, val, test };

// 70/10/20 by a seeded hash of the video id.
Split split_of(std::int64_t video_id, std::uint64_t seed);

struct EvalConfig {
  EvalHead head = EvalHead::mlp;
  std::size_t batch_size = 16;
  AdamConfig adam{1e-4, 0.9, 0.999, 1e-8, 1e-3};
  std::size_t patience = 50;
  std::size_t max_epochs = 300;
  std::uint64_t seed = 0;
  std::size_t hidden = 0;  // 0: 128 for TR, 768 for SR/SF
  MlpOrder mlp_order = MlpOrder::literal;
};

std::size_t default_hidden(TaskKind kind) noexcept;

struct EvalResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t test_count = 0;
  std::size_t train_count = 0;
  std::size_t val_count = 0;
  std::size_t classes = 0;
  std::size_t best_epoch = 0;  // 0: the untrained head was never beaten
  std::size_t epochs_run = 0;
  double best_val_accuracy = 0.0;
};

// Fine-tunes a fresh head on the train split, keeps the parameters with
// the best validation accuracy and reports top-1 accuracy on the test
// split. Training stops after `patience` epochs without improvement.
EvalResult finetune_and_test(std::span<const DownstreamSample> samples, const EvalConfig& config);

struct ResultRow {
  std::string pathway;
  std::string dataset;
  EvalHead head = EvalHead::mlp;
  TaskKind task = TaskKind::sr;
  std::uint64_t seed = 0;
  EvalResult result;
};

std::string result_to_json(const ResultRow& row);
std::vector<ResultRow> load_results(const std::filesystem::path& path);

}  // namespace tss
