#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "tss/embeddings.hpp"

namespace tss {

enum class FusionMode { concat, avgpool };
// Concat layout: per-timestep interleave (t0: task, step, state; t1: ...)
// or whole sequences one after another.
enum class ConcatLayout { interleave, block };

std::string_view to_string(FusionMode mode) noexcept;
FusionMode parse_fusion_mode(std::string_view name);
std::string_view to_string(ConcatLayout layout) noexcept;
ConcatLayout parse_concat_layout(std::string_view name);

// Row-major rows x dim matrix of features.
struct Sequence {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  std::span<const float> row(std::size_t r) const { return {values.data() + r * dim, dim}; }
  bool operator==(const Sequence&) const = default;
};

struct FusedSequence {
  FusionMode mode = FusionMode::concat;
  Sequence features;
  // Source of each output row: 0 task, 1 step, 2 state; -1 for avgpool.
  std::vector<int> source;
  // Input timestep of each output row.
  std::vector<std::size_t> time;
};

FusedSequence fuse(const Sequence& seq_task, const Sequence& seq_step, const Sequence& seq_state,
                   FusionMode mode, ConcatLayout layout = ConcatLayout::interleave);

struct SequenceRow {
  std::int64_t video_id = 0;
  std::int64_t segment_index = 0;
  std::uint32_t slot = 0;
  std::vector<float> feature;

  bool operator==(const SequenceRow&) const = default;
};

// Per-video feature sequences. Rows are grouped by ascending video id and
// keep their insertion order within a video.
class SequenceStore {
 public:
  explicit SequenceStore(std::size_t dim = kMatchDim) : dim_(dim) {}

  // One slot-0 row per clip.
  static SequenceStore from_clips(const ClipStore& clips);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return rows_.size(); }
  const std::vector<SequenceRow>& rows() const noexcept { return rows_; }

  // Videos must arrive in ascending order; rows of one video contiguously.
  void append(SequenceRow row);

  // video id -> [begin, end) row range.
  const std::map<std::int64_t, std::pair<std::size_t, std::size_t>>& videos() const noexcept {
    return videos_;
  }

  bool operator==(const SequenceStore& other) const {
    return dim_ == other.dim_ && rows_ == other.rows_;
  }

 private:
  std::size_t dim_;
  std::vector<SequenceRow> rows_;
  std::map<std::int64_t, std::pair<std::size_t, std::size_t>> videos_;
};

// Fuses the per-video sequences of three encoded clip stores that cover the
// same clips.
SequenceStore fuse_stores(const ClipStore& task, const ClipStore& step, const ClipStore& state,
                          FusionMode mode, ConcatLayout layout = ConcatLayout::interleave);

void save_sequence_store(const SequenceStore& store, const std::filesystem::path& path);
SequenceStore load_sequence_store(const std::filesystem::path& path);

}  // namespace tss
