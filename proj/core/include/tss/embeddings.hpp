#pragma once

#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "tss/error.hpp"
#include "tss/level.hpp"

namespace tss {

inline constexpr std::size_t kMatchDim = 512;    // joint video/text space
inline constexpr std::size_t kClusterDim = 768;  // sentence-encoder space used for clustering
inline constexpr std::size_t kSubclipsPerClip = 3;

// One 9.6 s segment of a video: its pooled backbone feature.
struct ClipRecord {
  std::int64_t video_id = 0;
  std::int64_t segment_index = 0;
  std::vector<float> feature;

  bool operator==(const ClipRecord&) const = default;
};

struct TextKey {
  Level level = Level::task;
  std::int64_t id = 0;

  auto operator<=>(const TextKey&) const = default;
};

struct TextEmbedding {
  TextKey owner;
  std::vector<float> match_vec;
  std::vector<float> cluster_vec;

  bool operator==(const TextEmbedding&) const = default;
};

// Elementwise mean of the three sub-clip features of one segment.
std::vector<float> pool_subclips(std::span<const std::vector<float>> subclips);

// (a.b) / (|a| |b|) accumulated in double, left to right.
template <typename T, typename U>
double cosine_sim(std::span<const T> a, std::span<const U> b) {
  if (a.size() != b.size()) throw DataError("cosine_sim: dimension mismatch");
  double dot = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    dot += x * y;
    aa += x * x;
    bb += y * y;
  }
  if (aa == 0.0 || bb == 0.0) throw DataError("cosine_sim: zero vector");
  return dot / (std::sqrt(aa) * std::sqrt(bb));
}

inline double cosine_sim(const std::vector<float>& a, const std::vector<float>& b) {
  return cosine_sim(std::span<const float>(a), std::span<const float>(b));
}

class ClipStore {
 public:
  explicit ClipStore(std::size_t dim = kMatchDim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return clips_.size(); }
  bool empty() const noexcept { return clips_.empty(); }

  // Keeps records sorted by (video_id, segment_index); rejects duplicates,
  // wrong dimensions and non-finite values.
  void add(ClipRecord clip);
  const std::vector<ClipRecord>& clips() const noexcept { return clips_; }
  const ClipRecord& operator[](std::size_t i) const { return clips_[i]; }

  bool operator==(const ClipStore&) const = default;

 private:
  std::size_t dim_;
  std::vector<ClipRecord> clips_;
};

class TextStore {
 public:
  TextStore(std::size_t match_dim = kMatchDim, std::size_t cluster_dim = kClusterDim)
      : match_dim_(match_dim), cluster_dim_(cluster_dim) {}

  std::size_t match_dim() const noexcept { return match_dim_; }
  std::size_t cluster_dim() const noexcept { return cluster_dim_; }
  std::size_t size() const noexcept { return texts_.size(); }

  void add(TextEmbedding text);
  bool contains(TextKey key) const { return texts_.contains(key); }
  const TextEmbedding& at(TextKey key) const;
  // All embeddings of one level in ascending id order.
  std::vector<const TextEmbedding*> level(Level level) const;
  const std::map<TextKey, TextEmbedding>& all() const noexcept { return texts_; }

  bool operator==(const TextStore&) const = default;

 private:
  std::size_t match_dim_;
  std::size_t cluster_dim_;
  std::map<TextKey, TextEmbedding> texts_;
};

// `.tssfeat`: 32-byte little-endian header (magic "TSSFEAT\0", version,
// record kind, dim, aux dim, count) followed by f32 rows; ids live in the
// `<name>.ids.jsonl` sidecar.
void save_clip_store(const ClipStore& store, const std::filesystem::path& path);
ClipStore load_clip_store(const std::filesystem::path& path);
void save_text_store(const TextStore& store, const std::filesystem::path& path);
TextStore load_text_store(const std::filesystem::path& path);

// Raw sub-clip features: three consecutive rows per segment.
void save_subclip_store(const std::vector<ClipRecord>& subclips, std::size_t dim,
                        const std::filesystem::path& path);
// Loads a sub-clip file and pools each segment's rows into a ClipStore.
ClipStore load_and_pool_subclips(const std::filesystem::path& path);

}  // namespace tss
