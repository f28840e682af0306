#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tss/corpus.hpp"
#include "tss/embeddings.hpp"
#include "tss/level.hpp"

namespace tss {

enum class Linkage { average, single, complete };

std::string_view to_string(Linkage linkage) noexcept;
Linkage parse_linkage(std::string_view name);

inline constexpr double kDefaultClusterThreshold = 0.09;

// cluster_of[i] is dense in 0..cluster_count-1, numbered by first member.
struct Partition {
  std::vector<std::size_t> cluster_of;
  std::size_t cluster_count = 0;
};

// Bottom-up agglomerative clustering on cosine distance (1 - cos). Merges
// the closest pair while its linkage distance is <= threshold; equal
// distances merge the lexicographically smallest (min id, max id) pair.
Partition agglomerate(std::span<const std::vector<float>> embeddings, double threshold,
                      Linkage linkage = Linkage::average);

// Canonical semantic nodes of one level.
class NodeSpace {
 public:
  NodeSpace() = default;
  NodeSpace(Level level, std::vector<std::int64_t> text_ids, std::vector<std::size_t> node_of_text,
            std::size_t node_count, std::vector<std::vector<double>> centroids);

  Level level() const noexcept { return level_; }
  std::size_t node_count() const noexcept { return node_count_; }
  // Raw texts of the level in ascending id order, with their node.
  const std::vector<std::int64_t>& text_ids() const noexcept { return text_ids_; }
  const std::vector<std::size_t>& node_of_text() const noexcept { return node_of_text_; }
  std::size_t node_of(std::int64_t text_id) const;
  // Unit-norm match-space centroid of a node.
  const std::vector<double>& centroid(std::size_t node) const { return centroids_.at(node); }

  bool operator==(const NodeSpace& other) const {
    return level_ == other.level_ && node_count_ == other.node_count_ &&
           text_ids_ == other.text_ids_ && node_of_text_ == other.node_of_text_ &&
           centroids_ == other.centroids_;
  }

 private:
  Level level_ = Level::task;
  std::size_t node_count_ = 0;
  std::vector<std::int64_t> text_ids_;
  std::vector<std::size_t> node_of_text_;
  std::vector<std::vector<double>> centroids_;
  std::unordered_map<std::int64_t, std::size_t> index_;
};

// Raw text ids belonging to a level: task ids for tasks, step ids for the
// step level and for each state phase.
std::vector<std::int64_t> level_text_ids(const KnowledgeBase& base, Level level);

// Tasks get one node each; the other levels are clustered on their
// cluster-space vectors.
NodeSpace build_node_space(Level level, const KnowledgeBase& base, const TextStore& store,
                           double threshold = kDefaultClusterThreshold,
                           Linkage linkage = Linkage::average);

// `<dir>/nodes.<level>.jsonl` (member map) + `<dir>/nodes.<level>.tssfeat`
// (centroids).
void save_node_space(const NodeSpace& space, const std::filesystem::path& dir);
NodeSpace load_node_space(Level level, const std::filesystem::path& dir);

}  // namespace tss
