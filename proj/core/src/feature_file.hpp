#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tss::detail {

enum class FeatureKind : std::uint32_t {
  clip = 1,
  text = 2,
  centroid = 3,
  sequence = 4,
  subclip = 5,
};

// Raw `.tssfeat` contents: header fields, the f32 payload (count rows of
// dim + aux_dim values) and one sidecar JSON line per row.
struct FeatureFile {
  FeatureKind kind = FeatureKind::clip;
  std::uint32_t dim = 0;
  std::uint32_t aux_dim = 0;
  std::uint64_t count = 0;
  std::vector<float> payload;
  std::vector<std::string> id_lines;
};

std::filesystem::path sidecar_path(const std::filesystem::path& feature_path);

void write_feature_file(const std::filesystem::path& path, const FeatureFile& file);
FeatureFile read_feature_file(const std::filesystem::path& path, FeatureKind expected_kind);

}  // namespace tss::detail
