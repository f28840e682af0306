#include "feature_file.hpp"

#include <string_view>

#include "tss/error.hpp"
#include "tss/io.hpp"

namespace tss::detail {

namespace {

constexpr char kMagic[8] = {'T', 'S', 'S', 'F', 'E', 'A', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 8 + 4 + 4 + 4 + 4 + 8;

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& feature_path) {
  std::filesystem::path p = feature_path;
  p.replace_extension(".ids.jsonl");
  return p;
}

void write_feature_file(const std::filesystem::path& path, const FeatureFile& file) {
  const std::size_t row = static_cast<std::size_t>(file.dim) + file.aux_dim;
  if (file.payload.size() != row * file.count || file.id_lines.size() != file.count) {
    throw DataError("feature file payload does not match its header: " + path.string());
  }
  std::string bytes;
  bytes.reserve(kHeaderBytes + 4 * file.payload.size());
  bytes.append(kMagic, sizeof(kMagic));
  io::put_u32(bytes, kVersion);
  io::put_u32(bytes, static_cast<std::uint32_t>(file.kind));
  io::put_u32(bytes, file.dim);
  io::put_u32(bytes, file.aux_dim);
  io::put_u64(bytes, file.count);
  for (float v : file.payload) io::put_f32(bytes, v);

  std::string ids;
  for (const std::string& line : file.id_lines) {
    ids += line;
    ids += '\n';
  }
  io::write_file_atomic(sidecar_path(path), ids);
  io::write_file_atomic(path, bytes);
}

FeatureFile read_feature_file(const std::filesystem::path& path, FeatureKind expected_kind) {
  const std::string bytes = io::read_file(path);
  const std::string_view view(bytes);
  const std::string name = path.string();
  if (view.size() < kHeaderBytes || view.substr(0, 8) != std::string_view(kMagic, 8)) {
    throw DataError(name + ": not a .tssfeat file (magic mismatch)");
  }
  if (io::get_u32(view, 8) != kVersion) {
    throw DataError(name + ": unsupported version " + std::to_string(io::get_u32(view, 8)));
  }
  FeatureFile file;
  file.kind = static_cast<FeatureKind>(io::get_u32(view, 12));
  file.dim = io::get_u32(view, 16);
  file.aux_dim = io::get_u32(view, 20);
  file.count = io::get_u64(view, 24);
  if (file.kind != expected_kind) {
    throw DataError(name + ": record kind " + std::to_string(static_cast<std::uint32_t>(file.kind)) +
                    " where " + std::to_string(static_cast<std::uint32_t>(expected_kind)) +
                    " was expected");
  }
  const std::size_t row = static_cast<std::size_t>(file.dim) + file.aux_dim;
  const std::size_t expected = kHeaderBytes + 4 * row * file.count;
  if (view.size() < expected) {
    throw DataError(name + ": truncated payload (" + std::to_string(view.size()) + " of " +
                    std::to_string(expected) + " bytes)");
  }
  if (view.size() > expected) throw DataError(name + ": trailing bytes after payload");
  file.payload.resize(row * file.count);
  for (std::size_t i = 0; i < file.payload.size(); ++i) {
    file.payload[i] = io::get_f32(view, kHeaderBytes + 4 * i);
  }

  const std::string ids = io::read_file(sidecar_path(path));
  std::size_t pos = 0;
  while (pos < ids.size()) {
    std::size_t end = ids.find('\n', pos);
    if (end == std::string::npos) end = ids.size();
    if (end > pos) file.id_lines.emplace_back(ids.substr(pos, end - pos));
    pos = end + 1;
  }
  if (file.id_lines.size() != file.count) {
    throw DataError(name + ": id sidecar has " + std::to_string(file.id_lines.size()) +
                    " rows, header says " + std::to_string(file.count));
  }
  return file;
}

}  // namespace tss::detail
