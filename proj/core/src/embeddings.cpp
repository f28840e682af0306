#include "tss/embeddings.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <string>

#include "feature_file.hpp"

namespace tss {

using json = nlohmann::ordered_json;
using detail::FeatureFile;
using detail::FeatureKind;

namespace {

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

std::string clip_id_line(std::int64_t video, std::int64_t segment) {
  json j;
  j["video"] = video;
  j["segment"] = segment;
  return j.dump();
}

json parse_id_line(const std::string& line, const std::filesystem::path& path) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": bad id sidecar line: " + e.what());
  }
}

}  // namespace

std::vector<float> pool_subclips(std::span<const std::vector<float>> subclips) {
  if (subclips.size() != kSubclipsPerClip) {
    throw DataError("pool_subclips: expected 3 sub-clip rows, got " +
                    std::to_string(subclips.size()));
  }
  const std::size_t dim = subclips[0].size();
  for (const auto& row : subclips) {
    if (row.size() != dim) throw DataError("pool_subclips: ragged rows");
    if (!all_finite(row)) throw DataError("pool_subclips: non-finite input");
  }
  std::vector<float> out(dim);
  for (std::size_t c = 0; c < dim; ++c) {
    double sum = 0.0;
    for (const auto& row : subclips) sum += row[c];
    out[c] = static_cast<float>(sum / static_cast<double>(subclips.size()));
  }
  return out;
}

void ClipStore::add(ClipRecord clip) {
  if (clip.feature.size() != dim_) {
    throw DataError("clip (" + std::to_string(clip.video_id) + "," +
                    std::to_string(clip.segment_index) + ") has dimension " +
                    std::to_string(clip.feature.size()) + ", store expects " +
                    std::to_string(dim_));
  }
  if (!all_finite(clip.feature)) {
    throw DataError("clip (" + std::to_string(clip.video_id) + "," +
                    std::to_string(clip.segment_index) + ") has non-finite features");
  }
  auto key = [](const ClipRecord& c) { return std::pair(c.video_id, c.segment_index); };
  auto it = std::lower_bound(clips_.begin(), clips_.end(), clip,
                             [&](const ClipRecord& a, const ClipRecord& b) { return key(a) < key(b); });
  if (it != clips_.end() && key(*it) == key(clip)) {
    throw DataError("duplicate clip (" + std::to_string(clip.video_id) + "," +
                    std::to_string(clip.segment_index) + ")");
  }
  clips_.insert(it, std::move(clip));
}

void TextStore::add(TextEmbedding text) {
  if (text.match_vec.size() != match_dim_ || text.cluster_vec.size() != cluster_dim_) {
    throw DataError("text embedding for " + std::string(to_string(text.owner.level)) + " " +
                    std::to_string(text.owner.id) + " has the wrong dimensions");
  }
  if (!all_finite(text.match_vec) || !all_finite(text.cluster_vec)) {
    throw DataError("text embedding for " + std::string(to_string(text.owner.level)) + " " +
                    std::to_string(text.owner.id) + " is not finite");
  }
  const TextKey key = text.owner;
  if (!texts_.emplace(key, std::move(text)).second) {
    throw DataError("duplicate text embedding for " + std::string(to_string(key.level)) + " " +
                    std::to_string(key.id));
  }
}

const TextEmbedding& TextStore::at(TextKey key) const {
  auto it = texts_.find(key);
  if (it == texts_.end()) {
    throw DataError("missing embedding for " + std::string(to_string(key.level)) + " text " +
                    std::to_string(key.id));
  }
  return it->second;
}

std::vector<const TextEmbedding*> TextStore::level(Level level) const {
  std::vector<const TextEmbedding*> out;
  auto it = texts_.lower_bound(TextKey{level, INT64_MIN});
  for (; it != texts_.end() && it->first.level == level; ++it) out.push_back(&it->second);
  return out;
}

void save_clip_store(const ClipStore& store, const std::filesystem::path& path) {
  FeatureFile f;
  f.kind = FeatureKind::clip;
  f.dim = static_cast<std::uint32_t>(store.dim());
  f.count = store.size();
  f.payload.reserve(store.size() * store.dim());
  for (const ClipRecord& c : store.clips()) {
    f.payload.insert(f.payload.end(), c.feature.begin(), c.feature.end());
    f.id_lines.push_back(clip_id_line(c.video_id, c.segment_index));
  }
  detail::write_feature_file(path, f);
}

ClipStore load_clip_store(const std::filesystem::path& path) {
  FeatureFile f = detail::read_feature_file(path, FeatureKind::clip);
  if (f.aux_dim != 0) throw DataError(path.string() + ": clip files carry no aux vector");
  ClipStore store(f.dim);
  for (std::size_t i = 0; i < f.count; ++i) {
    json id = parse_id_line(f.id_lines[i], path);
    ClipRecord c;
    c.video_id = id.at("video").get<std::int64_t>();
    c.segment_index = id.at("segment").get<std::int64_t>();
    c.feature.assign(f.payload.begin() + static_cast<std::ptrdiff_t>(i * f.dim),
                     f.payload.begin() + static_cast<std::ptrdiff_t>((i + 1) * f.dim));
    store.add(std::move(c));
  }
  return store;
}

void save_text_store(const TextStore& store, const std::filesystem::path& path) {
  FeatureFile f;
  f.kind = FeatureKind::text;
  f.dim = static_cast<std::uint32_t>(store.match_dim());
  f.aux_dim = static_cast<std::uint32_t>(store.cluster_dim());
  f.count = store.size();
  for (const auto& [key, t] : store.all()) {
    f.payload.insert(f.payload.end(), t.match_vec.begin(), t.match_vec.end());
    f.payload.insert(f.payload.end(), t.cluster_vec.begin(), t.cluster_vec.end());
    json id;
    id["level"] = std::string(to_string(key.level));
    id["id"] = key.id;
    f.id_lines.push_back(id.dump());
  }
  detail::write_feature_file(path, f);
}

TextStore load_text_store(const std::filesystem::path& path) {
  FeatureFile f = detail::read_feature_file(path, FeatureKind::text);
  TextStore store(f.dim, f.aux_dim);
  const std::size_t row = static_cast<std::size_t>(f.dim) + f.aux_dim;
  for (std::size_t i = 0; i < f.count; ++i) {
    json id = parse_id_line(f.id_lines[i], path);
    TextEmbedding t;
    t.owner.level = parse_level(id.at("level").get<std::string>());
    t.owner.id = id.at("id").get<std::int64_t>();
    auto base = f.payload.begin() + static_cast<std::ptrdiff_t>(i * row);
    t.match_vec.assign(base, base + f.dim);
    t.cluster_vec.assign(base + f.dim, base + static_cast<std::ptrdiff_t>(row));
    store.add(std::move(t));
  }
  return store;
}

void save_subclip_store(const std::vector<ClipRecord>& subclips, std::size_t dim,
                        const std::filesystem::path& path) {
  FeatureFile f;
  f.kind = FeatureKind::subclip;
  f.dim = static_cast<std::uint32_t>(dim);
  f.count = subclips.size();
  for (const ClipRecord& c : subclips) {
    if (c.feature.size() != dim) throw DataError("sub-clip row has the wrong dimension");
    f.payload.insert(f.payload.end(), c.feature.begin(), c.feature.end());
    f.id_lines.push_back(clip_id_line(c.video_id, c.segment_index));
  }
  detail::write_feature_file(path, f);
}

ClipStore load_and_pool_subclips(const std::filesystem::path& path) {
  FeatureFile f = detail::read_feature_file(path, FeatureKind::subclip);
  if (f.count % kSubclipsPerClip != 0) {
    throw DataError(path.string() + ": sub-clip row count is not a multiple of 3");
  }
  ClipStore store(f.dim);
  for (std::size_t i = 0; i < f.count; i += kSubclipsPerClip) {
    std::vector<std::vector<float>> rows;
    json first = parse_id_line(f.id_lines[i], path);
    for (std::size_t r = 0; r < kSubclipsPerClip; ++r) {
      json id = parse_id_line(f.id_lines[i + r], path);
      if (id.at("video") != first.at("video") || id.at("segment") != first.at("segment")) {
        throw DataError(path.string() + ": sub-clip rows of one segment must be consecutive");
      }
      auto base = f.payload.begin() + static_cast<std::ptrdiff_t>((i + r) * f.dim);
      rows.emplace_back(base, base + f.dim);
    }
    ClipRecord c;
    c.video_id = first.at("video").get<std::int64_t>();
    c.segment_index = first.at("segment").get<std::int64_t>();
    c.feature = pool_subclips(rows);
    store.add(std::move(c));
  }
  return store;
}

}  // namespace tss
