#include "tss/fusion.hpp"

#include <algorithm>
#include <array>
#include <nlohmann/json.hpp>
#include <string>

#include "feature_file.hpp"
#include "tss/error.hpp"

namespace tss {

using json = nlohmann::ordered_json;

std::string_view to_string(FusionMode mode) noexcept {
  return mode == FusionMode::concat ? "concat" : "avgpool";
}

FusionMode parse_fusion_mode(std::string_view name) {
  if (name == "concat") return FusionMode::concat;
  if (name == "avgpool") return FusionMode::avgpool;
  throw ConfigError("unknown fusion mode '" + std::string(name) + "' (expected concat or avgpool)");
}

std::string_view to_string(ConcatLayout layout) noexcept {
  return layout == ConcatLayout::interleave ? "interleave" : "block";
}

ConcatLayout parse_concat_layout(std::string_view name) {
  if (name == "interleave") return ConcatLayout::interleave;
  if (name == "block") return ConcatLayout::block;
  throw ConfigError("unknown concat layout '" + std::string(name) +
                    "' (expected interleave or block)");
}

namespace {

void check_shape(const Sequence& s, std::size_t rows, std::size_t dim) {
  if (s.rows != rows || s.dim != dim || s.values.size() != rows * dim) {
    throw DataError("fusion inputs differ in shape: " + std::to_string(s.rows) + "x" +
                    std::to_string(s.dim) + " vs " + std::to_string(rows) + "x" +
                    std::to_string(dim));
  }
}

// Sorting the three operands first makes the sum independent of argument
// order, bit for bit.
float mean3(float a, float b, float c) {
  std::array<double, 3> v{a, b, c};
  std::sort(v.begin(), v.end());
  return static_cast<float>((v[0] + v[1] + v[2]) / 3.0);
}

}  // namespace

FusedSequence fuse(const Sequence& seq_task, const Sequence& seq_step, const Sequence& seq_state,
                   FusionMode mode, ConcatLayout layout) {
  const std::size_t t = seq_task.rows;
  const std::size_t d = seq_task.dim;
  check_shape(seq_task, t, d);
  check_shape(seq_step, t, d);
  check_shape(seq_state, t, d);

  FusedSequence out;
  out.mode = mode;
  out.features.dim = d;
  const std::array<const Sequence*, 3> src{&seq_task, &seq_step, &seq_state};

  if (mode == FusionMode::avgpool) {
    out.features.rows = t;
    out.features.values.resize(t * d);
    for (std::size_t i = 0; i < t * d; ++i) {
      out.features.values[i] = mean3(seq_task.values[i], seq_step.values[i], seq_state.values[i]);
    }
    out.source.assign(t, -1);
    for (std::size_t i = 0; i < t; ++i) out.time.push_back(i);
    return out;
  }

  out.features.rows = 3 * t;
  out.features.values.reserve(3 * t * d);
  auto push = [&](int s, std::size_t i) {
    auto r = src[static_cast<std::size_t>(s)]->row(i);
    out.features.values.insert(out.features.values.end(), r.begin(), r.end());
    out.source.push_back(s);
    out.time.push_back(i);
  };
  if (layout == ConcatLayout::interleave) {
    for (std::size_t i = 0; i < t; ++i) {
      for (int s = 0; s < 3; ++s) push(s, i);
    }
  } else {
    for (int s = 0; s < 3; ++s) {
      for (std::size_t i = 0; i < t; ++i) push(s, i);
    }
  }
  return out;
}

void SequenceStore::append(SequenceRow row) {
  if (row.feature.size() != dim_) {
    throw DataError("sequence row has dimension " + std::to_string(row.feature.size()) +
                    ", expected " + std::to_string(dim_));
  }
  if (!rows_.empty()) {
    const std::int64_t last = rows_.back().video_id;
    if (row.video_id < last) {
      throw DataError("sequence rows out of video order at video " + std::to_string(row.video_id));
    }
  }
  auto it = videos_.find(row.video_id);
  if (it == videos_.end()) {
    videos_.emplace(row.video_id, std::make_pair(rows_.size(), rows_.size() + 1));
  } else {
    it->second.second = rows_.size() + 1;
  }
  rows_.push_back(std::move(row));
}

SequenceStore SequenceStore::from_clips(const ClipStore& clips) {
  SequenceStore s(clips.dim());
  for (const ClipRecord& c : clips.clips()) s.append({c.video_id, c.segment_index, 0, c.feature});
  return s;
}

SequenceStore fuse_stores(const ClipStore& task, const ClipStore& step, const ClipStore& state,
                          FusionMode mode, ConcatLayout layout) {
  if (task.size() != step.size() || task.size() != state.size() || task.dim() != step.dim() ||
      task.dim() != state.dim()) {
    throw DataError("fusion inputs cover different clips or dimensions");
  }
  const std::size_t d = task.dim();
  SequenceStore out(d);
  std::size_t begin = 0;
  while (begin < task.size()) {
    const std::int64_t video = task[begin].video_id;
    std::size_t end = begin;
    while (end < task.size() && task[end].video_id == video) ++end;
    std::array<Sequence, 3> seqs;
    const std::array<const ClipStore*, 3> stores{&task, &step, &state};
    for (std::size_t s = 0; s < 3; ++s) {
      seqs[s].rows = end - begin;
      seqs[s].dim = d;
      for (std::size_t i = begin; i < end; ++i) {
        const ClipRecord& c = (*stores[s])[i];
        if (c.video_id != video || c.segment_index != task[i].segment_index) {
          throw DataError("fusion inputs disagree at clip (" + std::to_string(video) + "," +
                          std::to_string(task[i].segment_index) + ")");
        }
        seqs[s].values.insert(seqs[s].values.end(), c.feature.begin(), c.feature.end());
      }
    }
    FusedSequence f = fuse(seqs[0], seqs[1], seqs[2], mode, layout);
    for (std::size_t r = 0; r < f.features.rows; ++r) {
      auto row = f.features.row(r);
      const auto slot = static_cast<std::uint32_t>(f.source[r] < 0 ? 0 : f.source[r]);
      out.append({video, task[begin + f.time[r]].segment_index, slot, {row.begin(), row.end()}});
    }
    begin = end;
  }
  return out;
}

void save_sequence_store(const SequenceStore& store, const std::filesystem::path& path) {
  detail::FeatureFile f;
  f.kind = detail::FeatureKind::sequence;
  f.dim = static_cast<std::uint32_t>(store.dim());
  f.count = store.size();
  f.payload.reserve(store.size() * store.dim());
  for (const SequenceRow& r : store.rows()) {
    f.payload.insert(f.payload.end(), r.feature.begin(), r.feature.end());
    json id;
    id["video"] = r.video_id;
    id["segment"] = r.segment_index;
    id["slot"] = r.slot;
    f.id_lines.push_back(id.dump());
  }
  detail::write_feature_file(path, f);
}

SequenceStore load_sequence_store(const std::filesystem::path& path) {
  detail::FeatureFile f = detail::read_feature_file(path, detail::FeatureKind::sequence);
  SequenceStore store(f.dim);
  for (std::size_t i = 0; i < f.count; ++i) {
    SequenceRow r;
    try {
      json id = json::parse(f.id_lines[i]);
      r.video_id = id.at("video").get<std::int64_t>();
      r.segment_index = id.at("segment").get<std::int64_t>();
      r.slot = id.at("slot").get<std::uint32_t>();
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": bad id line " + std::to_string(i + 1) + ": " + e.what());
    }
    r.feature.assign(f.payload.begin() + static_cast<std::ptrdiff_t>(i * f.dim),
                     f.payload.begin() + static_cast<std::ptrdiff_t>((i + 1) * f.dim));
    store.append(std::move(r));
  }
  return store;
}

}  // namespace tss
