#include "tss/clustering.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <string>

#include "feature_file.hpp"
#include "tss/error.hpp"
#include "tss/io.hpp"

namespace tss {

using json = nlohmann::ordered_json;

std::string_view to_string(Linkage linkage) noexcept {
  switch (linkage) {
    case Linkage::average:
      return "average";
    case Linkage::single:
      return "single";
    case Linkage::complete:
      return "complete";
  }
  return "?";
}

Linkage parse_linkage(std::string_view name) {
  for (Linkage l : {Linkage::average, Linkage::single, Linkage::complete}) {
    if (to_string(l) == name) return l;
  }
  throw ConfigError("unknown linkage '" + std::string(name) + "'");
}

Partition agglomerate(std::span<const std::vector<float>> embeddings, double threshold,
                      Linkage linkage) {
  const std::size_t n = embeddings.size();
  if (n == 0) throw DataError("agglomerate: empty input");
  if (!(threshold >= 0.0)) throw ConfigError("agglomerate: threshold must be >= 0");

  // Full distance matrix; dist[i*n+j] is only read for active i < j.
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = 1.0 - cosine_sim(embeddings[i], embeddings[j]);
      dist[i * n + j] = d;
      dist[j * n + i] = d;
    }
  }

  std::vector<std::size_t> size(n, 1);
  std::vector<bool> active(n, true);
  std::vector<std::size_t> parent(n);
  for (std::size_t i = 0; i < n; ++i) parent[i] = i;

  // Row minima over active j > i, with the smallest j on ties.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<double> row_min(n, kInf);
  std::vector<std::size_t> row_arg(n, kNone);
  auto refresh_row = [&](std::size_t i) {
    row_min[i] = kInf;
    row_arg[i] = kNone;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (active[j] && dist[i * n + j] < row_min[i]) {
        row_min[i] = dist[i * n + j];
        row_arg[i] = j;
      }
    }
  };
  for (std::size_t i = 0; i < n; ++i) refresh_row(i);

  while (true) {
    std::size_t a = kNone;
    double best = kInf;
    for (std::size_t i = 0; i < n; ++i) {
      if (active[i] && row_arg[i] != kNone && row_min[i] < best) {
        best = row_min[i];
        a = i;
      }
    }
    if (a == kNone || best > threshold) break;
    const std::size_t b = row_arg[a];

    // Lance-Williams update into the surviving cluster a (a < b).
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == a || k == b) continue;
      const double da = dist[a * n + k];
      const double db = dist[b * n + k];
      double d = 0.0;
      switch (linkage) {
        case Linkage::average:
          d = (static_cast<double>(size[a]) * da + static_cast<double>(size[b]) * db) /
              static_cast<double>(size[a] + size[b]);
          break;
        case Linkage::single:
          d = std::min(da, db);
          break;
        case Linkage::complete:
          d = std::max(da, db);
          break;
      }
      dist[a * n + k] = d;
      dist[k * n + a] = d;
    }
    size[a] += size[b];
    active[b] = false;
    parent[b] = a;

    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      if (i == a || row_arg[i] == a || row_arg[i] == b) {
        refresh_row(i);
      } else if (i < a && dist[i * n + a] < row_min[i]) {
        row_min[i] = dist[i * n + a];
        row_arg[i] = a;
      } else if (i < a && dist[i * n + a] == row_min[i] && a < row_arg[i]) {
        row_arg[i] = a;
      }
    }
  }

  auto root = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i];
    return i;
  };
  Partition p;
  p.cluster_of.resize(n);
  std::vector<std::size_t> dense(n, kNone);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = root(i);
    if (dense[r] == kNone) dense[r] = p.cluster_count++;
    p.cluster_of[i] = dense[r];
  }
  return p;
}

NodeSpace::NodeSpace(Level level, std::vector<std::int64_t> text_ids,
                     std::vector<std::size_t> node_of_text, std::size_t node_count,
                     std::vector<std::vector<double>> centroids)
    : level_(level),
      node_count_(node_count),
      text_ids_(std::move(text_ids)),
      node_of_text_(std::move(node_of_text)),
      centroids_(std::move(centroids)) {
  if (text_ids_.size() != node_of_text_.size()) {
    throw DataError("node space: member map is not total");
  }
  if (centroids_.size() != node_count_) throw DataError("node space: centroid count mismatch");
  std::vector<bool> seen(node_count_, false);
  for (std::size_t i = 0; i < text_ids_.size(); ++i) {
    if (node_of_text_[i] >= node_count_) throw DataError("node space: node id out of range");
    seen[node_of_text_[i]] = true;
    if (!index_.emplace(text_ids_[i], i).second) {
      throw DataError("node space: duplicate text id " + std::to_string(text_ids_[i]));
    }
  }
  for (bool s : seen) {
    if (!s) throw DataError("node space: node ids are not dense");
  }
}

std::size_t NodeSpace::node_of(std::int64_t text_id) const {
  auto it = index_.find(text_id);
  if (it == index_.end()) {
    throw DataError("text " + std::to_string(text_id) + " is not in the " +
                    std::string(to_string(level_)) + " node space");
  }
  return node_of_text_[it->second];
}

std::vector<std::int64_t> level_text_ids(const KnowledgeBase& base, Level level) {
  std::vector<std::int64_t> ids;
  if (level == Level::task) {
    for (const TaskEntry& t : base.tasks()) ids.push_back(t.task_id);
  } else {
    if (is_state_level(level) && !base.has_states()) {
      throw DataError("knowledge base has no state descriptions");
    }
    for (const StepEntry& s : base.steps()) ids.push_back(s.step_id);
  }
  return ids;
}

namespace {

// Rounded to f32 and renormalised so a saved and reloaded centroid is
// bitwise identical to the freshly built one.
std::vector<double> unit_centroid(const std::vector<double>& sum) {
  std::vector<double> c(sum.size());
  double norm = 0.0;
  for (double v : sum) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) throw NumericError("node centroid has zero norm");
  for (std::size_t i = 0; i < sum.size(); ++i) c[i] = static_cast<float>(sum[i] / norm);
  double n2 = 0.0;
  for (double v : c) n2 += v * v;
  n2 = std::sqrt(n2);
  for (double& v : c) v /= n2;
  return c;
}

}  // namespace

NodeSpace build_node_space(Level level, const KnowledgeBase& base, const TextStore& store,
                           double threshold, Linkage linkage) {
  std::vector<std::int64_t> ids = level_text_ids(base, level);
  std::vector<const TextEmbedding*> texts;
  texts.reserve(ids.size());
  for (std::int64_t id : ids) texts.push_back(&store.at(TextKey{level, id}));

  Partition partition;
  if (level == Level::task) {
    partition.cluster_count = ids.size();
    partition.cluster_of.resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) partition.cluster_of[i] = i;
  } else {
    std::vector<std::vector<float>> vecs;
    vecs.reserve(texts.size());
    for (const TextEmbedding* t : texts) vecs.push_back(t->cluster_vec);
    partition = agglomerate(vecs, threshold, linkage);
  }

  std::vector<std::vector<double>> sums(partition.cluster_count,
                                        std::vector<double>(store.match_dim(), 0.0));
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto& s = sums[partition.cluster_of[i]];
    for (std::size_t c = 0; c < s.size(); ++c) s[c] += texts[i]->match_vec[c];
  }
  std::vector<std::vector<double>> centroids;
  centroids.reserve(sums.size());
  for (const auto& s : sums) centroids.push_back(unit_centroid(s));

  return NodeSpace(level, std::move(ids), std::move(partition.cluster_of), partition.cluster_count,
                   std::move(centroids));
}

void save_node_space(const NodeSpace& space, const std::filesystem::path& dir) {
  const std::string stem = "nodes." + std::string(to_string(space.level()));
  std::string members;
  json header;
  header["kind"] = "node_space";
  header["level"] = std::string(to_string(space.level()));
  header["node_count"] = space.node_count();
  members += header.dump() + "\n";
  for (std::size_t i = 0; i < space.text_ids().size(); ++i) {
    json r;
    r["text"] = space.text_ids()[i];
    r["node"] = space.node_of_text()[i];
    members += r.dump() + "\n";
  }
  io::write_file_atomic(dir / (stem + ".jsonl"), members);

  detail::FeatureFile f;
  f.kind = detail::FeatureKind::centroid;
  f.count = space.node_count();
  f.dim = space.node_count() == 0 ? 0 : static_cast<std::uint32_t>(space.centroid(0).size());
  for (std::size_t n = 0; n < space.node_count(); ++n) {
    for (double v : space.centroid(n)) f.payload.push_back(static_cast<float>(v));
    json id;
    id["node"] = n;
    f.id_lines.push_back(id.dump());
  }
  detail::write_feature_file(dir / (stem + ".tssfeat"), f);
}

NodeSpace load_node_space(Level level, const std::filesystem::path& dir) {
  const std::string stem = "nodes." + std::string(to_string(level));
  const std::filesystem::path members_path = dir / (stem + ".jsonl");
  std::ifstream in(members_path);
  if (!in) throw DataError("cannot open " + members_path.string());
  std::string line;
  std::size_t line_no = 0;
  std::size_t node_count = 0;
  std::vector<std::int64_t> ids;
  std::vector<std::size_t> nodes;
  while (std::getline(in, line)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    json r;
    try {
      r = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(members_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (line_no == 1) {
      if (r.value("kind", "") != "node_space" || r.value("level", "") != to_string(level)) {
        throw DataError(members_path.string() + ": bad node-space header");
      }
      node_count = r.at("node_count").get<std::size_t>();
      continue;
    }
    ids.push_back(r.at("text").get<std::int64_t>());
    nodes.push_back(r.at("node").get<std::size_t>());
  }

  detail::FeatureFile f =
      detail::read_feature_file(dir / (stem + ".tssfeat"), detail::FeatureKind::centroid);
  if (f.count != node_count) throw DataError(stem + ": centroid count does not match member map");
  std::vector<std::vector<double>> centroids;
  for (std::size_t n = 0; n < f.count; ++n) {
    std::vector<double> c(f.dim);
    double norm = 0.0;
    for (std::size_t i = 0; i < f.dim; ++i) {
      c[i] = f.payload[n * f.dim + i];
      norm += c[i] * c[i];
    }
    norm = std::sqrt(norm);
    for (double& v : c) v /= norm;
    centroids.push_back(std::move(c));
  }
  return NodeSpace(level, std::move(ids), std::move(nodes), node_count, std::move(centroids));
}

}  // namespace tss
