#include "tss/eval.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

#include "tss/error.hpp"
#include "tss/io.hpp"
#include "tss/rng.hpp"

namespace tss {

using json = nlohmann::ordered_json;

std::vector<Annotation> read_annotations(std::istream& in, const std::string& name) {
  std::vector<Annotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    const std::string where = name + ":" + std::to_string(line_no);
    try {
      json r = json::parse(line);
      Annotation a;
      a.video_id = r.at("video").get<std::int64_t>();
      a.segment_index = r.at("segment").get<std::int64_t>();
      a.step_id = r.at("step").get<std::int64_t>();
      a.task_id = r.at("task").get<std::int64_t>();
      if (r.contains("state")) a.state = r.at("state").get<std::string>();
      out.push_back(std::move(a));
    } catch (const json::exception& e) {
      throw DataError(where + ": bad annotation: " + e.what());
    }
  }
  std::sort(out.begin(), out.end(), [](const Annotation& a, const Annotation& b) {
    return std::pair(a.video_id, a.segment_index) < std::pair(b.video_id, b.segment_index);
  });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].video_id == out[i - 1].video_id &&
        out[i].segment_index == out[i - 1].segment_index) {
      throw DataError(name + ": duplicate annotation for (" + std::to_string(out[i].video_id) +
                      "," + std::to_string(out[i].segment_index) + ")");
    }
  }
  return out;
}

std::vector<Annotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_annotations(in, path.filename().string());
}

std::string annotations_to_jsonl(std::span<const Annotation> annotations) {
  std::string out;
  for (const Annotation& a : annotations) {
    json r;
    r["video"] = a.video_id;
    r["segment"] = a.segment_index;
    r["step"] = a.step_id;
    r["task"] = a.task_id;
    if (!a.state.empty()) r["state"] = a.state;
    out += r.dump() + "\n";
  }
  return out;
}

void save_annotations(std::span<const Annotation> annotations, const std::filesystem::path& path) {
  io::write_file_atomic(path, annotations_to_jsonl(annotations));
}

std::string_view to_string(TaskKind kind) noexcept {
  switch (kind) {
    case TaskKind::tr:
      return "TR";
    case TaskKind::sr:
      return "SR";
    case TaskKind::sf:
      return "SF";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view name) {
  std::string n(name);
  for (char& c : n) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (n == "tr") return TaskKind::tr;
  if (n == "sr") return TaskKind::sr;
  if (n == "sf") return TaskKind::sf;
  throw ConfigError("unknown downstream task '" + std::string(name) + "' (expected TR, SR or SF)");
}

std::string_view to_string(EvalHead head) noexcept {
  return head == EvalHead::mlp ? "mlp" : "transformer";
}

EvalHead parse_eval_head(std::string_view name) {
  if (name == "mlp") return EvalHead::mlp;
  if (name == "transformer") return EvalHead::transformer;
  throw ConfigError("unknown evaluation head '" + std::string(name) +
                    "' (expected mlp or transformer)");
}

std::size_t default_hidden(TaskKind kind) noexcept { return kind == TaskKind::tr ? 128 : 768; }

namespace {

// Segment -> row indices (store order) for one video.
std::map<std::int64_t, std::vector<std::size_t>> rows_by_segment(const SequenceStore& store,
                                                                 std::size_t begin,
                                                                 std::size_t end) {
  std::map<std::int64_t, std::vector<std::size_t>> out;
  for (std::size_t i = begin; i < end; ++i) out[store.rows()[i].segment_index].push_back(i);
  return out;
}

DownstreamSample make_sample(const SequenceStore& store, std::span<const std::size_t> rows,
                             std::int64_t video, std::int64_t segment, TaskKind kind,
                             std::int64_t label) {
  DownstreamSample s;
  s.video_id = video;
  s.segment_index = segment;
  s.kind = kind;
  s.label = label;
  s.rows = rows.size();
  s.features.reserve(rows.size() * store.dim());
  for (std::size_t r : rows) {
    const auto& f = store.rows()[r].feature;
    s.features.insert(s.features.end(), f.begin(), f.end());
  }
  return s;
}

}  // namespace

std::vector<DownstreamSample> build_samples(const SequenceStore& features,
                                            std::span<const Annotation> annotations,
                                            TaskKind kind, std::size_t max_history) {
  if (max_history == 0) throw ConfigError("maximum history must be >= 1");
  std::map<std::int64_t, std::vector<const Annotation*>> by_video;
  for (const Annotation& a : annotations) by_video[a.video_id].push_back(&a);

  std::vector<DownstreamSample> out;
  for (auto& [video, anns] : by_video) {
    std::sort(anns.begin(), anns.end(), [](const Annotation* a, const Annotation* b) {
      return a->segment_index < b->segment_index;
    });
    auto range = features.videos().find(video);
    if (range == features.videos().end()) {
      throw DataError("no features for annotated video " + std::to_string(video));
    }
    auto segs = rows_by_segment(features, range->second.first, range->second.second);
    auto rows_of = [&](const Annotation* a) -> const std::vector<std::size_t>& {
      auto it = segs.find(a->segment_index);
      if (it == segs.end()) {
        throw DataError("no features for annotated segment (" + std::to_string(video) + "," +
                        std::to_string(a->segment_index) + ")");
      }
      return it->second;
    };

    switch (kind) {
      case TaskKind::tr: {
        std::vector<std::size_t> rows;
        for (const Annotation* a : anns) {
          if (a->task_id != anns.front()->task_id) {
            throw DataError("video " + std::to_string(video) + " is annotated with two tasks");
          }
          const auto& r = rows_of(a);
          rows.insert(rows.end(), r.begin(), r.end());
        }
        out.push_back(make_sample(features, rows, video, anns.front()->segment_index, kind,
                                  anns.front()->task_id));
        break;
      }
      case TaskKind::sr:
        for (const Annotation* a : anns) {
          out.push_back(make_sample(features, rows_of(a), video, a->segment_index, kind, a->step_id));
        }
        break;
      case TaskKind::sf:
        for (std::size_t t = 0; t + 1 < anns.size(); ++t) {
          std::vector<std::size_t> rows;
          const std::size_t first = t + 1 > max_history ? t + 1 - max_history : 0;
          for (std::size_t h = first; h <= t; ++h) {
            const auto& r = rows_of(anns[h]);
            rows.insert(rows.end(), r.begin(), r.end());
          }
          const Annotation* next = anns[t + 1];
          rows_of(next);
          out.push_back(make_sample(features, rows, video, next->segment_index, kind, next->step_id));
        }
        break;
    }
  }
  return out;
}

Split split_of(std::int64_t video_id, std::uint64_t seed) {
  const std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(video_id)));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  if (u < 0.7) return Split::train;
  if (u < 0.8) return Split::val;
  return Split::test;
}

namespace {

class HeadModel {
 public:
  HeadModel(EvalHead kind, std::size_t dim, std::size_t hidden, std::size_t classes, MlpOrder order,
            std::uint64_t seed)
      : kind_(kind) {
    if (kind == EvalHead::mlp) {
      mlp_ = DownstreamMLP::init(dim, hidden, classes, order, seed);
      params_ = mlp_.params();
    } else {
      tf_ = DownstreamTransformer::init(dim, hidden, classes, order, seed);
      params_ = tf_.params();
    }
  }

  const ParamList& params() const { return params_; }

  // MLP front ends carry no parameters, so each sample is encoded once.
  void prepare(std::span<const DownstreamSample> samples, std::size_t dim) {
    dim_ = dim;
    samples_ = samples;
    if (kind_ != EvalHead::mlp) return;
    encoded_.resize(samples.size() * dim);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const DownstreamSample& s = samples[i];
      ad::Tensor seq = ad::Tensor::from(s.rows, dim, {s.features.begin(), s.features.end()});
      const ad::Tensor enc = mlp_.encode_sequence(seq);
      const auto e = enc.values();
      std::copy(e.begin(), e.end(), encoded_.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
  }

  ad::Tensor logits(std::span<const std::size_t> idx) const {
    if (kind_ == EvalHead::mlp) {
      std::vector<double> x(idx.size() * dim_);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(encoded_.begin() + static_cast<std::ptrdiff_t>(idx[i] * dim_), dim_,
                    x.begin() + static_cast<std::ptrdiff_t>(i * dim_));
      }
      return mlp_.classify(ad::Tensor::from(idx.size(), dim_, std::move(x)));
    }
    std::vector<ad::Tensor> seqs;
    seqs.reserve(idx.size());
    for (std::size_t i : idx) {
      const DownstreamSample& s = samples_[i];
      seqs.push_back(ad::Tensor::from(s.rows, dim_, {s.features.begin(), s.features.end()}));
    }
    return tf_.forward(seqs);
  }

 private:
  EvalHead kind_;
  DownstreamMLP mlp_;
  DownstreamTransformer tf_;
  ParamList params_;
  std::size_t dim_ = 0;
  std::span<const DownstreamSample> samples_;
  std::vector<double> encoded_;
};

std::size_t count_correct(const HeadModel& model, std::span<const std::size_t> idx,
                          std::span<const std::size_t> labels) {
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < idx.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, idx.size() - start);
    ad::Tensor l = model.logits(idx.subspan(start, n));
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < l.cols(); ++c) {
        if (l.at(r, c) > l.at(r, best)) best = c;
      }
      if (best == labels[idx[start + r]]) ++correct;
    }
  }
  return correct;
}

std::vector<std::vector<double>> snapshot(const ParamList& params) {
  std::vector<std::vector<double>> out;
  for (const NamedParam& p : params) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void load_snapshot(const ParamList& params, const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = params[i].tensor.mutable_values();
    std::copy(snap[i].begin(), snap[i].end(), v.begin());
  }
}

}  // namespace

EvalResult finetune_and_test(std::span<const DownstreamSample> samples, const EvalConfig& config) {
  if (config.patience == 0) throw ConfigError("patience must be >= 1");
  if (config.batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (samples.empty()) throw DataError("no downstream samples");

  const std::size_t dim = samples.front().features.size() / std::max<std::size_t>(samples.front().rows, 1);
  std::set<std::int64_t> distinct;
  for (const DownstreamSample& s : samples) {
    if (s.rows == 0 || s.features.size() != s.rows * dim) {
      throw DataError("downstream sample of video " + std::to_string(s.video_id) +
                      " has inconsistent shape");
    }
    distinct.insert(s.label);
  }
  std::map<std::int64_t, std::size_t> class_of;
  for (std::int64_t l : distinct) class_of.emplace(l, class_of.size());
  std::vector<std::size_t> labels;
  labels.reserve(samples.size());
  for (const DownstreamSample& s : samples) labels.push_back(class_of.at(s.label));

  const std::uint64_t split_seed = derive_seed(config.seed, "split");
  std::vector<std::size_t> train, val, test;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    switch (split_of(samples[i].video_id, split_seed)) {
      case Split::train:
        train.push_back(i);
        break;
      case Split::val:
        val.push_back(i);
        break;
      case Split::test:
        test.push_back(i);
        break;
    }
  }
  if (train.empty() || val.empty() || test.empty()) {
    throw DataError("empty split: train " + std::to_string(train.size()) + ", val " +
                    std::to_string(val.size()) + ", test " + std::to_string(test.size()));
  }

  const TaskKind kind = samples.front().kind;
  const std::size_t hidden = config.hidden == 0 ? default_hidden(kind) : config.hidden;
  HeadModel model(config.head, dim, hidden, class_of.size(), config.mlp_order,
                  derive_seed(config.seed, "eval-head"));
  model.prepare(samples, dim);

  std::vector<ad::Tensor> tensors;
  for (const NamedParam& p : model.params()) tensors.push_back(p.tensor);
  Adam adam(tensors, config.adam);

  EvalResult res;
  res.train_count = train.size();
  res.val_count = val.size();
  res.test_count = test.size();
  res.classes = class_of.size();

  auto val_accuracy = [&] {
    return static_cast<double>(count_correct(model, val, labels)) / static_cast<double>(val.size());
  };
  res.best_val_accuracy = val_accuracy();
  auto best = snapshot(model.params());

  Rng order_rng(derive_seed(config.seed, "eval-order"));
  std::vector<std::size_t> order = train;
  std::vector<std::size_t> batch_labels;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      std::span<const std::size_t> idx(order.data() + start, n);
      batch_labels.clear();
      for (std::size_t i : idx) batch_labels.push_back(labels[i]);
      ad::Tensor loss = ad::cross_entropy(model.logits(idx), batch_labels);
      adam.zero_grad();
      loss.backward();
      adam.step();
    }
    res.epochs_run = epoch;
    const double acc = val_accuracy();
    if (acc > res.best_val_accuracy) {
      res.best_val_accuracy = acc;
      res.best_epoch = epoch;
      best = snapshot(model.params());
    } else if (epoch - res.best_epoch >= config.patience) {
      break;
    }
  }

  load_snapshot(model.params(), best);
  res.correct = count_correct(model, test, labels);
  res.accuracy = static_cast<double>(res.correct) / static_cast<double>(res.test_count);
  return res;
}

std::string result_to_json(const ResultRow& row) {
  json j;
  j["pathway"] = row.pathway;
  j["dataset"] = row.dataset;
  j["head"] = std::string(to_string(row.head));
  j["task"] = std::string(to_string(row.task));
  j["seed"] = row.seed;
  j["accuracy"] = row.result.accuracy;
  j["correct"] = row.result.correct;
  j["test_count"] = row.result.test_count;
  j["train_count"] = row.result.train_count;
  j["val_count"] = row.result.val_count;
  j["classes"] = row.result.classes;
  j["best_epoch"] = row.result.best_epoch;
  j["epochs_run"] = row.result.epochs_run;
  j["best_val_accuracy"] = row.result.best_val_accuracy;
  return j.dump();
}

std::vector<ResultRow> load_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<ResultRow> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    try {
      json j = json::parse(line);
      ResultRow r;
      r.pathway = j.at("pathway").get<std::string>();
      r.dataset = j.at("dataset").get<std::string>();
      r.head = parse_eval_head(j.at("head").get<std::string>());
      r.task = parse_task_kind(j.at("task").get<std::string>());
      r.seed = j.value("seed", std::uint64_t{0});
      r.result.accuracy = j.at("accuracy").get<double>();
      r.result.correct = j.value("correct", std::size_t{0});
      r.result.test_count = j.value("test_count", std::size_t{0});
      r.result.train_count = j.value("train_count", std::size_t{0});
      r.result.val_count = j.value("val_count", std::size_t{0});
      r.result.classes = j.value("classes", std::size_t{0});
      r.result.best_epoch = j.value("best_epoch", std::size_t{0});
      r.result.epochs_run = j.value("epochs_run", std::size_t{0});
      r.result.best_val_accuracy = j.value("best_val_accuracy", 0.0);
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(path.filename().string() + ":" + std::to_string(line_no) +
                      ": bad result row: " + e.what());
    }
  }
  return out;
}

}  // namespace tss
