#include "tss/checkpoint.hpp"

#include "tss/error.hpp"
#include "tss/io.hpp"

namespace tss {

namespace {

constexpr char kMagic[8] = {'T', 'S', 'S', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError("checkpoint is truncated");
  }
  std::uint32_t u32() {
    need(4);
    auto v = io::get_u32(bytes_, pos_);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    auto v = io::get_u64(bytes_, pos_);
    pos_ += 8;
    return v;
  }
  float f32() {
    need(4);
    auto v = io::get_f32(bytes_, pos_);
    pos_ += 4;
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto v = bytes_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedTensor* Checkpoint::find(std::string_view name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const NamedTensor& Checkpoint::at(std::string_view name) const {
  const NamedTensor* t = find(name);
  if (t == nullptr) throw DataError("checkpoint has no tensor '" + std::string(name) + "'");
  return *t;
}

void Checkpoint::put(const std::string& name, const ad::Tensor& t) {
  NamedTensor nt;
  nt.name = name;
  nt.rows = t.rows();
  nt.cols = t.cols();
  nt.values.reserve(t.size());
  for (double v : t.values()) nt.values.push_back(static_cast<float>(v));
  put(std::move(nt));
}

void Checkpoint::put(NamedTensor t) {
  for (NamedTensor& existing : tensors) {
    if (existing.name == t.name) {
      existing = std::move(t);
      return;
    }
  }
  tensors.push_back(std::move(t));
}

void capture(Checkpoint& ckpt, const ParamList& params) {
  for (const NamedParam& p : params) ckpt.put(p.name, p.tensor);
}

void restore(const ParamList& params, const Checkpoint& ckpt) {
  for (const NamedParam& p : params) {
    const NamedTensor& t = ckpt.at(p.name);
    ad::Tensor target = p.tensor;
    if (t.rows != target.rows() || t.cols != target.cols()) {
      throw DataError("checkpoint tensor '" + p.name + "' has a different shape");
    }
    auto values = target.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = t.values[i];
  }
}

Adapter adapter_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  auto tensor = [&](const std::string& name) {
    const NamedTensor& t = ckpt.at(prefix + name);
    return ad::Tensor::from(t.rows, t.cols, std::vector<double>(t.values.begin(), t.values.end()),
                            true);
  };
  return Adapter(Linear{tensor(".down.weight"), tensor(".down.bias")},
                 Linear{tensor(".up.weight"), tensor(".up.bias")});
}

std::string checkpoint_to_bytes(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  io::put_u32(out, kVersion);
  io::put_u32(out, static_cast<std::uint32_t>(ckpt.meta_json.size()));
  out += ckpt.meta_json;
  io::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    if (t.values.size() != t.rows * t.cols) {
      throw DataError("tensor '" + t.name + "' does not match its shape");
    }
    io::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    io::put_u64(out, t.rows);
    io::put_u64(out, t.cols);
    for (float v : t.values) io::put_f32(out, v);
  }
  return out;
}

Checkpoint checkpoint_from_bytes(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(8) != std::string_view(kMagic, 8)) throw DataError("not a checkpoint (magic mismatch)");
  if (r.u32() != kVersion) throw DataError("unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.meta_json = std::string(r.take(r.u32()));
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = std::string(r.take(r.u32()));
    t.rows = r.u64();
    t.cols = r.u64();
    r.need(4 * t.rows * t.cols);
    t.values.resize(t.rows * t.cols);
    for (float& v : t.values) v = r.f32();
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw DataError("trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file_atomic(path, checkpoint_to_bytes(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_bytes(io::read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace tss
