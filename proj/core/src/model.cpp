#include "tss/model.hpp"

#include <algorithm>
#include <cmath>

#include "tss/error.hpp"
#include "tss/optimizer.hpp"

namespace tss {

ad::Tensor init_uniform_fan_in(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::vector<double> v(rows * cols);
  for (double& x : v) x = round_to_f32(rng.uniform(-bound, bound));
  return ad::Tensor::from(rows, cols, std::move(v), true);
}

ad::Tensor clone_param(const ad::Tensor& t) {
  return ad::Tensor::from(t.rows(), t.cols(), std::vector<double>(t.values().begin(), t.values().end()),
                          true);
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  Linear l;
  l.weight = init_uniform_fan_in(in, out, in, rng);
  l.bias = init_uniform_fan_in(1, out, in, rng);
  return l;
}

ad::Tensor Linear::forward(const ad::Tensor& x) const {
  if (x.cols() != in()) {
    throw DataError("linear layer expects " + std::to_string(in()) + " inputs, got " +
                    std::to_string(x.cols()));
  }
  return ad::add_row(ad::matmul(x, weight), bias);
}

void Linear::append_params(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Linear Linear::clone() const { return Linear{clone_param(weight), clone_param(bias)}; }

Adapter::Adapter(Linear down, Linear up) : down_(std::move(down)), up_(std::move(up)) {
  if (down_.out() != up_.in() || down_.in() != up_.out()) {
    throw DataError("adapter layers do not compose to a same-dimension map");
  }
}

Adapter Adapter::init(std::uint64_t seed, std::size_t dim, std::size_t hidden) {
  Rng rng(seed);
  Linear down = Linear::init(dim, hidden, rng);
  Linear up = Linear::init(hidden, dim, rng);
  return Adapter(std::move(down), std::move(up));
}

ad::Tensor Adapter::forward(const ad::Tensor& x) const {
  return up_.forward(ad::relu(down_.forward(x)));
}

ParamList Adapter::params(const std::string& prefix) const {
  ParamList out;
  down_.append_params(out, prefix + ".down");
  up_.append_params(out, prefix + ".up");
  return out;
}

Adapter Adapter::clone() const { return Adapter(down_.clone(), up_.clone()); }

ClipStore encode_clips(const Adapter& adapter, const ClipStore& clips) {
  ClipStore out(adapter.dim());
  constexpr std::size_t kChunk = 256;
  const std::size_t n = clips.size();
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t rows = std::min(kChunk, n - start);
    std::vector<double> x;
    x.reserve(rows * clips.dim());
    for (std::size_t i = 0; i < rows; ++i) {
      const auto& f = clips[start + i].feature;
      x.insert(x.end(), f.begin(), f.end());
    }
    ad::Tensor y = adapter.forward(ad::Tensor::from(rows, clips.dim(), std::move(x)));
    for (std::size_t i = 0; i < rows; ++i) {
      ClipRecord c;
      c.video_id = clips[start + i].video_id;
      c.segment_index = clips[start + i].segment_index;
      c.feature.resize(y.cols());
      for (std::size_t j = 0; j < y.cols(); ++j) c.feature[j] = static_cast<float>(y.at(i, j));
      out.add(std::move(c));
    }
  }
  return out;
}

HeadDims head_dims(std::size_t d_in, std::size_t d_out) {
  if (d_out == 0) throw DataError("task head needs at least one output node");
  return HeadDims{d_in, std::max<std::size_t>(d_out / 4, 1), std::max<std::size_t>(d_out / 2, 1),
                  d_out};
}

TaskHead TaskHead::init(std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
  TaskHead h;
  h.dims_ = head_dims(d_in, d_out);
  Rng rng(seed);
  h.l0_ = Linear::init(h.dims_.d_in, h.dims_.d_h1, rng);
  h.l1_ = Linear::init(h.dims_.d_h1, h.dims_.d_h2, rng);
  h.l2_ = Linear::init(h.dims_.d_h2, h.dims_.d_out, rng);
  return h;
}

ad::Tensor TaskHead::forward(const ad::Tensor& f) const {
  return l2_.forward(ad::relu(l1_.forward(ad::relu(l0_.forward(f)))));
}

ParamList TaskHead::params(const std::string& prefix) const {
  ParamList out;
  l0_.append_params(out, prefix + ".l0");
  l1_.append_params(out, prefix + ".l1");
  l2_.append_params(out, prefix + ".l2");
  return out;
}

std::vector<double> positional_encoding(std::size_t rows, std::size_t dim) {
  std::vector<double> pe(rows * dim);
  for (std::size_t pos = 0; pos < rows; ++pos) {
    for (std::size_t i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * freq;
      pe[pos * dim + i] = std::sin(angle);
      if (i + 1 < dim) pe[pos * dim + i + 1] = std::cos(angle);
    }
  }
  return pe;
}

DownstreamMLP DownstreamMLP::init(std::size_t d_in, std::size_t d_hidden, std::size_t d_out,
                                  MlpOrder order, std::uint64_t seed) {
  DownstreamMLP m;
  m.order_ = order;
  Rng rng(seed);
  m.l0_ = Linear::init(d_in, d_hidden, rng);
  m.l1_ = Linear::init(d_hidden, d_out, rng);
  return m;
}

ad::Tensor DownstreamMLP::encode_sequence(const ad::Tensor& sequence) const {
  ad::Tensor pe = ad::Tensor::from(sequence.rows(), sequence.cols(),
                                   positional_encoding(sequence.rows(), sequence.cols()));
  ad::Tensor x = ad::add(sequence, pe);
  if (order_ == MlpOrder::literal) x = ad::relu(x);
  return ad::mean_rows(x);
}

ad::Tensor DownstreamMLP::encode_rows(const ad::Tensor& rows) const {
  ad::Tensor pe0 = ad::Tensor::from(1, rows.cols(), positional_encoding(1, rows.cols()));
  ad::Tensor x = ad::add_row(rows, pe0);
  if (order_ == MlpOrder::literal) x = ad::relu(x);
  return x;
}

ad::Tensor DownstreamMLP::classify(const ad::Tensor& encoded) const {
  ad::Tensor h = l0_.forward(encoded);
  if (order_ == MlpOrder::standard) h = ad::relu(h);
  return l1_.forward(h);
}

ad::Tensor DownstreamMLP::forward(std::span<const ad::Tensor> sequences) const {
  std::vector<ad::Tensor> rows;
  rows.reserve(sequences.size());
  for (const ad::Tensor& s : sequences) rows.push_back(encode_sequence(s));
  return classify(ad::concat_rows(rows));
}

ParamList DownstreamMLP::params(const std::string& prefix) const {
  ParamList out;
  l0_.append_params(out, prefix + ".l0");
  l1_.append_params(out, prefix + ".l1");
  return out;
}

EncoderLayer EncoderLayer::init(std::size_t dim, std::size_t heads, std::size_t ffn, Rng& rng) {
  EncoderLayer e;
  e.heads_ = heads;
  e.q_ = Linear::init(dim, dim, rng);
  e.k_ = Linear::init(dim, dim, rng);
  e.v_ = Linear::init(dim, dim, rng);
  e.o_ = Linear::init(dim, dim, rng);
  e.ff1_ = Linear::init(dim, ffn, rng);
  e.ff2_ = Linear::init(ffn, dim, rng);
  e.ln1_gamma_ = ad::Tensor::from(1, dim, std::vector<double>(dim, 1.0), true);
  e.ln1_beta_ = ad::Tensor::zeros(1, dim, true);
  e.ln2_gamma_ = ad::Tensor::from(1, dim, std::vector<double>(dim, 1.0), true);
  e.ln2_beta_ = ad::Tensor::zeros(1, dim, true);
  return e;
}

ad::Tensor EncoderLayer::forward(const ad::Tensor& x) const {
  const std::size_t rows[1] = {x.rows()};
  return forward_packed(x, rows);
}

ad::Tensor EncoderLayer::forward_packed(const ad::Tensor& x, std::span<const std::size_t> lengths) const {
  const ad::Tensor q = q_.forward(x), k = k_.forward(x), v = v_.forward(x);
  ad::Tensor attn;
  if (lengths.size() == 1) {
    attn = ad::scaled_dot_attention(q, k, v, heads_);
  } else {
    std::vector<ad::Tensor> parts;
    parts.reserve(lengths.size());
    std::size_t off = 0;
    for (std::size_t len : lengths) {
      parts.push_back(ad::scaled_dot_attention(ad::slice_rows(q, off, len), ad::slice_rows(k, off, len),
                                               ad::slice_rows(v, off, len), heads_));
      off += len;
    }
    attn = ad::concat_rows(parts);
  }
  ad::Tensor h = ad::layer_norm(ad::add(x, o_.forward(attn)), ln1_gamma_, ln1_beta_);
  ad::Tensor ff = ff2_.forward(ad::relu(ff1_.forward(h)));
  return ad::layer_norm(ad::add(h, ff), ln2_gamma_, ln2_beta_);
}

void EncoderLayer::append_params(ParamList& out, const std::string& prefix) const {
  q_.append_params(out, prefix + ".q");
  k_.append_params(out, prefix + ".k");
  v_.append_params(out, prefix + ".v");
  o_.append_params(out, prefix + ".o");
  ff1_.append_params(out, prefix + ".ff1");
  ff2_.append_params(out, prefix + ".ff2");
  out.push_back({prefix + ".ln1.gamma", ln1_gamma_});
  out.push_back({prefix + ".ln1.beta", ln1_beta_});
  out.push_back({prefix + ".ln2.gamma", ln2_gamma_});
  out.push_back({prefix + ".ln2.beta", ln2_beta_});
}

DownstreamTransformer DownstreamTransformer::init(std::size_t dim, std::size_t d_hidden,
                                                  std::size_t d_out, MlpOrder order,
                                                  std::uint64_t seed) {
  DownstreamTransformer t;
  Rng rng(derive_seed(seed, "transformer"));
  t.cls_ = init_uniform_fan_in(1, dim, dim, rng);
  t.layer_ = EncoderLayer::init(dim, kTransformerHeads, kTransformerFfn, rng);
  t.mlp_ = DownstreamMLP::init(dim, d_hidden, d_out, order, derive_seed(seed, "mlp"));
  return t;
}

ad::Tensor DownstreamTransformer::forward(std::span<const ad::Tensor> sequences) const {
  // Row-wise layers run once over the whole batch.
  std::vector<ad::Tensor> parts;
  std::vector<std::size_t> lengths;
  parts.reserve(2 * sequences.size());
  lengths.reserve(sequences.size());
  for (const ad::Tensor& s : sequences) {
    ad::Tensor pe = ad::Tensor::from(s.rows(), s.cols(), positional_encoding(s.rows(), s.cols()));
    parts.push_back(cls_);
    parts.push_back(ad::add(s, pe));
    lengths.push_back(s.rows() + 1);
  }
  const ad::Tensor h = layer_.forward_packed(ad::concat_rows(parts), lengths);
  std::vector<ad::Tensor> cls_rows;
  cls_rows.reserve(sequences.size());
  std::size_t off = 0;
  for (std::size_t len : lengths) {
    cls_rows.push_back(ad::slice_rows(h, off, 1));
    off += len;
  }
  return mlp_.classify(mlp_.encode_rows(ad::concat_rows(cls_rows)));
}

ParamList DownstreamTransformer::params() const {
  ParamList out;
  out.push_back({"transformer.cls", cls_});
  layer_.append_params(out, "transformer.layer");
  ParamList m = mlp_.params("transformer.mlp");
  out.insert(out.end(), m.begin(), m.end());
  return out;
}

}  // namespace tss
