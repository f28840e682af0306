#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tss/autodiff.hpp"
#include "tss/embeddings.hpp"
#include "tss/rng.hpp"

namespace tss {

inline constexpr std::size_t kAdapterHidden = 128;
inline constexpr std::size_t kTransformerHeads = 8;
inline constexpr std::size_t kTransformerFfn = 1024;
inline constexpr std::size_t kTaskRecognitionHidden = 128;
inline constexpr std::size_t kStepHidden = 768;

struct NamedParam {
  std::string name;
  ad::Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

// rows x cols parameter drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) and
// rounded to f32.
ad::Tensor init_uniform_fan_in(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng);

// Deep copy of a parameter: fresh leaf with the same values.
ad::Tensor clone_param(const ad::Tensor& t);

struct Linear {
  ad::Tensor weight;  // [in, out]
  ad::Tensor bias;    // [1, out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
  ad::Tensor forward(const ad::Tensor& x) const;
  void append_params(ParamList& out, const std::string& prefix) const;
  Linear clone() const;
};

// Bottleneck adapter on frozen backbone features: up(relu(down(x))).
class Adapter {
 public:
  Adapter() = default;
  Adapter(Linear down, Linear up);
  static Adapter init(std::uint64_t seed, std::size_t dim = kMatchDim,
                      std::size_t hidden = kAdapterHidden);

  std::size_t dim() const { return down_.in(); }
  ad::Tensor forward(const ad::Tensor& x) const;
  ParamList params(const std::string& prefix = "adapter") const;
  Adapter clone() const;
  const Linear& down() const noexcept { return down_; }
  const Linear& up() const noexcept { return up_; }

 private:
  Linear down_;
  Linear up_;
};

// f_v for every clip (the frozen adapter applied to e_v), f32.
ClipStore encode_clips(const Adapter& adapter, const ClipStore& clips);

struct HeadDims {
  std::size_t d_in;
  std::size_t d_h1;
  std::size_t d_h2;
  std::size_t d_out;
};

// d_h1 = d_out / 4 and d_h2 = d_out / 2 (floor), clamped to at least 1 for
// very small label spaces.
HeadDims head_dims(std::size_t d_in, std::size_t d_out);

// Pre-training head: three linear layers with ReLU between, raw logits out.
class TaskHead {
 public:
  TaskHead() = default;
  static TaskHead init(std::size_t d_in, std::size_t d_out, std::uint64_t seed);

  const HeadDims& dims() const noexcept { return dims_; }
  ad::Tensor forward(const ad::Tensor& f) const;
  ParamList params(const std::string& prefix) const;

 private:
  HeadDims dims_{};
  Linear l0_, l1_, l2_;
};

// Sinusoidal absolute position encoding, rows x dim.
std::vector<double> positional_encoding(std::size_t rows, std::size_t dim);

// Layer order of the downstream MLP.
enum class MlpOrder {
  literal,   // pos-enc -> ReLU -> linear -> linear
  standard,  // pos-enc -> linear -> ReLU -> linear
};

// Downstream MLP classifier over a feature sequence. Sequences are mean
// pooled over time after the parameter-free front end.
class DownstreamMLP {
 public:
  DownstreamMLP() = default;
  static DownstreamMLP init(std::size_t d_in, std::size_t d_hidden, std::size_t d_out,
                            MlpOrder order, std::uint64_t seed);

  // Parameter-free front end for one [T, d] sequence, returns [1, d].
  ad::Tensor encode_sequence(const ad::Tensor& sequence) const;
  // Front end for [B, d] rows, each a length-1 sequence.
  ad::Tensor encode_rows(const ad::Tensor& rows) const;
  // Trainable layers on encoded rows, [B, d] -> [B, classes].
  ad::Tensor classify(const ad::Tensor& encoded) const;
  ad::Tensor forward(std::span<const ad::Tensor> sequences) const;
  ParamList params(const std::string& prefix = "mlp") const;

 private:
  MlpOrder order_ = MlpOrder::literal;
  Linear l0_, l1_;
};

// One post-norm encoder layer: LN(x + MHA(x)), then LN(h + FFN(h)).
class EncoderLayer {
 public:
  EncoderLayer() = default;
  static EncoderLayer init(std::size_t dim, std::size_t heads, std::size_t ffn, Rng& rng);
  ad::Tensor forward(const ad::Tensor& x) const;
  // Several sequences stacked row-wise; attention stays within each one.
  ad::Tensor forward_packed(const ad::Tensor& x, std::span<const std::size_t> lengths) const;
  void append_params(ParamList& out, const std::string& prefix) const;

 private:
  std::size_t heads_ = kTransformerHeads;
  Linear q_, k_, v_, o_, ff1_, ff2_;
  ad::Tensor ln1_gamma_, ln1_beta_, ln2_gamma_, ln2_beta_;
};

// Position-encoded sequence with a learned [CLS] row prepended, one encoder
// layer, and the downstream MLP on the [CLS] output.
class DownstreamTransformer {
 public:
  DownstreamTransformer() = default;
  static DownstreamTransformer init(std::size_t dim, std::size_t d_hidden, std::size_t d_out,
                                    MlpOrder order, std::uint64_t seed);
  ad::Tensor forward(std::span<const ad::Tensor> sequences) const;
  ParamList params() const;

 private:
  ad::Tensor cls_;
  EncoderLayer layer_;
  DownstreamMLP mlp_;
};

}  // namespace tss
