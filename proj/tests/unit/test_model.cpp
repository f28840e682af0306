#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "temp_dir.hpp"
#include "tss/checkpoint.hpp"
#include "tss/model.hpp"

namespace tss {
namespace {

std::vector<double> random_rows(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

void zero_params(const ParamList& params) {
  for (const NamedParam& p : params) {
    for (double& x : p.tensor.mutable_values()) x = 0.0;
  }
}

TEST(Model, ZeroAdapterGivesZeroOutput) {
  const Adapter a = Adapter::init(1);
  zero_params(a.params());
  Rng rng(2);
  const ad::Tensor y = a.forward(ad::Tensor::from(4, kMatchDim, random_rows(rng, 4 * kMatchDim)));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Model, AdapterMatchesExplicitMatmuls) {
  const Adapter a = Adapter::init(3);
  Rng rng(4);
  const std::vector<double> x = random_rows(rng, 10 * kMatchDim);
  const ad::Tensor y = a.forward(ad::Tensor::from(10, kMatchDim, x));

  oracle::Mat h = oracle::matmul({10, kMatchDim, x}, oracle::from_tensor(a.down().weight));
  for (std::size_t i = 0; i < h.rows; ++i) {
    for (std::size_t j = 0; j < h.cols; ++j) {
      h.at(i, j) = std::max(0.0, h.at(i, j) + a.down().bias.values()[j]);
    }
  }
  oracle::Mat out = oracle::matmul(h, oracle::from_tensor(a.up().weight));
  for (std::size_t i = 0; i < out.rows; ++i) {
    for (std::size_t j = 0; j < out.cols; ++j) {
      EXPECT_NEAR(y.at(i, j), out.at(i, j) + a.up().bias.values()[j], 1e-5);
    }
  }
}

TEST(Model, AdapterShapeAtPaperBatch) {
  const Adapter a = Adapter::init(5);
  const ad::Tensor y = a.forward(ad::Tensor::zeros(256, kMatchDim));
  EXPECT_EQ(y.rows(), 256u);
  EXPECT_EQ(y.cols(), kMatchDim);
  EXPECT_EQ(a.down().out(), kAdapterHidden);
  EXPECT_THROW(a.forward(ad::Tensor::zeros(2, 100)), DataError);
}

TEST(Model, HeadFloorRule) {
  const HeadDims d8 = head_dims(512, 8);
  EXPECT_EQ(d8.d_h1, 2u);
  EXPECT_EQ(d8.d_h2, 4u);
  const HeadDims big = head_dims(512, 10038);
  EXPECT_EQ(big.d_h1, 2509u);
  EXPECT_EQ(big.d_h2, 5019u);
  for (std::size_t d = 4; d < 200; ++d) {
    EXPECT_EQ(head_dims(512, d).d_h1, d / 4);
    EXPECT_EQ(head_dims(512, d).d_h2, d / 2);
  }
  EXPECT_THROW(head_dims(512, 0), DataError);
}

TEST(Model, HeadZeroInputZeroBiasGivesZeroLogits) {
  const TaskHead h = TaskHead::init(kMatchDim, 12, 6);
  for (const NamedParam& p : h.params("h")) {
    if (p.name.ends_with(".bias")) {
      for (double& x : p.tensor.mutable_values()) x = 0.0;
    }
  }
  const ad::Tensor y = h.forward(ad::Tensor::zeros(3, kMatchDim));
  EXPECT_EQ(y.cols(), 12u);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Model, InitIsSeedReproducible) {
  const Adapter a = Adapter::init(7), b = Adapter::init(7), c = Adapter::init(8);
  const auto va = a.down().weight.values(), vb = b.down().weight.values(), vc = c.down().weight.values();
  EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
  EXPECT_FALSE(std::equal(va.begin(), va.end(), vc.begin()));
}

TEST(Model, InitMeanIsNearZero) {
  Rng rng(9);
  const std::size_t n = 10000, fan_in = 64;
  const ad::Tensor t = init_uniform_fan_in(1, n, fan_in, rng);
  double mean = 0.0;
  for (double x : t.values()) mean += x;
  mean /= double(n);
  const double bound = 1.0 / std::sqrt(double(fan_in));
  const double sigma = bound / std::sqrt(3.0) / std::sqrt(double(n));
  EXPECT_LT(std::abs(mean), 3.0 * sigma);
  for (double x : t.values()) {
    EXPECT_LE(std::abs(x), bound);
    EXPECT_EQ(x, round_to_f32(x));
  }
}

TEST(Model, PositionalEncodingFirstRows) {
  const auto pe = positional_encoding(2, 4);
  EXPECT_EQ(pe[0], 0.0);
  EXPECT_EQ(pe[1], 1.0);
  EXPECT_NEAR(pe[4], std::sin(1.0), 1e-15);
  EXPECT_NEAR(pe[6], std::sin(0.01), 1e-15);
  EXPECT_NEAR(pe[7], std::cos(0.01), 1e-15);
}

TEST(Model, DownstreamMlpLiteralOrder) {
  const DownstreamMLP m = DownstreamMLP::init(4, 3, 2, MlpOrder::literal, 10);
  // Length-2 sequence: relu(x + pe) averaged over time.
  const std::vector<double> x{-5, -5, -5, -5, 0.5, 0.5, 0.5, 0.5};
  const ad::Tensor enc = m.encode_sequence(ad::Tensor::from(2, 4, x));
  const auto pe = positional_encoding(2, 4);
  for (std::size_t c = 0; c < 4; ++c) {
    const double ref = (std::max(0.0, x[c] + pe[c]) + std::max(0.0, x[4 + c] + pe[4 + c])) / 2.0;
    EXPECT_NEAR(enc.at(0, c), ref, 1e-15);
  }
  const ad::Tensor seq = ad::Tensor::from(2, 4, x);
  const std::vector<ad::Tensor> seqs{seq};
  EXPECT_EQ(m.forward(seqs).cols(), 2u);
}

TEST(Model, DownstreamMlpStandardOrderAppliesReluAfterFirstLinear) {
  const DownstreamMLP m = DownstreamMLP::init(4, 3, 2, MlpOrder::standard, 11);
  const ad::Tensor rows = ad::Tensor::from(1, 4, {-3, -3, -3, -3});
  const ad::Tensor enc = m.encode_rows(rows);
  EXPECT_EQ(enc.at(0, 0), -3.0);  // no ReLU in the front end
  EXPECT_EQ(enc.at(0, 1), -2.0);
}

TEST(Model, TransformerShapesAndDeterminism) {
  const auto t1 = DownstreamTransformer::init(16, 8, 5, MlpOrder::literal, 12);
  const auto t2 = DownstreamTransformer::init(16, 8, 5, MlpOrder::literal, 12);
  Rng rng(13);
  const std::vector<ad::Tensor> seqs{ad::Tensor::from(3, 16, random_rows(rng, 48)),
                                     ad::Tensor::from(1, 16, random_rows(rng, 16))};
  const ad::Tensor y1 = t1.forward(seqs), y2 = t2.forward(seqs);
  EXPECT_EQ(y1.rows(), 2u);
  EXPECT_EQ(y1.cols(), 5u);
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_EQ(y1.values()[i], y2.values()[i]);
  bool has_cls = false;
  for (const NamedParam& p : t1.params()) has_cls |= p.name == "transformer.cls";
  EXPECT_TRUE(has_cls);
}

// The key bias shifts every score in a softmax row by the same amount, so its
// true gradient is zero and a relative error on it only compares noise.
bool is_key_bias(const std::string& name) { return name.ends_with(".k.bias"); }

TEST(Model, EncoderLayerGradientCheck) {
  Rng rng(14);
  const EncoderLayer layer = EncoderLayer::init(8, 2, 16, rng);
  ParamList named;
  layer.append_params(named, "enc");
  ad::Tensor x = ad::Tensor::from(3, 8, random_rows(rng, 24), true);
  std::vector<ad::Tensor> inputs{x};
  ad::Tensor key_bias;
  for (const NamedParam& p : named) {
    if (is_key_bias(p.name)) {
      key_bias = p.tensor;
    } else {
      inputs.push_back(p.tensor);
    }
  }
  ASSERT_TRUE(key_bias.defined());
  const std::vector<std::size_t> y{3};
  auto loss = [&](const std::vector<ad::Tensor>&) {
    return ad::cross_entropy(ad::mean_rows(layer.forward(x)), y);
  };
  EXPECT_LT(oracle::gradient_check(inputs, loss), 1e-5);
  key_bias.zero_grad();
  loss(inputs).backward();
  for (double g : key_bias.grad()) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(Model, TransformerGradientCheck) {
  // Composed [CLS] + encoder + MLP through the public API. The wide FFN puts
  // ReLU kinks within a finite-difference step, so it is left to the layer
  // check above.
  const auto t = DownstreamTransformer::init(8, 4, 3, MlpOrder::standard, 14);
  Rng rng(15);
  const ad::Tensor seq = ad::Tensor::from(3, 8, random_rows(rng, 24));
  std::vector<ad::Tensor> params;
  for (const NamedParam& p : t.params()) {
    if (!is_key_bias(p.name) && p.name.find(".ff1.") == std::string::npos) params.push_back(p.tensor);
  }
  const std::vector<std::size_t> y{1};
  const double err = oracle::gradient_check(params, [&](const std::vector<ad::Tensor>&) {
    const std::vector<ad::Tensor> seqs{seq};
    return ad::cross_entropy(t.forward(seqs), y);
  });
  EXPECT_LT(err, 1e-5);
}

TEST(Model, TransformerBatchMatchesOneSequenceAtATime) {
  // Packing only batches row-wise layers, so logits are bitwise unchanged.
  const auto t = DownstreamTransformer::init(16, 8, 5, MlpOrder::literal, 21);
  Rng rng(22);
  std::vector<ad::Tensor> seqs;
  for (std::size_t len : {1, 3, 2, 5}) seqs.push_back(ad::Tensor::from(len, 16, random_rows(rng, len * 16)));
  const ad::Tensor batch = t.forward(seqs);
  ASSERT_EQ(batch.rows(), seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const std::vector<ad::Tensor> one{seqs[i]};
    const ad::Tensor single = t.forward(one);
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(batch.at(i, c), single.at(0, c)) << i << "," << c;
  }
}

TEST(Model, EncodeClipsKeepsIdsAndShape) {
  const Adapter a = Adapter::init(16, 8, 4);
  ClipStore clips(8);
  Rng rng(17);
  for (int i = 0; i < 300; ++i) {
    std::vector<float> f(8);
    for (float& x : f) x = static_cast<float>(rng.normal());
    clips.add({i / 3, i % 3, f});
  }
  const ClipStore out = encode_clips(a, clips);
  ASSERT_EQ(out.size(), clips.size());
  EXPECT_EQ(out[299].video_id, 99);
  std::vector<double> x0(clips[299].feature.begin(), clips[299].feature.end());
  const ad::Tensor y = a.forward(ad::Tensor::from(1, 8, x0));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(out[299].feature[j], static_cast<float>(y.at(0, j)));
}

TEST(Checkpoint, BytesRoundTripIsBitExact) {
  testing::TempDir dir;
  const Adapter a = Adapter::init(18);
  Checkpoint c;
  c.meta_json = R"({"stage":0})";
  capture(c, a.params());
  save_checkpoint(c, dir / "a.tssckpt");
  const Checkpoint back = load_checkpoint(dir / "a.tssckpt");
  EXPECT_EQ(back, c);
  const Adapter restored = adapter_from_checkpoint(back);
  const auto v1 = a.up().weight.values(), v2 = restored.up().weight.values();
  EXPECT_TRUE(std::equal(v1.begin(), v1.end(), v2.begin()));
}

TEST(Checkpoint, CorruptBytesAreRejected) {
  Checkpoint c;
  c.put({"x", 1, 2, {1.0f, 2.0f}});
  std::string bytes = checkpoint_to_bytes(c);
  EXPECT_THROW(checkpoint_from_bytes(bytes.substr(0, bytes.size() - 3)), DataError);
  bytes[0] = 'X';
  EXPECT_THROW(checkpoint_from_bytes(bytes), DataError);
  EXPECT_THROW(c.at("missing"), DataError);
}

}  // namespace
}  // namespace tss
