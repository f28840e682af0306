#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace tss::ad {

struct Node;

// Handle to a node of the computation graph. Tensors are 2-D, row-major,
// 64-bit. Ops record their backward closure only when an input requires a
// gradient, so inference-only graphs keep no history.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const { return rows() * cols(); }
  bool requires_grad() const;

  // Spans alias the node; a temporary tensor would leave them dangling.
  std::span<const double> values() const&;
  std::span<const double> values() const&& = delete;
  // Direct access for leaves (initialisation, optimiser updates, checks).
  std::span<double> mutable_values() const&;
  std::span<double> mutable_values() const&& = delete;
  double at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }
  double item() const;

  // Empty span until a backward pass has reached this tensor.
  std::span<const double> grad() const&;
  std::span<const double> grad() const&& = delete;
  void zero_grad();

  // Reverse-mode pass from a 1x1 tensor.
  void backward() const;

  Node* node() const noexcept { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend Tensor make_result(std::size_t, std::size_t, std::vector<Tensor>, const char*);
  friend struct Node;
};

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
// a[m,n] + row[1,n] broadcast over rows (bias add).
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// Mean of all elements, 1x1.
Tensor mean(const Tensor& a);
// Column means over rows, 1xcols.
Tensor mean_rows(const Tensor& a);
// Vertical concatenation.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
// Row-wise normalisation with learned gain and bias (both 1xcols).
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// Row-wise softmax.
Tensor softmax(const Tensor& a);
// Multi-head scaled dot-product attention over [T, d] inputs; d must be
// divisible by `heads`. Projections are applied by the caller.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

// Mean binary cross-entropy on logits, max(x,0) - x t + log1p(exp(-|x|)).
// With a mask only entries whose mask is non-zero count; an all-zero mask
// gives a zero loss.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets,
                       std::span<const double> mask = {});
// Mean softmax cross-entropy for integer class labels, one per row.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace tss::ad
