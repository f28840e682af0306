#include "tss/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "tss/error.hpp"

namespace tss::ad {

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

namespace {

std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw DataError(std::string(op) + ": shape mismatch " + detail);
}

void check_finite([[maybe_unused]] const Tensor& t) {
#if defined(TSS_CHECKED_BUILD)
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + t.node()->op);
    }
  }
#endif
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// c[m,n] += a[m,k] * b[k,n], accumulating along k in order.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  // Row blocks with the reduction index outside, so each row of b is read
  // once per block. Every c[i][j] still accumulates over p in ascending order.
  constexpr std::size_t kRowBlock = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += kRowBlock) {
    const std::size_t i1 = std::min(m, i0 + kRowBlock);
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      for (std::size_t i = i0; i < i1; ++i) {
        const double aip = a[i * k + p];
        if (aip == 0.0) continue;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
}

std::vector<double> transpose(const double* a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  }
  return t;
}

}  // namespace

Tensor make_result(std::size_t rows, std::size_t cols, std::vector<Tensor> inputs, const char* op) {
  auto node = std::make_shared<Node>();
  node->rows = rows;
  node->cols = cols;
  node->value.assign(rows * cols, 0.0);
  node->op = op;
  for (const Tensor& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const Tensor& in : inputs) node->parents.push_back(in.node_);
  }
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->rows = rows;
  node->cols = cols;
  node->value.assign(rows * cols, 0.0);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values,
                    bool requires_grad) {
  if (values.size() != rows * cols) {
    throw DataError("tensor: " + std::to_string(values.size()) + " values for shape [" +
                    std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
  auto node = std::make_shared<Node>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from(1, 1, {value}, requires_grad);
}

std::size_t Tensor::rows() const { return node_->rows; }
std::size_t Tensor::cols() const { return node_->cols; }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
std::span<const double> Tensor::values() const& { return node_->value; }
std::span<double> Tensor::mutable_values() const& { return node_->value; }
std::span<const double> Tensor::grad() const& { return node_->grad; }

double Tensor::item() const {
  if (size() != 1) throw DataError("item() on a tensor of shape " + shape_str(*this));
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (size() != 1) throw DataError("backward() needs a 1x1 root, got " + shape_str(*this));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul", shape_str(a) + " x " + shape_str(b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = make_result(m, n, {a, b}, "matmul");
  gemm_acc(a.values().data(), b.values().data(), out.node()->value.data(), m, k, n);
  check_finite(out);
  if (out.requires_grad()) {
    out.node()->backward = [m, k, n](Node& self) {
      Node& an = *self.parents[0];
      Node& bn = *self.parents[1];
      if (an.requires_grad) {
        std::vector<double> bt = transpose(bn.value.data(), k, n);
        gemm_acc(self.grad.data(), bt.data(), an.ensure_grad().data(), m, n, k);
      }
      if (bn.requires_grad) {
        std::vector<double> at = transpose(an.value.data(), m, k);
        gemm_acc(at.data(), self.grad.data(), bn.ensure_grad().data(), k, m, n);
      }
    };
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add", shape_str(a) + " + " + shape_str(b));
  Tensor out = make_result(a.rows(), a.cols(), {a, b}, "add");
  auto& v = out.node()->value;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
  check_finite(out);
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      for (auto& p : self.parents) {
        if (!p->requires_grad) continue;
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return out;
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row", shape_str(a) + " + " + shape_str(row));
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = make_result(m, n, {a, row}, "add_row");
  auto& v = out.node()->value;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = a.values()[i * n + j] + row.values()[j];
  }
  check_finite(out);
  if (out.requires_grad()) {
    out.node()->backward = [m, n](Node& self) {
      Node& an = *self.parents[0];
      Node& rn = *self.parents[1];
      if (an.requires_grad) {
        auto& g = an.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (rn.requires_grad) {
        auto& g = rn.ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
        }
      }
    };
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul", shape_str(a) + " * " + shape_str(b));
  Tensor out = make_result(a.rows(), a.cols(), {a, b}, "mul");
  auto& v = out.node()->value;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
  check_finite(out);
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      Node& an = *self.parents[0];
      Node& bn = *self.parents[1];
      if (an.requires_grad) {
        auto& g = an.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn.value[i];
      }
      if (bn.requires_grad) {
        auto& g = bn.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an.value[i];
      }
    };
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = make_result(a.rows(), a.cols(), {a}, "scale");
  auto& v = out.node()->value;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * factor;
  check_finite(out);
  if (out.requires_grad()) {
    out.node()->backward = [factor](Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    };
  }
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = make_result(a.rows(), a.cols(), {a}, "relu");
  auto& v = out.node()->value;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  check_finite(out);
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      Node& an = *self.parents[0];
      auto& g = an.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (an.value[i] > 0.0) g[i] += self.grad[i];
      }
    };
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = make_result(a.rows(), a.cols(), {a}, "sigmoid");
  auto& v = out.node()->value;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = stable_sigmoid(a.values()[i]);
  check_finite(out);
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = self.value[i];
        g[i] += self.grad[i] * s * (1.0 - s);
      }
    };
  }
  return out;
}

Tensor mean(const Tensor& a) {
  require(a.size() > 0, "mean", shape_str(a));
  Tensor out = make_result(1, 1, {a}, "mean");
  double sum = 0.0;
  for (double x : a.values()) sum += x;
  const double n = static_cast<double>(a.size());
  out.node()->value[0] = sum / n;
  check_finite(out);
  if (out.requires_grad()) {
    out.node()->backward = [n](Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      const double d = self.grad[0] / n;
      for (double& x : g) x += d;
    };
  }
  return out;
}

Tensor mean_rows(const Tensor& a) {
  require(a.rows() > 0, "mean_rows", shape_str(a));
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = make_result(1, n, {a}, "mean_rows");
  auto& v = out.node()->value;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) v[j] += a.values()[i * n + j];
  }
  for (double& x : v) x /= static_cast<double>(m);
  check_finite(out);
  if (out.requires_grad()) {
    out.node()->backward = [m, n](Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] / static_cast<double>(m);
      }
    };
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows", "(no inputs)");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const Tensor& p : parts) {
    require(p.cols() == n, "concat_rows", shape_str(parts[0]) + " with " + shape_str(p));
    m += p.rows();
  }
  Tensor out = make_result(m, n, std::vector<Tensor>(parts.begin(), parts.end()), "concat_rows");
  auto& v = out.node()->value;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::copy(p.values().begin(), p.values().end(), v.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.size();
  }
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      std::size_t off = 0;
      for (auto& p : self.parents) {
        const std::size_t len = p->value.size();
        if (p->requires_grad) {
          auto& g = p->ensure_grad();
          for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
        }
        off += len;
      }
    };
  }
  return out;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  require(begin + count <= a.rows(), "slice_rows", shape_str(a));
  const std::size_t n = a.cols();
  Tensor out = make_result(count, n, {a}, "slice_rows");
  std::copy(a.values().begin() + static_cast<std::ptrdiff_t>(begin * n),
            a.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * n),
            out.node()->value.begin());
  if (out.requires_grad()) {
    out.node()->backward = [begin, n](Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
    };
  }
  return out;
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t m = a.rows(), n = a.cols();
  require(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n,
          "layer_norm", shape_str(a) + " with " + shape_str(gamma));
  Tensor out = make_result(m, n, {a, gamma, beta}, "layer_norm");
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  auto& v = out.node()->value;
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.values().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[j] - mu) * inv_std[i];
      v[i * n + j] = gamma.values()[j] * xhat[i * n + j] + beta.values()[j];
    }
  }
  check_finite(out);
  if (out.requires_grad()) {
    out.node()->backward = [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
      Node& an = *self.parents[0];
      Node& gn = *self.parents[1];
      Node& bn = *self.parents[2];
      if (gn.requires_grad || bn.requires_grad) {
        auto& gg = gn.ensure_grad();
        auto& gb = bn.ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            gg[j] += self.grad[i * n + j] * xhat[i * n + j];
            gb[j] += self.grad[i * n + j];
          }
        }
      }
      if (an.requires_grad) {
        auto& ga = an.ensure_grad();
        std::vector<double> dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_d = 0.0;
          double mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = self.grad[i * n + j] * gn.value[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[i * n + j];
          }
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            ga[i * n + j] += inv_std[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
          }
        }
      }
    };
  }
  return out;
}

namespace {

void softmax_row(const double* x, double* y, std::size_t n) {
  double mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  for (std::size_t j = 0; j < n; ++j) y[j] /= sum;
}

}  // namespace

Tensor softmax(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  require(n > 0, "softmax", shape_str(a));
  Tensor out = make_result(m, n, {a}, "softmax");
  for (std::size_t i = 0; i < m; ++i) {
    softmax_row(a.values().data() + i * n, out.node()->value.data() + i * n, n);
  }
  check_finite(out);
  if (out.requires_grad()) {
    out.node()->backward = [m, n](Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = self.value.data() + i * n;
        const double* dy = self.grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (dy[j] - dot);
      }
    };
  }
  return out;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  const std::size_t tq = q.rows(), tk = k.rows(), d = q.cols();
  require(k.cols() == d && v.cols() == d && v.rows() == tk, "scaled_dot_attention",
          shape_str(q) + ", " + shape_str(k) + ", " + shape_str(v));
  require(heads > 0 && d % heads == 0, "scaled_dot_attention",
          "(dimension " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads)");
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out = make_result(tq, d, {q, k, v}, "scaled_dot_attention");
  // probs[h][i][j]
  std::vector<double> probs(heads * tq * tk);
  std::vector<double> scores(tk);
  auto& o = out.node()->value;
  const double* Q = q.values().data();
  const double* K = k.values().data();
  const double* V = v.values().data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t i = 0; i < tq; ++i) {
      for (std::size_t j = 0; j < tk; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += Q[i * d + c0 + c] * K[j * d + c0 + c];
        scores[j] = s * inv_sqrt;
      }
      double* p = probs.data() + (h * tq + i) * tk;
      softmax_row(scores.data(), p, tk);
      for (std::size_t j = 0; j < tk; ++j) {
        for (std::size_t c = 0; c < dh; ++c) o[i * d + c0 + c] += p[j] * V[j * d + c0 + c];
      }
    }
  }
  check_finite(out);
  if (out.requires_grad()) {
    out.node()->backward = [tq, tk, d, dh, heads, inv_sqrt, probs = std::move(probs)](Node& self) {
      Node& qn = *self.parents[0];
      Node& kn = *self.parents[1];
      Node& vn = *self.parents[2];
      const double* Q = qn.value.data();
      const double* K = kn.value.data();
      const double* V = vn.value.data();
      const double* dO = self.grad.data();
      std::vector<double> dp(tk);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh;
        for (std::size_t i = 0; i < tq; ++i) {
          const double* p = probs.data() + (h * tq + i) * tk;
          if (vn.requires_grad) {
            auto& gv = vn.ensure_grad();
            for (std::size_t j = 0; j < tk; ++j) {
              for (std::size_t c = 0; c < dh; ++c) gv[j * d + c0 + c] += p[j] * dO[i * d + c0 + c];
            }
          }
          if (!qn.requires_grad && !kn.requires_grad) continue;
          double dot = 0.0;
          for (std::size_t j = 0; j < tk; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < dh; ++c) s += dO[i * d + c0 + c] * V[j * d + c0 + c];
            dp[j] = s;
            dot += s * p[j];
          }
          for (std::size_t j = 0; j < tk; ++j) {
            const double ds = p[j] * (dp[j] - dot) * inv_sqrt;
            if (ds == 0.0) continue;
            if (qn.requires_grad) {
              auto& gq = qn.ensure_grad();
              for (std::size_t c = 0; c < dh; ++c) gq[i * d + c0 + c] += ds * K[j * d + c0 + c];
            }
            if (kn.requires_grad) {
              auto& gk = kn.ensure_grad();
              for (std::size_t c = 0; c < dh; ++c) gk[j * d + c0 + c] += ds * Q[i * d + c0 + c];
            }
          }
        }
      }
    };
  }
  return out;
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets,
                       std::span<const double> mask) {
  require(targets.size() == logits.size(), "bce_with_logits",
          shape_str(logits) + " vs " + std::to_string(targets.size()) + " targets");
  require(mask.empty() || mask.size() == logits.size(), "bce_with_logits", "(mask size)");
  Tensor out = make_result(1, 1, {logits}, "bce_with_logits");
  const auto x = logits.values();
  double sum = 0.0;
  double count = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!mask.empty() && mask[i] == 0.0) continue;
    sum += std::max(x[i], 0.0) - x[i] * targets[i] + std::log1p(std::exp(-std::abs(x[i])));
    count += 1.0;
  }
  out.node()->value[0] = count > 0.0 ? sum / count : 0.0;
  check_finite(out);
  if (out.requires_grad() && count > 0.0) {
    std::vector<double> t(targets.begin(), targets.end());
    std::vector<double> mk(mask.begin(), mask.end());
    out.node()->backward = [count, t = std::move(t), mk = std::move(mk)](Node& self) {
      Node& ln = *self.parents[0];
      auto& g = ln.ensure_grad();
      const double scale = self.grad[0] / count;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!mk.empty() && mk[i] == 0.0) continue;
        g[i] += scale * (stable_sigmoid(ln.value[i]) - t[i]);
      }
    };
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t m = logits.rows(), n = logits.cols();
  require(labels.size() == m && m > 0, "cross_entropy",
          shape_str(logits) + " vs " + std::to_string(labels.size()) + " labels");
  for (std::size_t y : labels) {
    if (y >= n) throw DataError("cross_entropy: label out of range");
  }
  Tensor out = make_result(1, 1, {logits}, "cross_entropy");
  std::vector<double> probs(m * n);
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = logits.values().data() + i * n;
    softmax_row(x, probs.data() + i * n, n);
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double se = 0.0;
    for (std::size_t j = 0; j < n; ++j) se += std::exp(x[j] - mx);
    sum += mx + std::log(se) - x[labels[i]];
  }
  out.node()->value[0] = sum / static_cast<double>(m);
  check_finite(out);
  if (out.requires_grad()) {
    std::vector<std::size_t> y(labels.begin(), labels.end());
    out.node()->backward = [m, n, probs = std::move(probs), y = std::move(y)](Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      const double scale = self.grad[0] / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double target = (j == y[i]) ? 1.0 : 0.0;
          g[i * n + j] += scale * (probs[i * n + j] - target);
        }
      }
    };
  }
  return out;
}

}  // namespace tss::ad
