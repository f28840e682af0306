#include "tss/optimizer.hpp"

#include <cmath>
#include <span>
#include <string>

#include "tss/error.hpp"

namespace tss {

Adam::Adam(std::vector<ad::Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const ad::Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (ad::Tensor& p : params_) p.zero_grad();
}

void Adam::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double lr = config_.lr;
  const double eps = config_.eps;
  const double wd = config_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const std::span<double> values = params_[k].mutable_values();
    const std::span<const double> grad = params_[k].grad();
#if defined(TSS_CHECKED_BUILD)
    bool finite = true;
    for (double g : grad) finite &= std::isfinite(g);
    if (!finite) throw NumericError("non-finite gradient at step " + std::to_string(steps_));
#endif
    double* m = m_[k].data();
    double* v = v_[k].data();
    double* w = values.data();
    const double* gp = grad.empty() ? nullptr : grad.data();
    const std::size_t n = values.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = (gp != nullptr ? gp[i] : 0.0) + wd * w[i];
      m[i] = round_to_f32(b1 * m[i] + (1.0 - b1) * g);
      v[i] = round_to_f32(b2 * v[i] + (1.0 - b2) * g * g);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] = round_to_f32(w[i] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

void Adam::restore(std::int64_t steps, std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw DataError("optimizer state does not match the parameter list");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (m[k].size() != params_[k].size() || v[k].size() != params_[k].size()) {
      throw DataError("optimizer moment shape mismatch");
    }
  }
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace tss
