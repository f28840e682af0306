#pragma once

#include <cstdint>
#include <vector>

#include "tss/autodiff.hpp"

namespace tss {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // L2 term added to the gradient before the moment updates.
  double weight_decay = 0.0;
};

// Adam with bias correction. Parameters and moments are kept
// f32-representable so checkpoints round-trip bit-exactly.
class Adam {
 public:
  Adam(std::vector<ad::Tensor> params, AdamConfig config);

  void zero_grad();
  // Applies one update from the parameters' current gradients. A parameter
  // that never received a gradient is treated as having a zero gradient.
  void step();

  const AdamConfig& config() const noexcept { return config_; }
  std::int64_t step_count() const noexcept { return steps_; }
  const std::vector<ad::Tensor>& params() const noexcept { return params_; }
  const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }

  void restore(std::int64_t steps, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

 private:
  std::vector<ad::Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t steps_ = 0;
};

inline double round_to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace tss
