#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "drgcn/rng.hpp"
#include "drgcn/tensor.hpp"

namespace drgcn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction and decoupled weight decay. Each parameter slot
/// carries its own decay coefficient, so regularization groups map onto slots:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + decay * p)
class Adam {
 public:
  Adam(AdamConfig config, std::vector<double> weight_decay);

  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads);

  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  const Tensor& first_moment(std::size_t slot) const { return m_.at(slot); }
  const Tensor& second_moment(std::size_t slot) const { return v_.at(slot); }

 private:
  AdamConfig config_;
  std::vector<double> decay_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t t_ = 0;
};

/// Glorot/Xavier uniform: U(-a, a), a = sqrt(6 / (rows + cols)).
Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);

/// U(-sqrt(k), sqrt(k)); k must be positive.
Tensor uniform_pm_sqrt_k(std::size_t rows, std::size_t cols, double k, Rng& rng);

}  // namespace drgcn
