#include "drgcn/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace drgcn {

Adam::Adam(AdamConfig config, std::vector<double> weight_decay)
    : config_(config), decay_(std::move(weight_decay)), m_(decay_.size()), v_(decay_.size()) {}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
  if (params.size() != decay_.size() || grads.size() != decay_.size()) {
    throw ShapeError("Adam::step: expected " + std::to_string(decay_.size()) + " parameter slots");
  }
  for (std::size_t s = 0; s < params.size(); ++s) {
    const Tensor& p = *params[s];
    const Tensor& g = *grads[s];
    if (p.rows() != g.rows() || p.cols() != g.cols()) {
      throw ShapeError("Adam::step: slot " + std::to_string(s) + " parameter " + shape_string(p) + " vs gradient " +
                       shape_string(g));
    }
    if (m_[s].empty() && !p.empty()) {
      m_[s] = Tensor(p.rows(), p.cols());
      v_[s] = Tensor(p.rows(), p.cols());
    } else if (m_[s].rows() != p.rows() || m_[s].cols() != p.cols()) {
      throw ShapeError("Adam::step: slot " + std::to_string(s) + " changed shape");
    }
  }

  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t s = 0; s < params.size(); ++s) {
    Tensor& p = *params[s];
    const Tensor& g = *grads[s];
    Tensor& m = m_[s];
    Tensor& v = v_[s];
    const double decay = decay_[s];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= config_.lr * (m_hat / (std::sqrt(v_hat) + config_.eps) + decay * p[i]);
    }
  }
}

Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("glorot_uniform: dimensions must be positive");
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t(rows, cols);
  for (double& v : t.values()) v = rng.uniform(-a, a);
  return t;
}

Tensor uniform_pm_sqrt_k(std::size_t rows, std::size_t cols, double k, Rng& rng) {
  if (!(k > 0.0)) throw std::invalid_argument("uniform_pm_sqrt_k: k must be positive");
  if (rows == 0 || cols == 0) throw std::invalid_argument("uniform_pm_sqrt_k: dimensions must be positive");
  const double a = std::sqrt(k);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = rng.uniform(-a, a);
  return t;
}

}  // namespace drgcn
