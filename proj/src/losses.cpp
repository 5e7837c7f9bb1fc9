#include <cmath>
#include <stdexcept>
#include <string>

#include "drgcn/training.hpp"

namespace drgcn {

namespace {

void check_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("drop rate must be in [0, 1)");
}

void check_rows(std::span<const std::size_t> rows, std::span<const std::uint32_t> targets, std::size_t n,
                std::size_t c) {
  if (rows.empty()) throw std::invalid_argument("supervised loss: empty mask");
  if (rows.size() != targets.size()) throw std::invalid_argument("supervised loss: rows and targets differ in length");
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= n) throw std::invalid_argument("supervised loss: row index out of range");
    if (targets[k] >= c) throw std::invalid_argument("supervised loss: target class out of range");
  }
}

}  // namespace

Tensor drop_node_augment(const Tensor& x, double rate, Rng& rng) {
  check_rate(rate);
  if (rate == 0.0) return x;
  Tensor out = x;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const double f = rng.bernoulli(rate) ? 0.0 : keep_scale;
    for (double& v : out.row(i)) v *= f;
  }
  return out;
}

std::shared_ptr<const CsrMatrix> drop_node_augment(const CsrMatrix& x, double rate, Rng& rng) {
  check_rate(rate);
  std::vector<double> factor(x.rows());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& f : factor) f = rate == 0.0 ? 1.0 : (rng.bernoulli(rate) ? 0.0 : keep_scale);
  return std::make_shared<const CsrMatrix>(x.scale_rows(factor));
}

Var supervised_loss(std::span<const Var> log_probs, std::span<const std::size_t> rows,
                    std::span<const std::uint32_t> targets) {
  if (log_probs.empty()) throw std::invalid_argument("supervised loss: no predictions");
  Var total;
  for (std::size_t s = 0; s < log_probs.size(); ++s) {
    Var lp = log_probs[s];
    check_rows(rows, targets, lp.rows(), lp.cols());
    Tensor onehot(rows.size(), lp.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) onehot(k, targets[k]) = 1.0;
    Var picked = hadamard(gather_rows(lp, rows), lp.tape->constant(std::move(onehot)));
    Var term = scale(sum(picked), -1.0 / static_cast<double>(rows.size() * log_probs.size()));
    total = s == 0 ? term : add(total, term);
  }
  return total;
}

double cross_entropy(std::span<const Tensor> yhats, std::span<const std::size_t> rows,
                     std::span<const std::uint32_t> targets) {
  if (yhats.empty()) throw std::invalid_argument("cross_entropy: no predictions");
  double total = 0.0;
  for (const Tensor& y : yhats) {
    check_rows(rows, targets, y.rows(), y.cols());
    double acc = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      // Only the target column carries label mass, so 0 * log 0 never arises.
      acc -= std::log(y(rows[k], targets[k]));
    }
    total += acc / static_cast<double>(rows.size());
  }
  return total / static_cast<double>(yhats.size());
}

Tensor sharpen(const Tensor& ybar, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("sharpen: temperature must be positive");
  Tensor out(ybar.rows(), ybar.cols());
  const double power = 1.0 / temperature;
  for (std::size_t i = 0; i < ybar.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < ybar.cols(); ++j) {
      if (ybar(i, j) < 0.0) throw std::invalid_argument("sharpen: negative entry");
      out(i, j) = std::pow(ybar(i, j), power);
      s += out(i, j);
    }
    if (!(s > 0.0)) throw std::invalid_argument("sharpen: row " + std::to_string(i) + " has zero mass");
    for (double& v : out.row(i)) v /= s;
  }
  return out;
}

Var consistency_loss(std::span<const Var> probs, const Tensor& target) {
  if (probs.empty()) throw std::invalid_argument("consistency loss: no predictions");
  Var total;
  for (std::size_t s = 0; s < probs.size(); ++s) {
    Var p = probs[s];
    if (p.rows() != target.rows() || p.cols() != target.cols()) {
      throw ShapeError("consistency loss: prediction " + shape_string(p.value()) + " vs target " +
                       shape_string(target));
    }
    Var diff = sub(p.tape->constant(target), p);
    Var term = scale(sum(square(diff)), 1.0 / static_cast<double>(target.rows() * probs.size()));
    total = s == 0 ? term : add(total, term);
  }
  return total;
}

double consistency_value(std::span<const Tensor> yhats, const Tensor& target) {
  if (yhats.empty()) throw std::invalid_argument("consistency: no predictions");
  double total = 0.0;
  for (const Tensor& y : yhats) {
    if (y.rows() != target.rows() || y.cols() != target.cols()) throw ShapeError("consistency: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += (target[i] - y[i]) * (target[i] - y[i]);
    total += acc / static_cast<double>(target.rows());
  }
  return total / static_cast<double>(yhats.size());
}

Var total_loss(Var sup, Var con, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda must be >= 0");
  return add(sup, scale(con, lambda));
}

Tensor mean_prediction(std::span<const Var> probs) {
  if (probs.empty()) throw std::invalid_argument("mean_prediction: no predictions");
  Tensor out(probs[0].rows(), probs[0].cols());
  for (Var p : probs) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(probs.size());
  for (double& v : out.values()) v *= inv;
  return out;
}

}  // namespace drgcn
