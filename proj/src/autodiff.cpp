#include "drgcn/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace drgcn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap view(const Tensor& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MutMap view(Tensor& t) {
  return MutMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw TapeError(std::string(op) + ": operands recorded on different tapes");
  }
  return *a.tape;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

void require_column(const Tensor& t, std::size_t rows, const char* op) {
  if (t.cols() != 1 || t.rows() != rows) {
    throw ShapeError(std::string(op) + ": expected " + std::to_string(rows) + "x1 column, got " + shape_string(t));
  }
}

template <class F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }
bool Var::requires_grad() const { return tape->requires_grad(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  check("leaf", value);
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  n.op = "leaf";
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  if (consumed_) throw TapeError("record on a consumed tape");
  check(op, value);
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (Var in : inputs) {
    if (in.tape != this) throw TapeError(std::string(op) + ": input from another tape");
    n.inputs.push_back(in.id);
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Tape::check(std::string_view op, const Tensor& t) const {
  if (options_.check_finite && !t.all_finite()) throw NonFiniteError(std::string(op));
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw TapeError("backward: loss from another tape");
  if (consumed_) throw TapeError("backward: tape already consumed");
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) throw TapeError("backward: loss must be 1x1, got " + shape_string(lv));
  consumed_ = true;

  for (auto& n : nodes_) {
    if (n.is_leaf && n.requires_grad) n.grad = Tensor(n.value.rows(), n.value.cols());
  }
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad = Tensor(1, 1, 1.0);

  std::vector<Tensor*> grad_in;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.is_leaf || !n.backward || n.grad.empty()) continue;
    grad_in.assign(n.inputs.size(), nullptr);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      Node& in = nodes_[n.inputs[k]];
      if (!in.requires_grad) continue;
      if (in.grad.empty()) in.grad = Tensor(in.value.rows(), in.value.cols());
      grad_in[k] = &in.grad;
    }
    n.backward(n.value, n.grad, grad_in);
    // Intermediate gradients are not needed once propagated.
    n.grad = Tensor();
    n.backward = nullptr;
  }
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (!consumed_) throw TapeError("grad requested before backward");
  if (!n.is_leaf || !n.requires_grad) throw TapeError("grad is only kept for leaves that require it");
  return n.grad;
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(av) + " * " + shape_string(bv));
  }
  Tensor out(av.rows(), bv.cols());
  view(out).noalias() = view(av) * view(bv);
  return t.record("matmul", std::move(out), {a, b},
                  [pa = &av, pb = &bv](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
                    if (gi[0]) view(*gi[0]).noalias() += view(g) * view(*pb).transpose();
                    if (gi[1]) view(*gi[1]).noalias() += view(*pa).transpose() * view(g);
                  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out(a.rows(), a.cols());
  view(out) = view(a.value()) + view(b.value());
  return t.record("add", std::move(out), {a, b}, [](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) view(*gi[0]) += view(g);
    if (gi[1]) view(*gi[1]) += view(g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out(a.rows(), a.cols());
  view(out) = view(a.value()) - view(b.value());
  return t.record("sub", std::move(out), {a, b}, [](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) view(*gi[0]) += view(g);
    if (gi[1]) view(*gi[1]) -= view(g);
  });
}

Var hadamard(Var a, Var b) {
  Tape& t = same_tape(a, b, "hadamard");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "hadamard");
  Tensor out(av.rows(), av.cols());
  view(out) = view(av).cwiseProduct(view(bv));
  return t.record("hadamard", std::move(out), {a, b},
                  [pa = &av, pb = &bv](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
                    if (gi[0]) view(*gi[0]) += view(g).cwiseProduct(view(*pb));
                    if (gi[1]) view(*gi[1]) += view(g).cwiseProduct(view(*pa));
                  });
}

Var scale(Var a, double s) { return affine(a, s, 0.0); }

Var affine(Var a, double s, double shift) {
  Tensor out = map_values(a.value(), [&](double v) { return s * v + shift; });
  return a.tape->record("affine", std::move(out), {a}, [s](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
    view(*gi[0]) += s * view(g);
  });
}

Var square(Var a) {
  const Tensor& av = a.value();
  Tensor out = map_values(av, [](double v) { return v * v; });
  return a.tape->record("square", std::move(out), {a},
                        [pa = &av](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
                          view(*gi[0]) += 2.0 * view(g).cwiseProduct(view(*pa));
                        });
}

Var relu(Var a) {
  const Tensor& av = a.value();
  Tensor out = map_values(av, [](double v) { return v > 0.0 ? v : 0.0; });
  return a.tape->record("relu", std::move(out), {a},
                        [pa = &av](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
                          Tensor& d = *gi[0];
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            if ((*pa)[i] > 0.0) d[i] += g[i];
                          }
                        });
}

Var sigmoid(Var a) {
  Tensor out = map_values(a.value(), [](double v) {
    // Split by sign so exp never overflows; the clamp keeps the result
    // strictly inside (0, 1) where rounding would reach an endpoint.
    constexpr double lo = std::numeric_limits<double>::denorm_min();
    constexpr double hi = 1.0 - 0x1.0p-53;
    double y;
    if (v >= 0.0) {
      y = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      y = e / (1.0 + e);
    }
    return std::clamp(y, lo, hi);
  });
  return a.tape->record("sigmoid", std::move(out), {a}, [](const Tensor& y, const Tensor& g, std::span<Tensor* const> gi) {
    Tensor& d = *gi[0];
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(Var a) {
  Tensor out = map_values(a.value(), [](double v) { return std::tanh(v); });
  return a.tape->record("tanh", std::move(out), {a}, [](const Tensor& y, const Tensor& g, std::span<Tensor* const> gi) {
    Tensor& d = *gi[0];
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var add_row_bias(Var x, Var bias) {
  Tape& t = same_tape(x, bias, "add_row_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw ShapeError("add_row_bias: bias " + shape_string(bv) + " for input " + shape_string(xv));
  }
  Tensor out(xv.rows(), xv.cols());
  view(out) = view(xv).rowwise() + view(bv).row(0);
  return t.record("add_row_bias", std::move(out), {x, bias},
                  [](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
                    if (gi[0]) view(*gi[0]) += view(g);
                    if (gi[1]) view(*gi[1]) += view(g).colwise().sum();
                  });
}

Var scale_rows(Var x, Var c) {
  Tape& t = same_tape(x, c, "scale_rows");
  const Tensor& xv = x.value();
  const Tensor& cv = c.value();
  require_column(cv, xv.rows(), "scale_rows");
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) = cv[i] * xv(i, j);
  }
  return t.record("scale_rows", std::move(out), {x, c},
                  [px = &xv, pc = &cv](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                      double acc = 0.0;
                      for (std::size_t j = 0; j < g.cols(); ++j) {
                        if (gi[0]) (*gi[0])(i, j) += (*pc)[i] * g(i, j);
                        acc += g(i, j) * (*px)(i, j);
                      }
                      if (gi[1]) (*gi[1])[i] += acc;
                    }
                  });
}

Var blend_rows(Var a, Var b, Var w) {
  Tape& t = same_tape(a, b, "blend_rows");
  same_tape(a, w, "blend_rows");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Tensor& wv = w.value();
  require_same_shape(av, bv, "blend_rows");
  require_column(wv, av.rows(), "blend_rows");
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    const double wi = wv[i];
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) = (1.0 - wi) * av(i, j) + wi * bv(i, j);
  }
  return t.record("blend_rows", std::move(out), {a, b, w},
                  [pa = &av, pb = &bv, pw = &wv](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                      const double wi = (*pw)[i];
                      double acc = 0.0;
                      for (std::size_t j = 0; j < g.cols(); ++j) {
                        const double gij = g(i, j);
                        if (gi[0]) (*gi[0])(i, j) += (1.0 - wi) * gij;
                        if (gi[1]) (*gi[1])(i, j) += wi * gij;
                        acc += gij * ((*pb)(i, j) - (*pa)(i, j));
                      }
                      if (gi[2]) (*gi[2])[i] += acc;
                    }
                  });
}

Var rows_softmax(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const auto r = xv.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) z += (out(i, j) = std::exp(r[j] - m));
    for (std::size_t j = 0; j < r.size(); ++j) out(i, j) /= z;
  }
  return x.tape->record("rows_softmax", std::move(out), {x},
                        [](const Tensor& y, const Tensor& g, std::span<Tensor* const> gi) {
                          for (std::size_t i = 0; i < y.rows(); ++i) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                            for (std::size_t j = 0; j < y.cols(); ++j) (*gi[0])(i, j) += y(i, j) * (g(i, j) - dot);
                          }
                        });
}

Var rows_log_softmax(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const auto r = xv.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double v : r) z += std::exp(v - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < r.size(); ++j) out(i, j) = r[j] - lse;
  }
  return x.tape->record("rows_log_softmax", std::move(out), {x},
                        [](const Tensor& y, const Tensor& g, std::span<Tensor* const> gi) {
                          for (std::size_t i = 0; i < y.rows(); ++i) {
                            double gsum = 0.0;
                            for (std::size_t j = 0; j < y.cols(); ++j) gsum += g(i, j);
                            for (std::size_t j = 0; j < y.cols(); ++j) {
                              (*gi[0])(i, j) += g(i, j) - std::exp(y(i, j)) * gsum;
                            }
                          }
                        });
}

Var l2_normalize_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  std::vector<double> norms(xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double ss = 0.0;
    for (double v : xv.row(i)) ss += v * v;
    norms[i] = std::sqrt(ss);
    if (norms[i] > 0.0) {
      for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) = xv(i, j) / norms[i];
    }
  }
  return x.tape->record("l2_normalize_rows", std::move(out), {x},
                        [norms = std::move(norms)](const Tensor& y, const Tensor& g, std::span<Tensor* const> gi) {
                          // d(x/|x|) = (g - y (g.y)) / |x|; zero rows pass no gradient.
                          for (std::size_t i = 0; i < y.rows(); ++i) {
                            if (norms[i] == 0.0) continue;
                            double dot = 0.0;
                            for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                            for (std::size_t j = 0; j < y.cols(); ++j) {
                              (*gi[0])(i, j) += (g(i, j) - y(i, j) * dot) / norms[i];
                            }
                          }
                        });
}

Var concat_cols(Var a, Var b) {
  Tape& t = same_tape(a, b, "concat_cols");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw ShapeError("concat_cols: row counts differ " + shape_string(av) + " vs " + shape_string(bv));
  }
  const std::size_t p = av.cols();
  const std::size_t q = bv.cols();
  Tensor out(av.rows(), p + q);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    std::copy_n(av.row(i).data(), p, out.row(i).data());
    std::copy_n(bv.row(i).data(), q, out.row(i).data() + p);
  }
  return t.record("concat_cols", std::move(out), {a, b},
                  [p, q](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                      for (std::size_t j = 0; j < p; ++j) {
                        if (gi[0]) (*gi[0])(i, j) += g(i, j);
                      }
                      for (std::size_t j = 0; j < q; ++j) {
                        if (gi[1]) (*gi[1])(i, j) += g(i, p + j);
                      }
                    }
                  });
}

Var gather_rows(Var x, std::span<const std::size_t> index) {
  const Tensor& xv = x.value();
  Tensor out(index.size(), xv.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= xv.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(index[r]) + " out of range for " + shape_string(xv));
    }
    std::copy_n(xv.row(index[r]).data(), xv.cols(), out.row(r).data());
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return x.tape->record("gather_rows", std::move(out), {x},
                        [idx = std::move(idx)](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
                          for (std::size_t r = 0; r < idx.size(); ++r) {
                            auto dst = gi[0]->row(idx[r]);
                            const auto src = g.row(r);
                            for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
                          }
                        });
}

Var head_rows(Var x, std::size_t k) {
  const Tensor& xv = x.value();
  if (k > xv.rows()) throw ShapeError("head_rows: k exceeds rows of " + shape_string(xv));
  if (k == xv.rows()) return x;
  Tensor out(k, xv.cols(), std::span<const double>(xv.data(), k * xv.cols()));
  return x.tape->record("head_rows", std::move(out), {x},
                        [](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                        });
}

Var dropout(Var x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const Tensor& xv = x.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(xv.rows(), xv.cols());
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.bernoulli(rate) ? 0.0 : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  return x.tape->record("dropout", std::move(out), {x},
                        [mask = std::move(mask)](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * mask[i];
                        });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape->record("sum", Tensor::scalar(s), {x}, [](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
    const double gv = g[0];
    for (double& v : gi[0]->values()) v += gv;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

}  // namespace drgcn
