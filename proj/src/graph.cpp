#include "drgcn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "drgcn/rng.hpp"

namespace drgcn {

Graph Graph::from_edges(std::size_t num_nodes, std::span<const Edge> edges) {
  if (num_nodes == 0) throw GraphError("graph needs at least one node");
  if (num_nodes > std::size_t{0xFFFFFFFFu}) throw GraphError("node count exceeds 32-bit index range");

  std::vector<std::pair<std::uint32_t, std::uint32_t>> directed;
  directed.reserve(edges.size() * 2);
  for (const Edge& e : edges) {
    if (e.u >= num_nodes || e.v >= num_nodes) {
      throw GraphError("edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) + ") out of range for " +
                       std::to_string(num_nodes) + " nodes");
    }
    if (e.u == e.v) continue;
    directed.emplace_back(e.u, e.v);
    directed.emplace_back(e.v, e.u);
  }
  std::sort(directed.begin(), directed.end());
  directed.erase(std::unique(directed.begin(), directed.end()), directed.end());

  Graph g;
  g.num_nodes_ = num_nodes;
  g.offsets_.assign(num_nodes + 1, 0);
  g.col_.reserve(directed.size());
  for (const auto& [u, v] : directed) {
    ++g.offsets_[u + 1];
    g.col_.push_back(v);
  }
  std::partial_sum(g.offsets_.begin(), g.offsets_.end(), g.offsets_.begin());
  return g;
}

std::size_t Graph::max_degree() const {
  std::size_t best = 0;
  for (std::size_t i = 0; i < num_nodes_; ++i) best = std::max(best, degree(i));
  return best;
}

CsrMatrix::CsrMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
                     std::vector<std::uint32_t> col_idx, std::vector<double> vals)
    : rows_(rows), cols_(cols), row_ptr_(std::move(row_ptr)), col_idx_(std::move(col_idx)), vals_(std::move(vals)) {
  if (row_ptr_.size() != rows_ + 1 || row_ptr_.front() != 0 || row_ptr_.back() != col_idx_.size() ||
      col_idx_.size() != vals_.size()) {
    throw GraphError("CsrMatrix: inconsistent structure");
  }
  for (std::size_t i = 0; i < rows_; ++i) {
    if (row_ptr_[i] > row_ptr_[i + 1]) throw GraphError("CsrMatrix: row_ptr not monotone");
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
      if (col_idx_[k] >= cols_) throw GraphError("CsrMatrix: column index out of range");
      if (k > row_ptr_[i] && col_idx_[k] <= col_idx_[k - 1]) throw GraphError("CsrMatrix: columns not sorted");
    }
  }
}

CsrMatrix CsrMatrix::from_dense(const Tensor& dense) {
  std::vector<std::size_t> ptr{0};
  std::vector<std::uint32_t> idx;
  std::vector<double> vals;
  for (std::size_t i = 0; i < dense.rows(); ++i) {
    for (std::size_t j = 0; j < dense.cols(); ++j) {
      if (dense(i, j) != 0.0) {
        idx.push_back(static_cast<std::uint32_t>(j));
        vals.push_back(dense(i, j));
      }
    }
    ptr.push_back(idx.size());
  }
  return CsrMatrix(dense.rows(), dense.cols(), std::move(ptr), std::move(idx), std::move(vals));
}

double CsrMatrix::at(std::size_t i, std::size_t j) const {
  const auto first = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i]);
  const auto last = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i + 1]);
  const auto it = std::lower_bound(first, last, j);
  if (it == last || *it != j) return 0.0;
  return vals_[static_cast<std::size_t>(it - col_idx_.begin())];
}

Tensor CsrMatrix::to_dense() const {
  Tensor out(rows_, cols_);
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) out(i, col_idx_[k]) = vals_[k];
  }
  return out;
}

CsrMatrix CsrMatrix::scale_rows(std::span<const double> factor) const {
  if (factor.size() != rows_) throw ShapeError("CsrMatrix::scale_rows: factor length mismatch");
  std::vector<double> vals = vals_;
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) vals[k] *= factor[i];
  }
  return CsrMatrix(rows_, cols_, row_ptr_, col_idx_, std::move(vals));
}

CsrMatrix CsrMatrix::select_rows(std::span<const std::size_t> rows) const {
  std::vector<std::size_t> ptr{0};
  std::vector<std::uint32_t> idx;
  std::vector<double> vals;
  for (std::size_t r : rows) {
    if (r >= rows_) throw ShapeError("CsrMatrix::select_rows: row out of range");
    idx.insert(idx.end(), col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r]),
               col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r + 1]));
    vals.insert(vals.end(), vals_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r]),
                vals_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r + 1]));
    ptr.push_back(idx.size());
  }
  return CsrMatrix(rows.size(), cols_, std::move(ptr), std::move(idx), std::move(vals));
}

SparseAdj build_normalized(const Graph& graph) {
  const std::size_t n = graph.num_nodes();
  std::vector<double> aug_degree(n);
  for (std::size_t i = 0; i < n; ++i) aug_degree[i] = static_cast<double>(graph.degree(i) + 1);

  std::vector<std::size_t> ptr{0};
  std::vector<std::uint32_t> idx;
  std::vector<double> vals;
  idx.reserve(2 * graph.num_edges() + n);
  vals.reserve(2 * graph.num_edges() + n);
  for (std::size_t i = 0; i < n; ++i) {
    bool self_done = false;
    auto push = [&](std::size_t j) {
      idx.push_back(static_cast<std::uint32_t>(j));
      // Product of the two degrees is commutative, so (i, j) and (j, i) are
      // bitwise identical.
      vals.push_back(1.0 / std::sqrt(aug_degree[i] * aug_degree[j]));
    };
    for (std::uint32_t j : graph.neighbors(i)) {
      if (!self_done && j > i) {
        push(i);
        self_done = true;
      }
      push(j);
    }
    if (!self_done) push(i);
    ptr.push_back(idx.size());
  }
  return SparseAdj(n, n, std::move(ptr), std::move(idx), std::move(vals));
}

Tensor spmm(const CsrMatrix& p, const Tensor& h) {
  if (h.rows() != p.cols()) {
    throw ShapeError("spmm: operator is " + std::to_string(p.rows()) + "x" + std::to_string(p.cols()) +
                     ", dense input is " + shape_string(h));
  }
  const std::size_t d = h.cols();
  Tensor out(p.rows(), d);
  const auto& ptr = p.row_ptr();
  const auto& idx = p.col_idx();
  const auto& vals = p.vals();
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double* dst = out.row(i).data();
    for (std::size_t k = ptr[i]; k < ptr[i + 1]; ++k) {
      const double w = vals[k];
      const double* src = h.row(idx[k]).data();
      for (std::size_t j = 0; j < d; ++j) dst[j] += w * src[j];
    }
  }
  return out;
}

Var spmm(const CsrMatrix& p, Var h) {
  Tensor out = spmm(p, h.value());
  return h.tape->record("spmm", std::move(out), {h},
                        [pp = &p](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
                          // dH = P^T G, accumulated row by row in a fixed order.
                          Tensor& dh = *gi[0];
                          const std::size_t d = g.cols();
                          const auto& ptr = pp->row_ptr();
                          const auto& idx = pp->col_idx();
                          const auto& vals = pp->vals();
                          for (std::size_t i = 0; i < pp->rows(); ++i) {
                            const double* src = g.row(i).data();
                            for (std::size_t k = ptr[i]; k < ptr[i + 1]; ++k) {
                              const double w = vals[k];
                              double* dst = dh.row(idx[k]).data();
                              for (std::size_t j = 0; j < d; ++j) dst[j] += w * src[j];
                            }
                          }
                        });
}

Var sparse_matmul(std::shared_ptr<const CsrMatrix> x, Var w) {
  if (!x) throw std::invalid_argument("sparse_matmul: null operand");
  Tensor out = spmm(*x, w.value());
  return w.tape->record("sparse_matmul", std::move(out), {w},
                        [x](const Tensor&, const Tensor& g, std::span<Tensor* const> gi) {
                          // dW = X^T G
                          Tensor& dw = *gi[0];
                          const std::size_t m = g.cols();
                          const auto& ptr = x->row_ptr();
                          const auto& idx = x->col_idx();
                          const auto& vals = x->vals();
                          for (std::size_t i = 0; i < x->rows(); ++i) {
                            const double* src = g.row(i).data();
                            for (std::size_t k = ptr[i]; k < ptr[i + 1]; ++k) {
                              const double v = vals[k];
                              double* dst = dw.row(idx[k]).data();
                              for (std::size_t j = 0; j < m; ++j) dst[j] += v * src[j];
                            }
                          }
                        });
}

Tensor power_propagate(const SparseAdj& p, const Tensor& h0, std::size_t ell) {
  Tensor h = h0;
  for (std::size_t k = 0; k < ell; ++k) h = spmm(p, h);
  return h;
}

double smoothness_mad(const Tensor& h, const SmoothnessOptions& options) {
  if (h.rows() < 2) throw std::invalid_argument("smoothness_mad: need at least two rows");
  std::vector<std::size_t> live;
  std::vector<double> norms(h.rows(), 0.0);
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double ss = 0.0;
    for (double v : h.row(i)) ss += v * v;
    norms[i] = std::sqrt(ss);
    if (norms[i] > 0.0) live.push_back(i);
  }
  if (live.empty()) throw std::invalid_argument("smoothness_mad: all rows are zero");
  if (live.size() == 1) return 0.0;

  auto distance = [&](std::size_t a, std::size_t b) {
    double dot = 0.0;
    const auto ra = h.row(a);
    const auto rb = h.row(b);
    for (std::size_t j = 0; j < ra.size(); ++j) dot += ra[j] * rb[j];
    const double c = std::clamp(dot / (norms[a] * norms[b]), -1.0, 1.0);
    return 1.0 - c;
  };

  double total = 0.0;
  std::size_t count = 0;
  if (live.size() <= options.exact_limit) {
    for (std::size_t a = 0; a < live.size(); ++a) {
      for (std::size_t b = a + 1; b < live.size(); ++b) {
        total += distance(live[a], live[b]);
        ++count;
      }
    }
  } else {
    Rng rng(options.seed);
    while (count < options.sampled_pairs) {
      const auto a = static_cast<std::size_t>(rng.below(live.size()));
      const auto b = static_cast<std::size_t>(rng.below(live.size()));
      if (a == b) continue;
      total += distance(live[a], live[b]);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace drgcn
