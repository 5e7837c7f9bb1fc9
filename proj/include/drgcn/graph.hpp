#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "drgcn/autodiff.hpp"
#include "drgcn/tensor.hpp"

namespace drgcn {

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Edge {
  std::uint32_t u = 0;
  std::uint32_t v = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Undirected simple graph. Input edges are symmetrized and deduplicated;
/// self-loops in the input are dropped (the normalized operator adds exactly
/// one per node).
class Graph {
 public:
  Graph() = default;
  static Graph from_edges(std::size_t num_nodes, std::span<const Edge> edges);

  std::size_t num_nodes() const { return num_nodes_; }
  /// Unique undirected edges, self-loops excluded.
  std::size_t num_edges() const { return col_.size() / 2; }
  std::span<const std::uint32_t> neighbors(std::size_t i) const {
    return {col_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::size_t degree(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }
  std::size_t max_degree() const;

 private:
  std::size_t num_nodes_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::uint32_t> col_;
};

/// Compressed sparse rows with sorted column indices. Used both for the
/// square normalized adjacency and for rectangular operators (sampled blocks,
/// sparse feature matrices).
class CsrMatrix {
 public:
  CsrMatrix() = default;
  CsrMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr, std::vector<std::uint32_t> col_idx,
            std::vector<double> vals);

  static CsrMatrix from_dense(const Tensor& dense);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return col_idx_.size(); }
  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::uint32_t>& col_idx() const { return col_idx_; }
  const std::vector<double>& vals() const { return vals_; }

  /// Entry (i, j), zero when not stored.
  double at(std::size_t i, std::size_t j) const;
  Tensor to_dense() const;
  /// Row i multiplied by factor[i].
  CsrMatrix scale_rows(std::span<const double> factor) const;
  /// Rows selected in the given order.
  CsrMatrix select_rows(std::span<const std::size_t> rows) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::uint32_t> col_idx_;
  std::vector<double> vals_;
};

using SparseAdj = CsrMatrix;

/// D^-1/2 (A + I) D^-1/2 with D the self-loop-augmented degree.
SparseAdj build_normalized(const Graph& graph);

/// Sparse-dense product; differentiable with respect to h only.
Var spmm(const CsrMatrix& p, Var h);
Tensor spmm(const CsrMatrix& p, const Tensor& h);

/// x * w for a constant sparse x (e.g. bag-of-words features); differentiable
/// with respect to w only. The tape keeps x alive until backward.
Var sparse_matmul(std::shared_ptr<const CsrMatrix> x, Var w);

/// ell applications of p to h0.
Tensor power_propagate(const SparseAdj& p, const Tensor& h0, std::size_t ell);

struct SmoothnessOptions {
  /// Above this many nonzero rows, pairs are sampled instead of enumerated.
  std::size_t exact_limit = 2000;
  std::size_t sampled_pairs = 200000;
  std::uint64_t seed = 0;
};

/// Mean cosine distance 1 - cos(h_i, h_j) over pairs of nonzero rows; in [0, 2].
double smoothness_mad(const Tensor& h, const SmoothnessOptions& options = {});

}  // namespace drgcn
