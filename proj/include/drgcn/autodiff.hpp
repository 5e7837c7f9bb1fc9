#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "drgcn/rng.hpp"
#include "drgcn/tensor.hpp"

namespace drgcn {

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string op) : std::runtime_error("non-finite value produced by op '" + op + "'"), op_(std::move(op)) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
};

struct TapeOptions {
  /// Reject NaN/Inf right after the op that produced it.
  bool check_finite = true;
};

/// Single-use reverse-mode tape. Nodes are appended in evaluation order, so
/// the node list is already a topological order and backward() is one
/// reverse sweep that visits each node exactly once.
class Tape {
 public:
  /// out is the op's own value; grad_in[k] is null when input k does not
  /// require a gradient. Rules accumulate into grad_in.
  using BackwardFn =
      std::function<void(const Tensor& out, const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

  explicit Tape(TapeOptions options = {}) : options_(options) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op result. The backward rule is dropped when no input needs a
  /// gradient.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  /// Gradient of the last backward() target; zeros for unreachable leaves.
  const Tensor& grad(Var v) const;

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }
  const TapeOptions& options() const { return options_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
    std::string_view op;
  };

  void check(std::string_view op, const Tensor& t) const;

  TapeOptions options_;
  std::deque<Node> nodes_;
  bool consumed_ = false;
};

// Differentiable ops. All operands must live on the same tape.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
/// s * a + shift, elementwise.
Var affine(Var a, double s, double shift);
Var square(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
/// x[n x m] + bias[1 x m] broadcast over rows.
Var add_row_bias(Var x, Var bias);
/// x[n x m] scaled row-wise by c[n x 1].
Var scale_rows(Var x, Var c);
/// (1 - t) * a + t * b with t[n x 1] broadcast over columns, evaluated as
/// (1 - t_i) * a_ij + t_i * b_ij in exactly that order.
Var blend_rows(Var a, Var b, Var t);
Var rows_softmax(Var x);
Var rows_log_softmax(Var x);
/// Each nonzero row scaled to unit L2 norm; all-zero rows stay zero.
Var l2_normalize_rows(Var x);
Var concat_cols(Var a, Var b);
/// Row gather; backward scatter-adds. Indices may repeat.
Var gather_rows(Var x, std::span<const std::size_t> index);
/// First k rows.
Var head_rows(Var x, std::size_t k);
/// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, Rng& rng);
Var sum(Var x);
Var mean(Var x);

}  // namespace drgcn
