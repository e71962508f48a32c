#pragma once

#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "neuromatch/error.hpp"

namespace neuromatch::ad {

// Handle into a Tape; valid only for the tape that produced it.
struct Var {
  int id = -1;
};

// Reverse-mode tape over dense double matrices. Build a graph per example,
// call backward() on a scalar root, read gradients off the leaves, discard.
class Tape {
 public:
  Var leaf(Eigen::MatrixXd value, bool requires_grad);
  Var constant(Eigen::MatrixXd value) { return leaf(std::move(value), false); }

  const Eigen::MatrixXd& value(Var v) const { return node(v).value; }
  const Eigen::MatrixXd& grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 (root must be 1x1) and sweeps the tape.
  void backward(Var root);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var matmul(Var a, Var b);
  Var scale(Var a, double s);
  Var bias_add_cols(Var a, Var bias);  // bias m x 1, added to every column
  Var bias_add_rows(Var a, Var bias);  // bias 1 x n, added to every row
  Var abs(Var a);
  Var exp_(Var a);
  Var log_(Var a);
  Var sum(Var a);        // -> 1x1
  Var mean_rows(Var a);  // n x f -> 1 x f
  Var leaky_relu(Var a, double slope);
  Var sigmoid(Var a);
  Var tanh_(Var a);
  Var clamp(Var a, double lo, double hi);  // zero gradient where clipped
  Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
  Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var transpose(Var a);
  Var softmax_rows(Var a);
  // Per-row standardization followed by y = gamma .* xhat + beta;
  // gamma/beta are 1 x f rows.
  Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
  // x: rows x T. Column j of the result stacks the zero-padded patch
  // x(:, j*stride - pad_left .. +kernel) flattened row-major: out row
  // r*kernel + k. Shape (rows*kernel) x out_cols.
  Var im2col_time(Var x, int kernel, int stride, int pad_left, Eigen::Index out_cols);
  // x: f x T -> f x windows.size(); column w = mean of columns [start, end).
  Var mean_pool_cols(Var x, const std::vector<std::pair<Eigen::Index, Eigen::Index>>& windows);

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    std::function<void(Tape&)> backward;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  Var make(Eigen::MatrixXd value, const std::vector<Var>& parents);
  bool needs(Var v) const { return node(v).requires_grad; }
  Eigen::MatrixXd& grad_ref(Var v) { return node(v).grad; }

  std::vector<Node> nodes_;
};

}  // namespace neuromatch::ad
