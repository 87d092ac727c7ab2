#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace paths {

// Reverse-mode tape over matrix-valued nodes. Values are double precision;
// a Var is an index into the tape.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

class Tape {
 public:
  Var leaf(const Eigen::MatrixXd& value);
  Var constant(const Eigen::MatrixXd& value) { return leaf(value); }

  const Eigen::MatrixXd& value(Var v) const { return nodes_[v.idx].val; }
  const Eigen::MatrixXd& grad(Var v) const { return nodes_[v.idx].grad; }

  // Seeds d(root)/d(root) = 1 (root must be 1x1) and runs the tape backward.
  void backward(Var root);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var cmul(Var a, Var b);
  Var matmul(Var a, Var b);
  Var scale(Var a, double k);
  Var add_scalar(Var a, double k);

  Var tanh_(Var a);
  Var sigmoid_(Var a);
  Var gelu(Var a);
  Var log_(Var a);
  Var clamp(Var a, double lo, double hi);

  Var softmax_rows(Var a);
  Var layer_norm_rows(Var a, double eps = 1e-5);

  Var transpose(Var a);
  Var concat_rows(Var a, Var b);
  Var concat_cols(Var a, Var b);
  Var slice_rows(Var a, int r0, int count);
  Var slice_cols(Var a, int c0, int count);

  // y = m + replicate(row) over every row of m.
  Var row_broadcast_add(Var m, Var row);
  // y.row(i) = m.row(i) .* row
  Var row_broadcast_mul(Var m, Var row);
  // y.row(i) = m.row(i) * s(i,0)
  Var scale_rows(Var m, Var s);
  Var mean_rows(Var m);  // 1 x cols
  Var sum_all(Var m);    // 1 x 1
  Var gather_rows(Var m, std::vector<int> indices);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Eigen::MatrixXd val;
    Eigen::MatrixXd grad;
    std::function<void(Tape&, const Eigen::MatrixXd&)> back;  // null for leaves
  };

  Var push(Eigen::MatrixXd val,
           std::function<void(Tape&, const Eigen::MatrixXd&)> back);
  Eigen::MatrixXd& grad_ref(Var v) { return nodes_[v.idx].grad; }

  std::vector<Node> nodes_;
};

}  // namespace paths
