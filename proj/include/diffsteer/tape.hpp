#pragma once

#include "diffsteer/common.hpp"

#include <functional>
#include <vector>

namespace diffsteer::tape {

// Minimal reverse-mode autodiff over Eigen matrices. A Tape owns the nodes of
// one forward computation; backward() walks the nodes in reverse. Handles are
// indices, so holding a Value across later ops stays valid.
//
// Grad bookkeeping is skipped entirely for tapes constructed with
// grad_enabled=false (inference passes share the same forward code).

struct Value {
  int idx = -1;
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Value leaf(Matrix v, bool requires_grad = false);

  // c = a * b
  Value matmul(Value a, Value b);
  // same-shape elementwise sum
  Value add(Value a, Value b);
  // a (n x q) plus row vector b (1 x q) broadcast over rows
  Value add_rowvec(Value a, Value b);
  // h .* (1 + s) + c, all n x q
  Value scale_shift(Value h, Value s, Value c);
  // x * sigmoid(x)
  Value silu(Value a);
  // [a | b] along columns
  Value concat_cols(Value a, Value b);
  Value slice_cols(Value a, int first, int width);
  // a + w * b
  Value add_scaled(Value a, Value b, double w);
  // mean over rows of the squared row-sums of (a - target); 1x1 result
  Value sq_error_sum_mean(Value a, const Matrix& target);

  const Matrix& value(Value v) const { return nodes_[v.idx].value; }
  const Matrix& grad(Value v) const { return nodes_[v.idx].grad; }
  bool requires_grad(Value v) const { return nodes_[v.idx].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // root must be 1x1; seeds d(root)=1 and accumulates into every
  // requires_grad node reachable from it.
  void backward(Value root);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Tape&)> back;  // empty for leaves / no-grad tapes
  };

  Value push(Matrix v, bool requires_grad, std::function<void(Tape&)> back);
  Matrix& grad_buf(int idx);

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

}  // namespace diffsteer::tape
