#include "diffsteer/tape.hpp"

#include <utility>

namespace diffsteer::tape {

namespace {

inline Matrix sigmoid(const Matrix& x) {
  return ((-x.array()).exp() + 1.0).inverse().matrix();
}

}  // namespace

Value Tape::push(Matrix v, bool requires_grad, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = grad_enabled_ && requires_grad;
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::grad_buf(int idx) {
  Node& n = nodes_[idx];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Value Tape::leaf(Matrix v, bool requires_grad) {
  return push(std::move(v), requires_grad, {});
}

Value Tape::matmul(Value a, Value b) {
  const Matrix& A = nodes_[a.idx].value;
  const Matrix& B = nodes_[b.idx].value;
  require(A.cols() == B.rows(), "matmul: inner dimensions differ");
  Value out;
  out = push(A * B, nodes_[a.idx].requires_grad || nodes_[b.idx].requires_grad,
             [a, b, out_idx = static_cast<int>(nodes_.size())](Tape& t) {
               const Matrix& g = t.nodes_[out_idx].grad;
               if (t.nodes_[a.idx].requires_grad)
                 t.grad_buf(a.idx).noalias() += g * t.nodes_[b.idx].value.transpose();
               if (t.nodes_[b.idx].requires_grad)
                 t.grad_buf(b.idx).noalias() += t.nodes_[a.idx].value.transpose() * g;
             });
  return out;
}

Value Tape::add(Value a, Value b) {
  const Matrix& A = nodes_[a.idx].value;
  const Matrix& B = nodes_[b.idx].value;
  require(A.rows() == B.rows() && A.cols() == B.cols(), "add: shape mismatch");
  return push(A + B, nodes_[a.idx].requires_grad || nodes_[b.idx].requires_grad,
              [a, b, out_idx = static_cast<int>(nodes_.size())](Tape& t) {
                const Matrix& g = t.nodes_[out_idx].grad;
                if (t.nodes_[a.idx].requires_grad) t.grad_buf(a.idx) += g;
                if (t.nodes_[b.idx].requires_grad) t.grad_buf(b.idx) += g;
              });
}

Value Tape::add_rowvec(Value a, Value b) {
  const Matrix& A = nodes_[a.idx].value;
  const Matrix& B = nodes_[b.idx].value;
  require(B.rows() == 1 && A.cols() == B.cols(), "add_rowvec: need 1 x cols(a)");
  return push(A.rowwise() + B.row(0),
              nodes_[a.idx].requires_grad || nodes_[b.idx].requires_grad,
              [a, b, out_idx = static_cast<int>(nodes_.size())](Tape& t) {
                const Matrix& g = t.nodes_[out_idx].grad;
                if (t.nodes_[a.idx].requires_grad) t.grad_buf(a.idx) += g;
                if (t.nodes_[b.idx].requires_grad)
                  t.grad_buf(b.idx) += g.colwise().sum();
              });
}

Value Tape::scale_shift(Value h, Value s, Value c) {
  const Matrix& H = nodes_[h.idx].value;
  const Matrix& S = nodes_[s.idx].value;
  const Matrix& C = nodes_[c.idx].value;
  require(H.rows() == S.rows() && H.cols() == S.cols() && H.rows() == C.rows() &&
              H.cols() == C.cols(),
          "scale_shift: shape mismatch");
  Matrix out = (H.array() * (S.array() + 1.0) + C.array()).matrix();
  return push(std::move(out),
              nodes_[h.idx].requires_grad || nodes_[s.idx].requires_grad ||
                  nodes_[c.idx].requires_grad,
              [h, s, c, out_idx = static_cast<int>(nodes_.size())](Tape& t) {
                const Matrix& g = t.nodes_[out_idx].grad;
                if (t.nodes_[h.idx].requires_grad)
                  t.grad_buf(h.idx).array() +=
                      g.array() * (t.nodes_[s.idx].value.array() + 1.0);
                if (t.nodes_[s.idx].requires_grad)
                  t.grad_buf(s.idx).array() += g.array() * t.nodes_[h.idx].value.array();
                if (t.nodes_[c.idx].requires_grad) t.grad_buf(c.idx) += g;
              });
}

Value Tape::silu(Value a) {
  const Matrix& X = nodes_[a.idx].value;
  Matrix sig = sigmoid(X);
  return push((X.array() * sig.array()).matrix(), nodes_[a.idx].requires_grad,
              [a, out_idx = static_cast<int>(nodes_.size())](Tape& t) {
                const Matrix& g = t.nodes_[out_idx].grad;
                const Matrix& x = t.nodes_[a.idx].value;
                Matrix sg = sigmoid(x);
                // d/dx x*sigma(x) = sigma(x) * (1 + x * (1 - sigma(x)))
                t.grad_buf(a.idx).array() +=
                    g.array() * sg.array() * (1.0 + x.array() * (1.0 - sg.array()));
              });
}

Value Tape::concat_cols(Value a, Value b) {
  const Matrix& A = nodes_[a.idx].value;
  const Matrix& B = nodes_[b.idx].value;
  require(A.rows() == B.rows(), "concat_cols: row counts differ");
  Matrix out(A.rows(), A.cols() + B.cols());
  out << A, B;
  const int wa = static_cast<int>(A.cols());
  return push(std::move(out), nodes_[a.idx].requires_grad || nodes_[b.idx].requires_grad,
              [a, b, wa, out_idx = static_cast<int>(nodes_.size())](Tape& t) {
                const Matrix& g = t.nodes_[out_idx].grad;
                if (t.nodes_[a.idx].requires_grad)
                  t.grad_buf(a.idx) += g.leftCols(wa);
                if (t.nodes_[b.idx].requires_grad)
                  t.grad_buf(b.idx) += g.rightCols(g.cols() - wa);
              });
}

Value Tape::slice_cols(Value a, int first, int width) {
  const Matrix& A = nodes_[a.idx].value;
  require(first >= 0 && width >= 0 && first + width <= A.cols(),
          "slice_cols: range out of bounds");
  return push(A.middleCols(first, width), nodes_[a.idx].requires_grad,
              [a, first, width, out_idx = static_cast<int>(nodes_.size())](Tape& t) {
                t.grad_buf(a.idx).middleCols(first, width) += t.nodes_[out_idx].grad;
              });
}

Value Tape::add_scaled(Value a, Value b, double w) {
  const Matrix& A = nodes_[a.idx].value;
  const Matrix& B = nodes_[b.idx].value;
  require(A.rows() == B.rows() && A.cols() == B.cols(), "add_scaled: shape mismatch");
  return push(A + w * B, nodes_[a.idx].requires_grad || nodes_[b.idx].requires_grad,
              [a, b, w, out_idx = static_cast<int>(nodes_.size())](Tape& t) {
                const Matrix& g = t.nodes_[out_idx].grad;
                if (t.nodes_[a.idx].requires_grad) t.grad_buf(a.idx) += g;
                if (t.nodes_[b.idx].requires_grad) t.grad_buf(b.idx) += w * g;
              });
}

Value Tape::sq_error_sum_mean(Value a, const Matrix& target) {
  const Matrix& A = nodes_[a.idx].value;
  require(A.rows() == target.rows() && A.cols() == target.cols(),
          "sq_error_sum_mean: shape mismatch");
  const double n = static_cast<double>(A.rows());
  Matrix out(1, 1);
  out(0, 0) = (A - target).array().square().sum() / n;
  return push(std::move(out), nodes_[a.idx].requires_grad,
              [a, target, n, out_idx = static_cast<int>(nodes_.size())](Tape& t) {
                const double g = t.nodes_[out_idx].grad(0, 0);
                t.grad_buf(a.idx) +=
                    (2.0 * g / n) * (t.nodes_[a.idx].value - target);
              });
}

void Tape::backward(Value root) {
  require(grad_enabled_, "backward: tape was built without gradients");
  const Node& r = nodes_[root.idx];
  require(r.value.rows() == 1 && r.value.cols() == 1, "backward: root must be scalar");
  require(r.requires_grad, "backward: root does not require grad");
  grad_buf(root.idx)(0, 0) = 1.0;
  for (int i = root.idx; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.back && n.grad.size() != 0) n.back(*this);
  }
}

}  // namespace diffsteer::tape
