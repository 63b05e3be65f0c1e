#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>

#include <Eigen/Dense>

namespace wkd::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// A named trainable tensor and its gradient (same shape).
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string name, Matrix value);

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records matrix-valued operations in execution order and replays them in
/// reverse to accumulate gradients. One tape per forward pass.
class Tape {
 public:
  /// Receives the gradient of the loss w.r.t. the node's output and
  /// accumulates into the inputs via Tape::grad().
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Like constant() but references `value`, which must outlive the tape.
  Var constant_ref(const Matrix& value);
  /// Trainable leaf. Registering the same parameter twice returns the same node.
  Var param(Parameter& p);
  /// Read-only leaf over a parameter's storage; never receives a gradient.
  Var frozen(const Parameter& p);

  /// Low-level op construction: pushes a node with the given output. When
  /// `needs_grad` is false the backward function is dropped.
  Var push(Matrix value, bool needs_grad, BackwardFn backward);

  bool needs_grad(Var v) const { return node(v).needs_grad; }
  /// Gradient accumulator for `v`, zero-initialised on first access.
  Matrix& grad(Var v);

  /// Reverse pass from a 1x1 loss. Every parameter registered on this tape
  /// ends up with exactly d(loss)/d(param); parameters the loss does not
  /// depend on get zero. Throws NumericError if the loss is not finite.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const Matrix& value(std::size_t id) const;

 private:
  struct Node {
    Matrix own;
    const Matrix* ext = nullptr;
    Matrix grad;
    bool has_grad = false;
    bool needs_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;

    const Matrix& value() const { return ext ? *ext : own; }
  };

  Node& node(Var v) { return nodes_[v.id_]; }
  const Node& node(Var v) const { return nodes_[v.id_]; }

  std::deque<Node> nodes_;
};

inline Var bind(Tape& tape, Parameter& p) { return tape.param(p); }
inline Var bind(Tape& tape, const Parameter& p) { return tape.frozen(p); }

// Operations. Shapes are checked; mismatches throw ShapeError.

/// x * W^T + b, with W stored out x in and b 1 x out. `b` may be invalid.
Var linear(Var x, Var weight, Var bias);
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var softplus(Var a);
Var concat_cols(Var a, Var b);
/// Elementwise product with a constant matrix (dropout masks, counts).
Var mul_const(Var a, const Matrix& m);
/// y_ij = a_ij * mul_j + add_j for constant row vectors.
Var col_affine(Var a, const RowVector& mul, const RowVector& add);
/// Broadcast a 1 x n row over every row of a.
Var mul_row(Var a, Var row);
Var add_row(Var a, Var row);
/// Per-column standardisation with batch statistics (biased variance).
Var batch_standardize(Var a, double eps);
/// Row-wise softmax(a / t).
Var softmax(Var a, double temperature = 1.0);
/// Row-wise log softmax(a / t).
Var log_softmax(Var a, double temperature = 1.0);
/// Sum of all entries, as a 1x1 node.
Var sum(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

/// Non-differentiable row softmax with max subtraction; shared by the ops
/// above and by plain evaluation code.
Matrix softmax_rows(const Matrix& logits, double temperature = 1.0);
Matrix log_softmax_rows(const Matrix& logits, double temperature = 1.0);

}  // namespace wkd::nn
