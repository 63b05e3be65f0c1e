#include "wkd/nn/tape.hpp"

#include <cmath>

#include "wkd/error.hpp"

namespace wkd::nn {

namespace {

std::string shape(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_same_shape(const char* op, Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape(a.value()) + " vs " + shape(b.value()));
  }
}

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ShapeError("operands recorded on different tapes");
}

}  // namespace

Parameter::Parameter(std::string name, Matrix value)
    : name(std::move(name)), value(std::move(value)) {
  zero_grad();
}

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw ShapeError("scalar() on a " + shape(v) + " node");
  return v(0, 0);
}

const Matrix& Tape::value(std::size_t id) const { return nodes_[id].value(); }

Var Tape::constant(Matrix value) {
  Node& n = nodes_.emplace_back();
  n.own = std::move(value);
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant_ref(const Matrix& value) {
  Node& n = nodes_.emplace_back();
  n.ext = &value;
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].param == &p) return Var(this, i);
  }
  Node& n = nodes_.emplace_back();
  n.ext = &p.value;
  n.param = &p;
  n.needs_grad = true;
  return Var(this, nodes_.size() - 1);
}

Var Tape::frozen(const Parameter& p) { return constant_ref(p.value); }

Var Tape::push(Matrix value, bool needs_grad, BackwardFn backward) {
  Node& n = nodes_.emplace_back();
  n.own = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad(Var v) {
  Node& n = node(v);
  if (!n.has_grad) {
    n.grad.setZero(n.value().rows(), n.value().cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ShapeError("backward: loss belongs to another tape");
  const double l = loss.scalar();
  if (!std::isfinite(l)) throw NumericError("backward: loss is not finite (" + std::to_string(l) + ")");

  for (auto& n : nodes_) {
    n.has_grad = false;
    if (n.param) n.param->zero_grad();
  }
  grad(loss)(0, 0) = 1.0;

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.needs_grad) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) n.param->grad += n.grad;
  }
}

Var linear(Var x, Var w, Var b) {
  if (x.cols() != w.cols()) {
    throw ShapeError("linear: input width " + std::to_string(x.cols()) + " != layer input " +
                     std::to_string(w.cols()));
  }
  Tape& t = x.tape();
  require_same_tape(x, w);
  Matrix out = x.value() * w.value().transpose();
  if (b.valid()) {
    require_same_tape(x, b);
    if (b.rows() != 1 || b.cols() != w.rows()) throw ShapeError("linear: bias must be 1x" + std::to_string(w.rows()));
    out.rowwise() += b.value().row(0);
  }
  const bool ng = t.needs_grad(x) || t.needs_grad(w) || (b.valid() && t.needs_grad(b));
  return t.push(std::move(out), ng, [x, w, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(x)) t.grad(x).noalias() += g * w.value();
    if (t.needs_grad(w)) t.grad(w).noalias() += g.transpose() * x.value();
    if (b.valid() && t.needs_grad(b)) t.grad(b) += g.colwise().sum();
  });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + shape(a.value()) + " * " + shape(b.value()));
  Tape& t = a.tape();
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a).noalias() += g * b.value().transpose();
    if (t.needs_grad(b)) t.grad(b).noalias() += a.value().transpose() * g;
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a, b);
  Tape& t = a.tape();
  return t.push(a.value() + b.value(), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(b)) t.grad(b) += g;
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("sub", a, b);
  Tape& t = a.tape();
  return t.push(a.value() - b.value(), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(b)) t.grad(b) -= g;
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a, b);
  Tape& t = a.tape();
  return t.push(a.value().cwiseProduct(b.value()), t.needs_grad(a) || t.needs_grad(b),
                [a, b](Tape& t, const Matrix& g) {
                  if (t.needs_grad(a)) t.grad(a) += g.cwiseProduct(b.value());
                  if (t.needs_grad(b)) t.grad(b) += g.cwiseProduct(a.value());
                });
}

Var scale(Var a, double s) {
  Tape& t = a.tape();
  return t.push(a.value() * s, t.needs_grad(a), [a, s](Tape& t, const Matrix& g) { t.grad(a) += g * s; });
}

Var add_scalar(Var a, double s) {
  Tape& t = a.tape();
  return t.push(a.value().array() + s, t.needs_grad(a), [a](Tape& t, const Matrix& g) { t.grad(a) += g; });
}

Var exp(Var a) {
  Tape& t = a.tape();
  Matrix out = a.value().array().exp();
  const std::size_t out_id = t.size();
  return t.push(std::move(out), t.needs_grad(a), [a, out_id](Tape& t, const Matrix& g) {
    t.grad(a) += g.cwiseProduct(t.value(out_id));
  });
}

Var log(Var a) {
  Tape& t = a.tape();
  return t.push(a.value().array().log(), t.needs_grad(a), [a](Tape& t, const Matrix& g) {
    t.grad(a).array() += g.array() / a.value().array();
  });
}

Var square(Var a) {
  Tape& t = a.tape();
  return t.push(a.value().array().square(), t.needs_grad(a), [a](Tape& t, const Matrix& g) {
    t.grad(a).array() += 2.0 * g.array() * a.value().array();
  });
}

Var softplus(Var a) {
  Tape& t = a.tape();
  const auto& x = a.value();
  Matrix out = x.unaryExpr([](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& t, const Matrix& g) {
    Matrix sig = a.value().unaryExpr([](double v) {
      return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    });
    t.grad(a) += g.cwiseProduct(sig);
  });
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b);
  if (a.rows() != b.rows()) throw ShapeError("concat_cols: row mismatch " + shape(a.value()) + " vs " + shape(b.value()));
  Tape& t = a.tape();
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a.value();
  out.rightCols(b.cols()) = b.value();
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a) += g.leftCols(a.cols());
    if (t.needs_grad(b)) t.grad(b) += g.rightCols(b.cols());
  });
}

Var mul_const(Var a, const Matrix& m) {
  if (a.rows() != m.rows() || a.cols() != m.cols()) {
    throw ShapeError("mul_const: shape mismatch " + shape(a.value()) + " vs " + shape(m));
  }
  Tape& t = a.tape();
  // The constant is copied onto the tape so callers may pass temporaries.
  Var c = t.constant(m);
  return mul(a, c);
}

Var col_affine(Var a, const RowVector& mul, const RowVector& add) {
  if (mul.size() != a.cols() || add.size() != a.cols()) throw ShapeError("col_affine: width mismatch");
  Tape& t = a.tape();
  Matrix out = (a.value().array().rowwise() * mul.array()).rowwise() + add.array();
  return t.push(std::move(out), t.needs_grad(a), [a, mul](Tape& t, const Matrix& g) {
    t.grad(a).array() += g.array().rowwise() * mul.array();
  });
}

Var mul_row(Var a, Var row) {
  require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("mul_row: row must be 1x" + std::to_string(a.cols()));
  Tape& t = a.tape();
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(row), [a, row](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a).array() += g.array().rowwise() * row.value().row(0).array();
    if (t.needs_grad(row)) t.grad(row) += g.cwiseProduct(a.value()).colwise().sum();
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: row must be 1x" + std::to_string(a.cols()));
  Tape& t = a.tape();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(row), [a, row](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(row)) t.grad(row) += g.colwise().sum();
  });
}

Var batch_standardize(Var a, double eps) {
  const auto n = a.rows();
  if (n < 2) throw ShapeError("batch_standardize: batch statistics need at least 2 rows");
  Tape& t = a.tape();
  const auto& x = a.value();
  const RowVector mean = x.colwise().mean();
  Matrix centered = x.rowwise() - mean;
  const RowVector var = centered.array().square().colwise().mean();
  const RowVector inv_std = (var.array() + eps).rsqrt();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  const std::size_t out_id = t.size();
  return t.push(std::move(xhat), t.needs_grad(a), [a, inv_std, out_id](Tape& t, const Matrix& g) {
    const Matrix& xhat = t.value(out_id);
    const double nn = static_cast<double>(g.rows());
    const RowVector gsum = g.colwise().sum();
    const RowVector gxsum = g.cwiseProduct(xhat).colwise().sum();
    Matrix dx = (nn * g.array()).matrix();
    dx.rowwise() -= gsum;
    dx.array() -= xhat.array().rowwise() * gxsum.array();
    t.grad(a).array() += dx.array().rowwise() * (inv_std.array() / nn);
  });
}

Matrix softmax_rows(const Matrix& logits, double temperature) {
  Matrix s = logits / temperature;
  s.colwise() -= s.rowwise().maxCoeff();
  s = s.array().exp();
  s.array().colwise() /= s.rowwise().sum().array();
  return s;
}

Matrix log_softmax_rows(const Matrix& logits, double temperature) {
  Matrix s = logits / temperature;
  s.colwise() -= s.rowwise().maxCoeff();
  const Eigen::VectorXd lse = s.array().exp().rowwise().sum().log();
  s.colwise() -= lse;
  return s;
}

Var softmax(Var a, double temperature) {
  if (!(temperature > 0)) throw ShapeError("softmax: temperature must be positive");
  Tape& t = a.tape();
  const std::size_t out_id = t.size();
  return t.push(softmax_rows(a.value(), temperature), t.needs_grad(a),
                [a, out_id, temperature](Tape& t, const Matrix& g) {
                  const Matrix& y = t.value(out_id);
                  const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
                  Matrix d = g;
                  d.colwise() -= dot;
                  t.grad(a) += y.cwiseProduct(d) / temperature;
                });
}

Var log_softmax(Var a, double temperature) {
  if (!(temperature > 0)) throw ShapeError("log_softmax: temperature must be positive");
  Tape& t = a.tape();
  const std::size_t out_id = t.size();
  return t.push(log_softmax_rows(a.value(), temperature), t.needs_grad(a),
                [a, out_id, temperature](Tape& t, const Matrix& g) {
                  const Matrix p = t.value(out_id).array().exp();
                  const Eigen::VectorXd gs = g.rowwise().sum();
                  Matrix d = g - (p.array().colwise() * gs.array()).matrix();
                  t.grad(a) += d / temperature;
                });
}

Var sum(Var a) {
  Tape& t = a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& t, const Matrix& g) {
    t.grad(a).array() += g(0, 0);
  });
}

}  // namespace wkd::nn
