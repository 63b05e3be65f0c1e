#include "wkd/nn/layers.hpp"

#include <cmath>

#include "wkd/error.hpp"

namespace wkd::nn {

DenseLayer::DenseLayer(const std::string& name, int in, int out)
    : weight(name + ".weight", Matrix::Zero(out, in)), bias(name + ".bias", Matrix::Zero(1, out)) {
  if (in <= 0 || out <= 0) throw ConfigError("dense layer " + name + " needs positive dimensions");
}

void DenseLayer::init_uniform(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in()));
  for (auto* p : {&weight, &bias}) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = (2.0 * rng.uniform() - 1.0) * bound;
  }
}

BatchNorm::BatchNorm(const std::string& name, int features, bool affine, double momentum, double eps)
    : running_mean(Matrix::Zero(1, features)),
      running_var(Matrix::Ones(1, features)),
      momentum(momentum),
      eps(eps),
      affine_(affine) {
  if (features <= 0) throw ConfigError("batch norm " + name + " needs positive width");
  if (!(momentum > 0 && momentum < 1)) throw ConfigError("batch norm momentum must lie in (0,1)");
  if (affine) {
    scale = Parameter(name + ".scale", Matrix::Ones(1, features));
    shift = Parameter(name + ".shift", Matrix::Zero(1, features));
  }
}

Var BatchNorm::forward(Tape& tape, Var x, Mode mode, bool update_stats) {
  if (x.cols() != features()) throw ShapeError("batch norm: width " + std::to_string(x.cols()) + " != " + std::to_string(features()));
  if (mode == Mode::eval) {
    Var y = static_cast<const BatchNorm&>(*this).forward(tape, x);
    return y;
  }
  if (x.rows() < 2) throw ShapeError("batch norm in train mode needs a batch of at least 2 rows");

  if (update_stats) {
    const auto& v = x.value();
    const RowVector mean = v.colwise().mean();
    const double n = static_cast<double>(v.rows());
    const RowVector unbiased = (v.rowwise() - mean).array().square().colwise().sum() / (n - 1.0);
    running_mean = (1.0 - momentum) * running_mean + momentum * mean;
    running_var = (1.0 - momentum) * running_var + momentum * unbiased;
  }
  Var y = batch_standardize(x, eps);
  if (affine_) y = add_row(mul_row(y, bind(tape, scale)), bind(tape, shift));
  return y;
}

Var BatchNorm::forward(Tape& tape, Var x) const {
  if (x.cols() != features()) throw ShapeError("batch norm: width " + std::to_string(x.cols()) + " != " + std::to_string(features()));
  const RowVector inv_std = (running_var.row(0).array() + eps).rsqrt();
  const RowVector offset = -running_mean.row(0).cwiseProduct(inv_std);
  Var y = col_affine(x, inv_std, offset);
  if (affine_) y = add_row(mul_row(y, bind(tape, scale)), bind(tape, shift));
  return y;
}

Var dropout(Var x, double rate, Mode mode, Rng* rng) {
  if (mode == Mode::eval || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  if (rng == nullptr) throw ConfigError("dropout in train mode needs a generator");
  const double keep_scale = 1.0 / (1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->uniform() < rate ? 0.0 : keep_scale;
  return mul_const(x, mask);
}

void Adam::step(const std::vector<Parameter*>& params) {
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto* p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (params.size() != m_.size()) throw ConfigError("Adam: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    if (p->grad.rows() != m_[i].rows() || p->grad.cols() != m_[i].cols()) {
      throw ShapeError("Adam: gradient shape of " + p->name + " does not match its state");
    }
    if (!p->grad.allFinite()) throw NumericError("Adam: non-finite gradient for parameter " + p->name);
  }

  ++t_;
  const double t = static_cast<double>(t_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
    if (!p.value.allFinite()) throw NumericError("Adam: parameter " + p.name + " became non-finite");
  }
}

}  // namespace wkd::nn
