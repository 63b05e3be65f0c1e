#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wkd/nn/rng.hpp"
#include "wkd/nn/tape.hpp"

namespace wkd::nn {

enum class Mode { train, eval };

/// Fully connected layer: y = x W^T + b, W is out x in.
class DenseLayer {
 public:
  DenseLayer() = default;
  /// Zero-initialised.
  DenseLayer(const std::string& name, int in, int out);

  /// Uniform(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
  void init_uniform(Rng& rng);

  int in() const { return static_cast<int>(weight.value.cols()); }
  int out() const { return static_cast<int>(weight.value.rows()); }
  std::int64_t parameter_count() const { return weight.size() + bias.size(); }

  Var forward(Tape& tape, Var x) { return linear(x, bind(tape, weight), bind(tape, bias)); }
  Var forward(Tape& tape, Var x) const { return linear(x, bind(tape, weight), bind(tape, bias)); }

  Parameter weight;
  Parameter bias;
};

/// Per-feature batch normalisation over the rows of a batch. With `affine`
/// off there is no learned scale or shift; running statistics are buffers,
/// not parameters.
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(const std::string& name, int features, bool affine, double momentum = 0.1, double eps = 1e-5);

  int features() const { return static_cast<int>(running_mean.cols()); }
  bool affine() const { return affine_; }
  std::int64_t parameter_count() const { return affine_ ? scale.size() + shift.size() : 0; }
  std::int64_t buffer_count() const { return running_mean.size() + running_var.size(); }

  /// Train mode normalises with batch statistics (needs >= 2 rows) and, if
  /// `update_stats`, folds them into the running estimates with the
  /// unbiased variance. Eval mode uses running statistics only.
  Var forward(Tape& tape, Var x, Mode mode, bool update_stats);
  /// Eval-mode forward with frozen parameters.
  Var forward(Tape& tape, Var x) const;

  Parameter scale;
  Parameter shift;
  Matrix running_mean;  ///< 1 x features
  Matrix running_var;   ///< 1 x features
  double momentum = 0.1;
  double eps = 1e-5;

 private:
  bool affine_ = false;
};

/// Inverted dropout: train mode zeroes entries with probability `rate` and
/// scales survivors by 1/(1-rate); eval mode is the identity.
Var dropout(Var x, double rate, Mode mode, Rng* rng);

struct AdamConfig {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. State is positional: the same parameter list,
/// in the same order, must be passed to every step().
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Throws NumericError naming the parameter if any gradient is not
  /// finite; in that case nothing is updated.
  void step(const std::vector<Parameter*>& params);

  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace wkd::nn
