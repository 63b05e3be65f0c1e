#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "wkd/nn/layers.hpp"
#include "wkd/topicvae.hpp"

namespace wkd {

// ---------------------------------------------------------------------------
// Wasserstein distance between Gaussians
// ---------------------------------------------------------------------------

/// Squared 2-Wasserstein distance between N(mu1, cov1) and N(mu2, cov2):
///   |mu1 - mu2|^2 + tr(cov1 + cov2 - 2 (cov2^1/2 cov1 cov2^1/2)^1/2).
/// Covariances are symmetrised; eigenvalues in [-1e-8, 0) are clamped to
/// zero, anything lower throws NumericError ("not PSD").
double w2_squared_full(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                       const Eigen::MatrixXd& cov2);

/// Diagonal-covariance case of the above for one pair of rows:
///   |mu_t - mu_s|^2 + sum_k (sigma_t,k - sigma_s,k)^2, sigma = exp(log_var/2).
double w2_squared_diag(const RowVector& mu_t, const RowVector& log_var_t, const RowVector& mu_s,
                       const RowVector& log_var_s);
/// Batch mean of the row-wise distance.
double w2_squared_diag(const GaussianPosterior& teacher, const GaussianPosterior& student);
/// Differentiable in the student posterior only.
nn::Var w2_squared_diag(const Matrix& mu_t, const Matrix& log_var_t, nn::Var mu_s, nn::Var log_var_s);

// ---------------------------------------------------------------------------
// Soft labels
// ---------------------------------------------------------------------------

/// Batch mean of -sum_v softmax(u_t / t)_v log softmax(u_s / t)_v.
double soft_ce(const Matrix& teacher_logits, const Matrix& student_logits, double temperature);
/// Differentiable in the student logits only.
nn::Var soft_ce(const Matrix& teacher_logits, nn::Var student_logits, double temperature);

struct KdLoss {
  double total = 0.0;
  double w2 = 0.0;
  double ce = 0.0;
};

/// kd_total = kd_2w + t^2 kd_ce. A disabled term still reports its value
/// but contributes zero to the total (ablation).
KdLoss kd_loss(const GaussianPosterior& teacher, const GaussianPosterior& student, const Matrix& teacher_logits,
               const Matrix& student_logits, double temperature, bool use_2w = true, bool use_ce = true);

/// (1 - alpha) total_vae + alpha kd_total. Throws ConfigError unless
/// 0 <= alpha <= 1.
double total_student_loss(const LossBreakdown& vae, double kd_total, double alpha);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Which topic proportions feed the teacher decoder when forming soft labels.
enum class TeacherTheta {
  own,      ///< teacher's theta from its posterior mean
  student,  ///< the student's sampled theta (alternative reading)
};

struct KdConfig {
  double alpha = 0.5;
  double temperature = 2.0;
  bool use_2w = true;
  bool use_ce = true;
  TeacherTheta teacher_theta = TeacherTheta::own;

  void validate() const;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  std::uint64_t seed = 0;
  nn::AdamConfig adam{};

  void validate() const;
};

/// Row-aligned training inputs. `teacher_ctx` is only read by distillation.
struct TrainingSet {
  Matrix counts;
  Matrix bow;
  Matrix ctx;
  Matrix teacher_ctx;

  Eigen::Index size() const { return counts.rows(); }
  Batch gather(const std::vector<Eigen::Index>& rows) const;
  Matrix gather_teacher_ctx(const std::vector<Eigen::Index>& rows) const;
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;  ///< batch averages over the epoch
};
using History = std::vector<EpochRecord>;

/// Called after each epoch; used for progress output.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// A teacher that is only ever run in eval mode with z = mu. Safe to share
/// between threads.
class FrozenTeacher {
 public:
  explicit FrozenTeacher(TopicModel model);

  struct Outputs {
    Matrix mu;
    Matrix log_var;
    Matrix theta;
    Matrix logits;
  };

  const TopicModel& model() const { return model_; }
  Outputs infer(const Matrix& bow, const Matrix& ctx) const;
  /// Teacher decoder logits for externally supplied topic proportions.
  Matrix logits_from_theta(const Matrix& theta) const;
  std::uint64_t checksum() const { return model_.checksum(); }

 private:
  TopicModel model_;
};

/// Plain VAE training (teacher, or student without distillation).
History train_vae(TopicModel& model, const TrainingSet& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Student training against a frozen teacher with
///   (1 - alpha) L_VAE + alpha (L_2W + t^2 L_CE).
/// Throws ConfigError if K or V differ, NumericError (with epoch and batch)
/// on a non-finite loss.
History train_student_with_kd(const FrozenTeacher& teacher, TopicModel& student, const TrainingSet& data,
                              const TrainConfig& cfg, const KdConfig& kd, const EpochCallback& on_epoch = {});

/// Partition of a shuffled epoch into batches; a trailing batch of one
/// document is folded into the previous batch (batch norm needs >= 2 rows).
std::vector<std::vector<Eigen::Index>> epoch_batches(Eigen::Index n_docs, int batch_size, std::uint64_t seed,
                                                     int epoch);

}  // namespace wkd
