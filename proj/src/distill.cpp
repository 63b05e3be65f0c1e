#include "wkd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>

#include "wkd/error.hpp"

namespace wkd {

using nn::Tape;
using nn::Var;

namespace {

// Eigenvalues below -tol (relative to the spectrum scale) mean the input was
// not a covariance. Small negatives are round-off and go to zero.
Eigen::VectorXd checked_eigenvalues(const Eigen::VectorXd& ev, const char* what) {
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  Eigen::VectorXd out = ev;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-8 * scale) {
      throw NumericError(std::string(what) + " is not PSD (eigenvalue " + std::to_string(ev[i]) + ")");
    }
    out[i] = std::max(0.0, ev[i]);
  }
  return out;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shapes " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " and " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + " differ");
  }
}

void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("temperature must be positive");
}

}  // namespace

double w2_squared_full(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                       const Eigen::MatrixXd& cov2) {
  const auto d = mu1.size();
  if (mu2.size() != d || cov1.rows() != d || cov1.cols() != d || cov2.rows() != d || cov2.cols() != d) {
    throw ShapeError("w2_squared_full: dimensions do not agree");
  }
  if (!mu1.allFinite() || !mu2.allFinite() || !cov1.allFinite() || !cov2.allFinite()) {
    throw NumericError("w2_squared_full: non-finite input");
  }
  // distance of a measure to itself
  if (mu1 == mu2 && cov1 == cov2) return 0.0;

  const Eigen::MatrixXd c1 = 0.5 * (cov1 + cov1.transpose());
  const Eigen::MatrixXd c2 = 0.5 * (cov2 + cov2.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(c2);
  if (es2.info() != Eigen::Success) throw NumericError("w2_squared_full: eigendecomposition failed");
  const Eigen::VectorXd l2 = checked_eigenvalues(es2.eigenvalues(), "second covariance");
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es1(c1, Eigen::EigenvaluesOnly);
    checked_eigenvalues(es1.eigenvalues(), "first covariance");
  }
  const Eigen::MatrixXd root2 = es2.eigenvectors() * l2.cwiseSqrt().asDiagonal() * es2.eigenvectors().transpose();
  Eigen::MatrixXd cross = root2 * c1 * root2;
  cross = 0.5 * (cross + cross.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esx(cross, Eigen::EigenvaluesOnly);
  if (esx.info() != Eigen::Success) throw NumericError("w2_squared_full: eigendecomposition failed");
  const Eigen::VectorXd lx = checked_eigenvalues(esx.eigenvalues(), "cross term");

  return (mu1 - mu2).squaredNorm() + c1.trace() + c2.trace() - 2.0 * lx.cwiseSqrt().sum();
}

double w2_squared_diag(const RowVector& mu_t, const RowVector& log_var_t, const RowVector& mu_s,
                       const RowVector& log_var_s) {
  const auto k = mu_t.size();
  if (log_var_t.size() != k || mu_s.size() != k || log_var_s.size() != k) {
    throw ShapeError("w2_squared_diag: dimensions do not agree");
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double dm = mu_t[i] - mu_s[i];
    const double ds = std::exp(0.5 * log_var_t[i]) - std::exp(0.5 * log_var_s[i]);
    acc += dm * dm;
    acc += ds * ds;
  }
  return acc;
}

double w2_squared_diag(const GaussianPosterior& teacher, const GaussianPosterior& student) {
  require_same_shape(teacher.mu, student.mu, "w2_squared_diag");
  require_same_shape(teacher.log_var, student.log_var, "w2_squared_diag");
  require_same_shape(teacher.mu, teacher.log_var, "w2_squared_diag");
  const auto n = teacher.mu.rows();
  if (n == 0) throw ShapeError("w2_squared_diag: empty batch");
  double acc = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    acc += w2_squared_diag(teacher.mu.row(r), teacher.log_var.row(r), student.mu.row(r), student.log_var.row(r));
  }
  return acc / static_cast<double>(n);
}

Var w2_squared_diag(const Matrix& mu_t, const Matrix& log_var_t, Var mu_s, Var log_var_s) {
  require_same_shape(mu_t, mu_s.value(), "w2_squared_diag");
  require_same_shape(log_var_t, log_var_s.value(), "w2_squared_diag");
  Tape& tape = mu_s.tape();
  const Matrix sigma_t = (0.5 * log_var_t.array()).exp().matrix();
  Var dm = nn::sub(tape.constant(mu_t), mu_s);
  Var ds = nn::sub(tape.constant(sigma_t), nn::exp(nn::scale(log_var_s, 0.5)));
  Var total = nn::add(nn::sum(nn::square(dm)), nn::sum(nn::square(ds)));
  return nn::scale(total, 1.0 / static_cast<double>(mu_t.rows()));
}

double soft_ce(const Matrix& teacher_logits, const Matrix& student_logits, double temperature) {
  check_temperature(temperature);
  require_same_shape(teacher_logits, student_logits, "soft_ce");
  if (teacher_logits.rows() == 0) throw ShapeError("soft_ce: empty batch");
  const Matrix p = nn::softmax_rows(teacher_logits, temperature);
  const Matrix logq = nn::log_softmax_rows(student_logits, temperature);
  return -(p.cwiseProduct(logq)).sum() / static_cast<double>(p.rows());
}

Var soft_ce(const Matrix& teacher_logits, Var student_logits, double temperature) {
  check_temperature(temperature);
  require_same_shape(teacher_logits, student_logits.value(), "soft_ce");
  const Matrix p = nn::softmax_rows(teacher_logits, temperature);
  Var logq = nn::log_softmax(student_logits, temperature);
  return nn::scale(nn::sum(nn::mul_const(logq, p)), -1.0 / static_cast<double>(p.rows()));
}

KdLoss kd_loss(const GaussianPosterior& teacher, const GaussianPosterior& student, const Matrix& teacher_logits,
               const Matrix& student_logits, double temperature, bool use_2w, bool use_ce) {
  KdLoss out;
  out.w2 = w2_squared_diag(teacher, student);
  out.ce = soft_ce(teacher_logits, student_logits, temperature);
  out.total = (use_2w ? out.w2 : 0.0) + (use_ce ? temperature * temperature * out.ce : 0.0);
  return out;
}

double total_student_loss(const LossBreakdown& vae, double kd_total, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  return (1.0 - alpha) * vae.total_vae + alpha * kd_total;
}

void KdConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be positive, got " + std::to_string(temperature));
  }
  if (alpha > 0.0 && !use_2w && !use_ce) throw ConfigError("distillation with both KD terms disabled");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
}

Batch TrainingSet::gather(const std::vector<Eigen::Index>& rows) const {
  Batch b;
  const auto n = static_cast<Eigen::Index>(rows.size());
  b.counts.resize(n, counts.cols());
  b.bow.resize(n, bow.cols());
  b.ctx.resize(n, ctx.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    b.counts.row(i) = counts.row(rows[i]);
    b.bow.row(i) = bow.row(rows[i]);
    b.ctx.row(i) = ctx.row(rows[i]);
  }
  return b;
}

Matrix TrainingSet::gather_teacher_ctx(const std::vector<Eigen::Index>& rows) const {
  Matrix m(static_cast<Eigen::Index>(rows.size()), teacher_ctx.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = teacher_ctx.row(rows[i]);
  return m;
}

FrozenTeacher::FrozenTeacher(TopicModel model) : model_(std::move(model)) {}

FrozenTeacher::Outputs FrozenTeacher::infer(const Matrix& bow, const Matrix& ctx) const {
  Tape tape;
  auto out = model_.forward(tape, &bow, ctx);
  return {out.mu.value(), out.log_var.value(), out.theta.value(), out.logits.value()};
}

Matrix FrozenTeacher::logits_from_theta(const Matrix& theta) const {
  if (theta.cols() != model_.num_topics()) throw ShapeError("teacher decoder expects K columns");
  Tape tape;
  Var logits = nn::matmul(tape.constant_ref(theta), tape.constant_ref(model_.beta()));
  const auto& cfg = model_.config();
  if (!cfg.decoder_norm) return logits.value();
  // eval-mode decoder norm with the teacher's running statistics
  const auto tensors = model_.named_tensors();
  const Matrix* mean = nullptr;
  const Matrix* var = nullptr;
  for (const auto& [name, t] : tensors) {
    if (name == "decoder_norm.running_mean") mean = t;
    if (name == "decoder_norm.running_var") var = t;
  }
  const RowVector inv_std = (var->row(0).array() + cfg.norm_eps).rsqrt();
  Matrix out = logits.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) = (out.row(r) - mean->row(0)).cwiseProduct(inv_std);
  return out;
}

std::vector<std::vector<Eigen::Index>> epoch_batches(Eigen::Index n_docs, int batch_size, std::uint64_t seed,
                                                     int epoch) {
  if (n_docs < 2) throw DataError("training needs at least 2 documents");
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_docs));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  nn::Rng rng(seed, "shuffle", static_cast<std::uint64_t>(epoch));
  rng.shuffle(std::span<Eigen::Index>(order));

  std::vector<std::vector<Eigen::Index>> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

namespace {

void check_data(const TopicModel& model, const TrainingSet& data) {
  const auto n = data.size();
  if (data.bow.rows() != n || data.ctx.rows() != n) throw DataError("training inputs are not row-aligned");
  if (data.counts.cols() != model.vocab_size() || data.bow.cols() != model.vocab_size()) {
    throw ConfigError("model vocabulary size " + std::to_string(model.vocab_size()) + " does not match data width " +
                      std::to_string(data.counts.cols()));
  }
  if (data.ctx.cols() != model.ctx_dim()) {
    throw ConfigError("model expects " + std::to_string(model.ctx_dim()) + "-d embeddings, data has " +
                      std::to_string(data.ctx.cols()));
  }
}

struct Accumulator {
  double nll = 0, kl = 0, vae = 0, w2 = 0, ce = 0, kd = 0, total = 0;
  int batches = 0;

  EpochRecord finish(int epoch, bool with_kd) const {
    const double n = batches > 0 ? static_cast<double>(batches) : 1.0;
    EpochRecord r;
    r.epoch = epoch;
    r.loss.nll = nll / n;
    r.loss.kl = kl / n;
    r.loss.total_vae = vae / n;
    if (with_kd) {
      r.loss.kd_2w = w2 / n;
      r.loss.kd_ce = ce / n;
      r.loss.kd_total = kd / n;
      r.loss.total_student = total / n;
    }
    return r;
  }
};

History run_training(TopicModel& model, const TrainingSet& data, const TrainConfig& cfg,
                     const FrozenTeacher* teacher, const KdConfig* kd, const EpochCallback& on_epoch) {
  cfg.validate();
  check_data(model, data);
  if (teacher != nullptr) {
    kd->validate();
    const auto& t = teacher->model();
    if (t.num_topics() != model.num_topics()) {
      throw ConfigError("teacher has K=" + std::to_string(t.num_topics()) + " but student has K=" +
                        std::to_string(model.num_topics()));
    }
    if (t.vocab_size() != model.vocab_size()) {
      throw ConfigError("teacher has V=" + std::to_string(t.vocab_size()) + " but student has V=" +
                        std::to_string(model.vocab_size()));
    }
    if (data.teacher_ctx.rows() != data.size() || data.teacher_ctx.cols() != t.ctx_dim()) {
      throw ConfigError("teacher embeddings must be " + std::to_string(data.size()) + "x" +
                        std::to_string(t.ctx_dim()));
    }
  }

  const PriorParams prior = laplace_prior(model.num_topics(), model.config().effective_alpha());
  nn::Adam adam(cfg.adam);
  const auto params = model.parameters();
  const auto k = model.num_topics();
  std::uint64_t step = 0;
  History history;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Accumulator acc;
    const auto batches = epoch_batches(data.size(), cfg.batch_size, cfg.seed, epoch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi, ++step) {
      const Batch batch = data.gather(batches[bi]);
      const auto n = batch.counts.rows();
      Matrix noise(n, k);
      nn::Rng noise_rng(cfg.seed, "noise", step);
      for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = noise_rng.normal();
      nn::Rng dropout_rng(cfg.seed, "dropout", step);

      TopicModel::ForwardOptions opts;
      opts.mode = nn::Mode::train;
      opts.dropout_rng = &dropout_rng;
      opts.noise = &noise;
      opts.update_norm_stats = true;

      Tape tape;
      VaeTerms vae = vae_terms(tape, model, batch, prior, opts);
      Var loss = vae.total;
      double w2 = 0, ce = 0, kd_total = 0;
      if (teacher != nullptr) {
        const Matrix t_ctx = data.gather_teacher_ctx(batches[bi]);
        const auto t_out = teacher->infer(batch.bow, t_ctx);
        const Matrix t_logits = kd->teacher_theta == TeacherTheta::own
                                    ? t_out.logits
                                    : teacher->logits_from_theta(vae.outputs.theta.value());
        Var v_w2 = w2_squared_diag(t_out.mu, t_out.log_var, vae.outputs.mu, vae.outputs.log_var);
        Var v_ce = soft_ce(t_logits, vae.outputs.logits, kd->temperature);
        const double t2 = kd->temperature * kd->temperature;
        Var v_kd;
        if (kd->use_2w && kd->use_ce) {
          v_kd = v_w2 + t2 * v_ce;
        } else if (kd->use_2w) {
          v_kd = v_w2;
        } else if (kd->use_ce) {
          v_kd = t2 * v_ce;
        } else {
          v_kd = 0.0 * v_w2;
        }
        loss = (1.0 - kd->alpha) * vae.total + kd->alpha * v_kd;
        w2 = v_w2.scalar();
        ce = v_ce.scalar();
        kd_total = v_kd.scalar();
      }

      const double value = loss.scalar();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi + 1));
      }
      tape.backward(loss);
      try {
        adam.step(params);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(bi + 1) + ")");
      }

      acc.nll += vae.nll.scalar();
      acc.kl += vae.kl.scalar();
      acc.vae += vae.total.scalar();
      acc.w2 += w2;
      acc.ce += ce;
      acc.kd += kd_total;
      acc.total += value;
      ++acc.batches;
    }
    history.push_back(acc.finish(epoch, teacher != nullptr));
    if (on_epoch) on_epoch(history.back());
  }
  return history;
}

}  // namespace

History train_vae(TopicModel& model, const TrainingSet& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  return run_training(model, data, cfg, nullptr, nullptr, on_epoch);
}

History train_student_with_kd(const FrozenTeacher& teacher, TopicModel& student, const TrainingSet& data,
                              const TrainConfig& cfg, const KdConfig& kd, const EpochCallback& on_epoch) {
  return run_training(student, data, cfg, &teacher, &kd, on_epoch);
}

}  // namespace wkd
