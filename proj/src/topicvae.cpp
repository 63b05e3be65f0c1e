#include "wkd/topicvae.hpp"

#include <bit>
#include <cmath>
#include <sstream>

#include "wkd/error.hpp"

namespace wkd {

using nn::Mode;
using nn::Tape;
using nn::Var;

std::string_view architecture_name(Architecture a) {
  return a == Architecture::combined ? "combined" : "zeroshot";
}

Architecture parse_architecture(std::string_view s) {
  if (s == "combined") return Architecture::combined;
  if (s == "zeroshot") return Architecture::zeroshot;
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  if (num_topics < 1) throw ConfigError("number of topics must be >= 1");
  if (vocab_size < 1) throw ConfigError("vocabulary size must be >= 1");
  if (ctx_dim < 1) throw ConfigError("embedding dimension must be >= 1");
  if (hidden_sizes.empty()) throw ConfigError("encoder needs at least one hidden layer");
  for (int h : hidden_sizes) {
    if (h < 1) throw ConfigError("hidden layer widths must be >= 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

int ModelConfig::hidden_input_width() const {
  if (architecture == Architecture::combined) return 2 * vocab_size;
  return ctx_adapter ? vocab_size : ctx_dim;
}

std::uint64_t ModelConfig::hash() const {
  std::ostringstream s;
  s.precision(17);
  s << "architecture=" << architecture_name(architecture) << ";K=" << num_topics << ";V=" << vocab_size
    << ";ctx_dim=" << ctx_dim << ";hidden=";
  for (int h : hidden_sizes) s << h << ',';
  s << ";adapter=" << (architecture == Architecture::combined || ctx_adapter) << ";dropout=" << dropout
    << ";alpha=" << effective_alpha() << ";norm=" << decoder_norm << ";momentum=" << norm_momentum
    << ";eps=" << norm_eps;
  return nn::fnv1a(s.str());
}

PriorParams laplace_prior(int num_topics, double alpha) {
  if (num_topics < 2) throw ConfigError("Laplace prior needs K >= 2 (variance is zero for K = 1)");
  if (!(alpha > 0)) throw ConfigError("Dirichlet concentration must be positive");
  const double k = num_topics;
  PriorParams p;
  p.alpha = alpha;
  p.mu = RowVector::Zero(num_topics);
  p.var = RowVector::Constant(num_topics, (1.0 / alpha) * (1.0 - 2.0 / k) + 1.0 / (k * alpha));
  return p;
}

TopicModel::TopicModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int v = cfg_.vocab_size;
  const int k = cfg_.num_topics;
  if (cfg_.has_projection()) projection_.emplace("ctx_projection", cfg_.ctx_dim, v);
  int width = cfg_.hidden_input_width();
  for (std::size_t i = 0; i < cfg_.hidden_sizes.size(); ++i) {
    hidden_.emplace_back("hidden." + std::to_string(i), width, cfg_.hidden_sizes[i]);
    width = cfg_.hidden_sizes[i];
  }
  mu_head_ = nn::DenseLayer("mu_head", width, k);
  log_var_head_ = nn::DenseLayer("log_var_head", width, k);
  beta_ = nn::Parameter("beta", Matrix::Zero(k, v));
  if (cfg_.decoder_norm) decoder_norm_.emplace("decoder_norm", v, false, cfg_.norm_momentum, cfg_.norm_eps);
}

TopicModel::TopicModel(const ModelConfig& cfg, std::uint64_t seed) : TopicModel(cfg) {
  std::uint64_t layer = 0;
  if (projection_) {
    nn::Rng rng(seed, "init", layer++);
    projection_->init_uniform(rng);
  }
  for (auto& h : hidden_) {
    nn::Rng rng(seed, "init", layer++);
    h.init_uniform(rng);
  }
  for (auto* head : {&mu_head_, &log_var_head_}) {
    nn::Rng rng(seed, "init", layer++);
    head->init_uniform(rng);
  }
  nn::Rng rng(seed, "init", layer++);
  const double bound = std::sqrt(6.0 / (cfg_.num_topics + cfg_.vocab_size));
  for (Eigen::Index i = 0; i < beta_.value.size(); ++i) beta_.value.data()[i] = (2.0 * rng.uniform() - 1.0) * bound;
}

TopicModel TopicModel::zeros(const ModelConfig& cfg) { return TopicModel(cfg); }

template <class Self>
std::pair<Var, Var> TopicModel::encode_impl(Self& self, Tape& tape, const Matrix* bow, const Matrix& ctx, Mode mode,
                                            nn::Rng* dropout_rng) {
  const auto& cfg = self.cfg_;
  if (ctx.cols() != cfg.ctx_dim) {
    throw ShapeError("encoder expects embeddings of width " + std::to_string(cfg.ctx_dim) + ", got " +
                     std::to_string(ctx.cols()));
  }
  Var x = tape.constant_ref(ctx);
  if (self.projection_) x = self.projection_->forward(tape, x);
  if (cfg.architecture == Architecture::combined) {
    if (bow == nullptr) throw ConfigError("combined encoder needs the BoW input");
    if (bow->cols() != cfg.vocab_size || bow->rows() != ctx.rows()) {
      throw ShapeError("BoW input is " + std::to_string(bow->rows()) + "x" + std::to_string(bow->cols()) +
                       ", expected " + std::to_string(ctx.rows()) + "x" + std::to_string(cfg.vocab_size));
    }
    x = nn::concat_cols(tape.constant_ref(*bow), x);
  }
  for (auto& layer : self.hidden_) x = nn::softplus(layer.forward(tape, x));
  x = nn::dropout(x, cfg.dropout, mode, dropout_rng);
  return {self.mu_head_.forward(tape, x), self.log_var_head_.forward(tape, x)};
}

TopicModel::Outputs TopicModel::forward(Tape& tape, const Matrix* bow, const Matrix& ctx, const ForwardOptions& opts) {
  Outputs out;
  std::tie(out.mu, out.log_var) = encode_impl(*this, tape, bow, ctx, opts.mode, opts.dropout_rng);
  if (opts.noise != nullptr) {
    if (opts.noise->rows() != out.mu.rows() || opts.noise->cols() != out.mu.cols()) {
      throw ShapeError("noise must be " + std::to_string(out.mu.rows()) + "x" + std::to_string(out.mu.cols()));
    }
    out.z = nn::add(out.mu, nn::mul_const(nn::exp(nn::scale(out.log_var, 0.5)), *opts.noise));
  } else {
    out.z = out.mu;
  }
  out.theta = nn::softmax(out.z);
  out.logits = nn::matmul(out.theta, nn::bind(tape, beta_));
  if (decoder_norm_) out.logits = decoder_norm_->forward(tape, out.logits, opts.mode, opts.update_norm_stats);
  out.log_recon = nn::log_softmax(out.logits);
  return out;
}

TopicModel::Outputs TopicModel::forward(Tape& tape, const Matrix* bow, const Matrix& ctx) const {
  Outputs out;
  std::tie(out.mu, out.log_var) = encode_impl(*this, tape, bow, ctx, Mode::eval, nullptr);
  out.z = out.mu;
  out.theta = nn::softmax(out.z);
  out.logits = nn::matmul(out.theta, nn::bind(tape, beta_));
  if (decoder_norm_) out.logits = decoder_norm_->forward(tape, out.logits);
  out.log_recon = nn::log_softmax(out.logits);
  return out;
}

GaussianPosterior TopicModel::encode(const Matrix* bow, const Matrix& ctx, Mode mode, nn::Rng* dropout_rng) {
  Tape tape;
  auto [mu, lv] = encode_impl(*this, tape, bow, ctx, mode, dropout_rng);
  return {mu.value(), lv.value()};
}

GaussianPosterior TopicModel::encode(const Matrix* bow, const Matrix& ctx) const {
  Tape tape;
  auto [mu, lv] = encode_impl(*this, tape, bow, ctx, Mode::eval, nullptr);
  return {mu.value(), lv.value()};
}

DecodeResult TopicModel::decode(const Matrix& z) const {
  if (z.cols() != cfg_.num_topics) throw ShapeError("decode: z must have K columns");
  if (!z.allFinite()) throw NumericError("decode: z is not finite");
  Tape tape;
  Var theta = nn::softmax(tape.constant_ref(z));
  Var logits = nn::matmul(theta, nn::bind(tape, beta_));
  if (decoder_norm_) logits = decoder_norm_->forward(tape, logits);
  return {theta.value(), logits.value(), nn::softmax_rows(logits.value())};
}

std::vector<nn::Parameter*> TopicModel::parameters() {
  std::vector<nn::Parameter*> ps;
  auto add_layer = [&ps](nn::DenseLayer& l) {
    ps.push_back(&l.weight);
    ps.push_back(&l.bias);
  };
  if (projection_) add_layer(*projection_);
  for (auto& h : hidden_) add_layer(h);
  add_layer(mu_head_);
  add_layer(log_var_head_);
  ps.push_back(&beta_);
  if (decoder_norm_ && decoder_norm_->affine()) {
    ps.push_back(&decoder_norm_->scale);
    ps.push_back(&decoder_norm_->shift);
  }
  return ps;
}

std::vector<const nn::Parameter*> TopicModel::parameters() const {
  auto ps = const_cast<TopicModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::vector<std::pair<std::string, const Matrix*>> TopicModel::named_tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (const auto* p : parameters()) out.emplace_back(p->name, &p->value);
  if (decoder_norm_) {
    out.emplace_back("decoder_norm.running_mean", &decoder_norm_->running_mean);
    out.emplace_back("decoder_norm.running_var", &decoder_norm_->running_var);
  }
  return out;
}

void TopicModel::load_tensor(const std::string& name, const Matrix& value) {
  Matrix* target = nullptr;
  for (auto* p : parameters()) {
    if (p->name == name) target = &p->value;
  }
  if (decoder_norm_ && name == "decoder_norm.running_mean") target = &decoder_norm_->running_mean;
  if (decoder_norm_ && name == "decoder_norm.running_var") target = &decoder_norm_->running_var;
  if (target == nullptr) throw DataError("unknown tensor '" + name + "'");
  if (target->rows() != value.rows() || target->cols() != value.cols()) {
    throw DataError("tensor '" + name + "' has shape " + std::to_string(value.rows()) + "x" +
                    std::to_string(value.cols()) + ", model expects " + std::to_string(target->rows()) + "x" +
                    std::to_string(target->cols()));
  }
  *target = value;
}

ParameterCount TopicModel::count_parameters() const {
  ParameterCount c;
  for (const auto* p : parameters()) c.trainable += p->size();
  if (decoder_norm_) c.buffers += decoder_norm_->buffer_count();
  return c;
}

std::uint64_t TopicModel::checksum() const {
  std::uint64_t h = nn::fnv1a(architecture_name(cfg_.architecture));
  for (const auto& [name, m] : named_tensors()) {
    h = nn::fnv1a(name, h);
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(m->data()[i]);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFFu;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

Matrix reparameterize(const GaussianPosterior& post, const Matrix& noise) {
  if (noise.rows() != post.mu.rows() || noise.cols() != post.mu.cols()) {
    throw ShapeError("reparameterize: noise shape does not match the posterior");
  }
  return post.mu.array() + (0.5 * post.log_var.array()).exp() * noise.array();
}

double kl_to_prior(const GaussianPosterior& post, const PriorParams& prior) {
  const auto n = post.mu.rows();
  const auto k = post.mu.cols();
  if (prior.var.size() != k || post.log_var.rows() != n || post.log_var.cols() != k) {
    throw ShapeError("kl_to_prior: posterior and prior dimensions differ");
  }
  if (n == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const double var = std::exp(post.log_var(i, j));
      const double d = prior.mu(j) - post.mu(i, j);
      total += var / prior.var(j) + d * d / prior.var(j) - 1.0 + std::log(prior.var(j)) - post.log_var(i, j);
    }
  }
  return 0.5 * total / static_cast<double>(n);
}

Var kl_to_prior(Var mu, Var log_var, const PriorParams& prior) {
  const auto k = mu.cols();
  if (prior.var.size() != k || log_var.cols() != k || log_var.rows() != mu.rows()) {
    throw ShapeError("kl_to_prior: posterior and prior dimensions differ");
  }
  const RowVector inv_var = prior.var.cwiseInverse();
  const RowVector zeros = RowVector::Zero(k);
  const RowVector ones = RowVector::Ones(k);
  Var t1 = nn::col_affine(nn::exp(log_var), inv_var, zeros);
  Var t2 = nn::col_affine(nn::square(nn::col_affine(mu, ones, -prior.mu)), inv_var, zeros);
  const RowVector offset = (prior.var.array().log() - 1.0).matrix();
  Var t3 = nn::col_affine(log_var, -ones, offset);
  const double n = std::max<double>(1.0, static_cast<double>(mu.rows()));
  return nn::scale(nn::sum(t1 + t2 + t3), 0.5 / n);
}

namespace {

Eigen::Index nonempty_rows(const Matrix& counts) {
  Eigen::Index n = 0;
  for (Eigen::Index i = 0; i < counts.rows(); ++i) n += counts.row(i).sum() > 0 ? 1 : 0;
  return n;
}

}  // namespace

double nll(const Matrix& recon, const Matrix& counts) {
  if (recon.rows() != counts.rows() || recon.cols() != counts.cols()) {
    throw ShapeError("nll: reconstruction and counts differ in shape");
  }
  const auto n = nonempty_rows(counts);
  if (n == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    for (Eigen::Index j = 0; j < counts.cols(); ++j) {
      if (counts(i, j) > 0) total -= counts(i, j) * std::log(recon(i, j));
    }
  }
  return total / static_cast<double>(n);
}

Var nll(Var log_recon, const Matrix& counts) {
  if (log_recon.rows() != counts.rows() || log_recon.cols() != counts.cols()) {
    throw ShapeError("nll: reconstruction and counts differ in shape");
  }
  const auto n = nonempty_rows(counts);
  if (n == 0) return log_recon.tape().constant(Matrix::Zero(1, 1));
  return nn::scale(nn::sum(nn::mul_const(log_recon, counts)), -1.0 / static_cast<double>(n));
}

VaeTerms vae_terms(Tape& tape, TopicModel& model, const Batch& batch, const PriorParams& prior,
                   const TopicModel::ForwardOptions& opts) {
  VaeTerms t;
  t.outputs = model.forward(tape, &batch.bow, batch.ctx, opts);
  t.nll = nll(t.outputs.log_recon, batch.counts);
  t.kl = kl_to_prior(t.outputs.mu, t.outputs.log_var, prior);
  t.total = t.nll + t.kl;
  return t;
}

LossBreakdown vae_loss(TopicModel& model, const Batch& batch, const PriorParams& prior, const Matrix& noise) {
  Tape tape;
  TopicModel::ForwardOptions opts;
  opts.mode = Mode::eval;
  opts.noise = &noise;
  opts.update_norm_stats = false;
  auto t = vae_terms(tape, model, batch, prior, opts);
  LossBreakdown b;
  b.nll = t.nll.scalar();
  b.kl = t.kl.scalar();
  b.total_vae = t.total.scalar();
  return b;
}

}  // namespace wkd
