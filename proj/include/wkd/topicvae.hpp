#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wkd/nn/layers.hpp"
#include "wkd/nn/rng.hpp"
#include "wkd/nn/tape.hpp"

namespace wkd {

using nn::Matrix;
using nn::RowVector;

/// combined: encoder sees [normalised BoW, projected embedding] (teacher).
/// zeroshot: encoder sees the contextual embedding only (student).
enum class Architecture { combined, zeroshot };

std::string_view architecture_name(Architecture a);
Architecture parse_architecture(std::string_view s);

struct ModelConfig {
  Architecture architecture = Architecture::zeroshot;
  int num_topics = 20;
  int vocab_size = 2000;
  int ctx_dim = 384;
  std::vector<int> hidden_sizes{100};
  /// zeroshot only: route the embedding through a ctx_dim -> V linear
  /// adapter before the hidden stack. The combined architecture always has
  /// this projection.
  bool ctx_adapter = true;
  double dropout = 0.2;
  /// Symmetric Dirichlet concentration; <= 0 selects 1/K.
  double prior_alpha = 0.0;
  bool decoder_norm = true;
  double norm_momentum = 0.1;
  double norm_eps = 1e-5;

  /// Throws ConfigError on non-positive sizes or rates outside [0,1).
  void validate() const;
  bool has_projection() const { return architecture == Architecture::combined || ctx_adapter; }
  /// Width of the first hidden layer's input: 2V (combined), V (zeroshot
  /// with adapter) or ctx_dim.
  int hidden_input_width() const;
  double effective_alpha() const { return prior_alpha > 0 ? prior_alpha : 1.0 / num_topics; }
  /// Stable FNV-1a over a canonical rendering of every field.
  std::uint64_t hash() const;
};

/// Diagonal Gaussian q(z|x) per row: variance = exp(log_var).
struct GaussianPosterior {
  Matrix mu;
  Matrix log_var;
};

struct PriorParams {
  RowVector mu;
  RowVector var;
  double alpha = 1.0;
};

/// Laplace approximation of a symmetric Dirichlet(alpha) in the softmax basis:
/// mu_k = 0, var_k = (1/alpha)(1 - 2/K) + 1/(K alpha). Throws ConfigError for
/// K < 2 (the variance degenerates to zero) or alpha <= 0.
PriorParams laplace_prior(int num_topics, double alpha);

struct LossBreakdown {
  double nll = 0.0;
  double kl = 0.0;
  double total_vae = 0.0;
  std::optional<double> kd_2w;
  std::optional<double> kd_ce;
  std::optional<double> kd_total;
  std::optional<double> total_student;
};

/// Inputs for a batch of documents, row-aligned.
struct Batch {
  Matrix counts;  ///< n x V raw BoW counts (reconstruction target)
  Matrix bow;     ///< n x V L1-normalised BoW (combined encoder input)
  Matrix ctx;     ///< n x ctx_dim contextual embeddings
};

struct ParameterCount {
  std::int64_t trainable = 0;
  std::int64_t buffers = 0;

  std::int64_t total() const { return trainable + buffers; }
  std::int64_t bytes() const { return 4 * total(); }
};

struct DecodeResult {
  Matrix theta;
  Matrix logits;
  Matrix recon;
};

class TopicModel {
 public:
  struct Outputs {
    nn::Var mu;
    nn::Var log_var;
    nn::Var z;
    nn::Var theta;
    nn::Var logits;
    nn::Var log_recon;
  };

  struct ForwardOptions {
    nn::Mode mode = nn::Mode::eval;
    nn::Rng* dropout_rng = nullptr;
    /// Standard-normal draws, batch x K. Absent means z = mu.
    const Matrix* noise = nullptr;
    bool update_norm_stats = true;
  };

  /// Randomly initialised from Rng(seed, "init", layer).
  TopicModel(const ModelConfig& cfg, std::uint64_t seed);
  /// Every weight, bias and beta entry zero.
  static TopicModel zeros(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  int num_topics() const { return cfg_.num_topics; }
  int vocab_size() const { return cfg_.vocab_size; }
  int ctx_dim() const { return cfg_.ctx_dim; }

  /// Trainable forward. `bow` is required for the combined architecture
  /// and ignored otherwise.
  Outputs forward(nn::Tape& tape, const Matrix* bow, const Matrix& ctx, const ForwardOptions& opts);
  /// Frozen eval-mode forward (z = mu); touches no state.
  Outputs forward(nn::Tape& tape, const Matrix* bow, const Matrix& ctx) const;

  GaussianPosterior encode(const Matrix* bow, const Matrix& ctx, nn::Mode mode = nn::Mode::eval,
                           nn::Rng* dropout_rng = nullptr);
  GaussianPosterior encode(const Matrix* bow, const Matrix& ctx) const;
  /// Eval-mode decode: theta = softmax(z), logits = norm(theta beta),
  /// recon = softmax(logits).
  DecodeResult decode(const Matrix& z) const;

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;

  /// Every persistent tensor (parameters and norm buffers) by name, in a
  /// fixed order. Used by checkpoints and checksums.
  std::vector<std::pair<std::string, const Matrix*>> named_tensors() const;
  /// Replaces the named tensor; throws DataError on unknown names or shapes.
  void load_tensor(const std::string& name, const Matrix& value);

  ParameterCount count_parameters() const;
  /// FNV-1a over the bit patterns of every persistent tensor.
  std::uint64_t checksum() const;

  const Matrix& beta() const { return beta_.value; }
  Matrix& beta() { return beta_.value; }

 private:
  explicit TopicModel(const ModelConfig& cfg);

  template <class Self>
  static std::pair<nn::Var, nn::Var> encode_impl(Self& self, nn::Tape& tape, const Matrix* bow,
                                                 const Matrix& ctx, nn::Mode mode, nn::Rng* dropout_rng);

  ModelConfig cfg_;
  std::optional<nn::DenseLayer> projection_;
  std::vector<nn::DenseLayer> hidden_;
  nn::DenseLayer mu_head_;
  nn::DenseLayer log_var_head_;
  nn::Parameter beta_;
  std::optional<nn::BatchNorm> decoder_norm_;
};

/// z = mu + exp(log_var / 2) * noise.
Matrix reparameterize(const GaussianPosterior& post, const Matrix& noise);

/// Batch mean of KL(N(mu, diag var) || N(mu_p, diag var_p)).
double kl_to_prior(const GaussianPosterior& post, const PriorParams& prior);
nn::Var kl_to_prior(nn::Var mu, nn::Var log_var, const PriorParams& prior);

/// Mean over documents with at least one count of -sum_v count_v log recon_v.
/// A batch with no counts at all has nll 0.
double nll(const Matrix& recon, const Matrix& counts);
nn::Var nll(nn::Var log_recon, const Matrix& counts);

struct VaeTerms {
  TopicModel::Outputs outputs;
  nn::Var nll;
  nn::Var kl;
  nn::Var total;
};

/// encode -> reparameterise -> decode -> nll + kl on a tape.
VaeTerms vae_terms(nn::Tape& tape, TopicModel& model, const Batch& batch, const PriorParams& prior,
                   const TopicModel::ForwardOptions& opts);

/// Value-level loss in eval mode with the given noise (no dropout, no
/// running-stat updates).
LossBreakdown vae_loss(TopicModel& model, const Batch& batch, const PriorParams& prior, const Matrix& noise);

}  // namespace wkd
