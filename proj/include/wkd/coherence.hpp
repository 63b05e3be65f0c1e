#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "wkd/corpus.hpp"
#include "wkd/topicvae.hpp"

namespace wkd {

/// K topics, each the top-N vocabulary words of a beta row.
struct TopicSet {
  std::vector<std::vector<std::size_t>> ids;
  std::vector<std::vector<std::string>> words;

  std::size_t size() const { return ids.size(); }
  /// Sorted union of all topic word ids.
  std::vector<std::size_t> distinct_ids() const;
};

/// Top `top_n` columns of every row of `beta` (K x V), by descending weight;
/// equal weights keep vocabulary order. Throws ConfigError if top_n > V or
/// top_n < 1, ShapeError if beta and vocab disagree.
TopicSet extract_topics(const Matrix& beta, const Vocabulary& vocab, int top_n = 10);
TopicSet extract_topics(const TopicModel& model, const Vocabulary& vocab, int top_n = 10);

struct CooccurrenceOptions {
  /// Vocabulary ids to track. Empty means the whole vocabulary.
  std::vector<std::size_t> words;
  /// Only documents of this partition are counted, if set.
  std::optional<Partition> partition;
  /// 0 picks hardware_concurrency.
  unsigned threads = 0;
};

/// Boolean sliding-window document frequencies. Windows of `window` tokens
/// slide with stride 1 over each document's token sequence (out-of-vocabulary
/// tokens keep their positions); a document shorter than the window is one
/// window. Single and joint counts are kept for the tracked words only.
class CooccurrenceCounts {
 public:
  CooccurrenceCounts(std::size_t vocab_size, std::vector<std::size_t> words, int window);

  int window() const { return window_; }
  std::uint64_t total_windows() const { return total_; }
  const std::vector<std::size_t>& words() const { return words_; }
  bool tracks(std::size_t word) const { return word < slot_.size() && slot_[word] >= 0; }

  /// Windows containing `word`. Throws ConfigError for an untracked word.
  std::uint64_t count(std::size_t word) const;
  /// Windows containing both words; joint(w, w) == count(w).
  std::uint64_t joint(std::size_t a, std::size_t b) const;

  /// Adds the windows of one document given as vocabulary ids
  /// (Vocabulary::npos for unknown tokens).
  void add_document(std::span<const std::size_t> ids);
  void merge(const CooccurrenceCounts& other);

 private:
  std::size_t pair_index(int a, int b) const;

  int window_;
  std::uint64_t total_ = 0;
  std::vector<std::size_t> words_;
  std::vector<int> slot_;  // vocab id -> slot or -1
  std::vector<std::uint64_t> single_;
  std::vector<std::uint64_t> pair_;  // upper triangle incl. diagonal
  std::vector<int> scratch_;
  std::vector<int> seen_;
};

/// Throws ConfigError if window < 1. Counting is split over documents and
/// merged in document order.
CooccurrenceCounts count_cooccurrence(const Corpus& corpus, const Vocabulary& vocab, int window,
                                      const CooccurrenceOptions& opts = {});

/// log((P(a,b) + eps) / (P(a) P(b))) / -log(P(a,b) + eps), clamped to
/// [-1, 1]. eps < 0 selects 1 / total_windows. Throws DataError if either
/// word occurs in no window.
double npmi_pair(const CooccurrenceCounts& counts, std::size_t a, std::size_t b, double eps = -1.0);

/// Mean NPMI over the unordered pairs of `topic` (>= 2 distinct words).
double npmi_topic(const CooccurrenceCounts& counts, std::span<const std::size_t> topic, double eps = -1.0);

/// Indirect cosine with one-set segmentation: v(w)_j = NPMI(w, w_j)^gamma
/// (self pairs included), v(W) = sum_w v(w), score = mean_w cos(v(w), v(W)).
/// A zero vector has cosine 0.
double cv_topic(const CooccurrenceCounts& counts, std::span<const std::size_t> topic, double gamma = 1.0,
                double eps = -1.0);
/// Same score from a precomputed symmetric N x N NPMI matrix.
double cv_from_npmi(const Matrix& npmi, double gamma = 1.0);

struct TopicMatch {
  std::size_t a = 0;
  std::size_t b = 0;
  std::vector<std::string> shared;  ///< in the order of topic a
};

struct OverlapReport {
  std::vector<TopicMatch> matches;  ///< ordered by topic a
  std::vector<std::size_t> unmatched_a;
  std::vector<std::size_t> unmatched_b;
};

/// Greedy one-to-one alignment: repeatedly pairs the two remaining topics
/// sharing the most words (ties: lowest a, then lowest b).
OverlapReport topic_overlap(const TopicSet& a, const TopicSet& b);

struct CoherenceConfig {
  int top_n = 10;
  int npmi_window = 10;
  int cv_window = 110;
  double gamma = 1.0;
  /// Reference documents; unset counts the whole corpus.
  std::optional<Partition> partition = Partition::train;
  unsigned threads = 0;

  void validate() const;
};

struct TopicScore {
  std::size_t topic_id = 0;
  std::vector<std::string> words;
  double npmi = 0.0;
  double cv = 0.0;
};

struct CoherenceReport {
  std::string model_tag;
  std::string dataset;
  int num_topics = 0;
  std::uint64_t seed = 0;
  std::vector<TopicScore> topics;
  double mean_npmi = 0.0;
  double mean_cv = 0.0;

  /// `model,K,seed,topic_id,npmi,cv`, one row per topic and a final row
  /// with topic_id "mean".
  void write_csv(std::ostream& out, bool header = true) const;
  /// One line per topic: id, then the words.
  void write_topics(std::ostream& out) const;
};

CoherenceReport evaluate_coherence(const TopicSet& topics, const Corpus& corpus, const Vocabulary& vocab,
                                   const CoherenceConfig& cfg);

}  // namespace wkd
