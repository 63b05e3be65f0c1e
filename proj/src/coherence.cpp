#include "wkd/coherence.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <thread>

#include "wkd/error.hpp"

namespace wkd {

std::vector<std::size_t> TopicSet::distinct_ids() const {
  std::vector<std::size_t> all;
  for (const auto& t : ids) all.insert(all.end(), t.begin(), t.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}

TopicSet extract_topics(const Matrix& beta, const Vocabulary& vocab, int top_n) {
  const auto v = static_cast<Eigen::Index>(vocab.size());
  if (beta.cols() != v) {
    throw ShapeError("beta has " + std::to_string(beta.cols()) + " columns, vocabulary has " + std::to_string(v));
  }
  if (top_n < 1) throw ConfigError("top_n must be >= 1");
  if (top_n > v) throw ConfigError("top_n " + std::to_string(top_n) + " exceeds vocabulary size " + std::to_string(v));

  TopicSet set;
  std::vector<std::size_t> order(static_cast<std::size_t>(v));
  for (Eigen::Index k = 0; k < beta.rows(); ++k) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto row = beta.row(k);
    std::partial_sort(order.begin(), order.begin() + top_n, order.end(), [&](std::size_t x, std::size_t y) {
      const double bx = row(static_cast<Eigen::Index>(x));
      const double by = row(static_cast<Eigen::Index>(y));
      return bx != by ? bx > by : x < y;
    });
    std::vector<std::size_t> ids(order.begin(), order.begin() + top_n);
    std::vector<std::string> words;
    for (auto id : ids) words.push_back(vocab.word(id));
    set.ids.push_back(std::move(ids));
    set.words.push_back(std::move(words));
  }
  return set;
}

TopicSet extract_topics(const TopicModel& model, const Vocabulary& vocab, int top_n) {
  return extract_topics(model.beta(), vocab, top_n);
}

CooccurrenceCounts::CooccurrenceCounts(std::size_t vocab_size, std::vector<std::size_t> words, int window)
    : window_(window), words_(std::move(words)), slot_(vocab_size, -1) {
  if (window < 1) throw ConfigError("window must be >= 1");
  std::sort(words_.begin(), words_.end());
  words_.erase(std::unique(words_.begin(), words_.end()), words_.end());
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i] >= vocab_size) throw ConfigError("tracked word id out of range");
    slot_[words_[i]] = static_cast<int>(i);
  }
  const auto n = words_.size();
  single_.assign(n, 0);
  pair_.assign(n * (n + 1) / 2, 0);
  seen_.assign(n, -1);
}

std::size_t CooccurrenceCounts::pair_index(int a, int b) const {
  if (a > b) std::swap(a, b);
  const auto n = words_.size();
  const auto ua = static_cast<std::size_t>(a);
  return ua * n - ua * (ua - 1) / 2 + static_cast<std::size_t>(b - a);
}

std::uint64_t CooccurrenceCounts::count(std::size_t word) const {
  if (!tracks(word)) throw ConfigError("word id " + std::to_string(word) + " is not tracked");
  return single_[static_cast<std::size_t>(slot_[word])];
}

std::uint64_t CooccurrenceCounts::joint(std::size_t a, std::size_t b) const {
  if (!tracks(a) || !tracks(b)) throw ConfigError("word pair is not tracked");
  return pair_[pair_index(slot_[a], slot_[b])];
}

void CooccurrenceCounts::add_document(std::span<const std::size_t> ids) {
  const std::size_t len = ids.size();
  const std::size_t w = static_cast<std::size_t>(window_);
  const std::size_t n_windows = len <= w ? 1 : len - w + 1;
  const std::size_t span_len = std::min(len, w);
  for (std::size_t start = 0; start < n_windows; ++start) {
    ++total_;
    // distinct tracked slots in this window; seen_ is stamped with the
    // running window number so it never needs clearing
    scratch_.clear();
    const int stamp = static_cast<int>(total_ & 0x3fffffff);
    for (std::size_t i = start; i < start + span_len; ++i) {
      const auto id = ids[i];
      if (id >= slot_.size()) continue;
      const int s = slot_[id];
      if (s < 0 || seen_[static_cast<std::size_t>(s)] == stamp) continue;
      seen_[static_cast<std::size_t>(s)] = stamp;
      scratch_.push_back(s);
    }
    for (std::size_t i = 0; i < scratch_.size(); ++i) {
      ++single_[static_cast<std::size_t>(scratch_[i])];
      for (std::size_t j = i; j < scratch_.size(); ++j) ++pair_[pair_index(scratch_[i], scratch_[j])];
    }
  }
}

void CooccurrenceCounts::merge(const CooccurrenceCounts& other) {
  if (other.words_ != words_ || other.window_ != window_) throw ConfigError("cannot merge unrelated counts");
  total_ += other.total_;
  for (std::size_t i = 0; i < single_.size(); ++i) single_[i] += other.single_[i];
  for (std::size_t i = 0; i < pair_.size(); ++i) pair_[i] += other.pair_[i];
}

CooccurrenceCounts count_cooccurrence(const Corpus& corpus, const Vocabulary& vocab, int window,
                                      const CooccurrenceOptions& opts) {
  if (window < 1) throw ConfigError("window must be >= 1");
  std::vector<std::size_t> words = opts.words;
  if (words.empty()) {
    words.resize(vocab.size());
    std::iota(words.begin(), words.end(), std::size_t{0});
  }

  std::vector<const Document*> docs;
  for (const auto& d : corpus) {
    if (!opts.partition || d.partition == *opts.partition) docs.push_back(&d);
  }

  unsigned threads = opts.threads ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, docs.size() / 64)));

  std::vector<CooccurrenceCounts> parts(threads, CooccurrenceCounts(vocab.size(), words, window));
  auto work = [&](unsigned t) {
    const std::size_t lo = docs.size() * t / threads;
    const std::size_t hi = docs.size() * (t + 1) / threads;
    std::vector<std::size_t> ids;
    for (std::size_t i = lo; i < hi; ++i) {
      ids.clear();
      for (const auto& tok : docs[i]->tokens) ids.push_back(vocab.find(tok));
      parts[t].add_document(ids);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (unsigned t = 1; t < threads; ++t) parts[0].merge(parts[t]);
  return std::move(parts[0]);
}

double npmi_pair(const CooccurrenceCounts& counts, std::size_t a, std::size_t b, double eps) {
  const double n = static_cast<double>(counts.total_windows());
  const auto ca = counts.count(a);
  const auto cb = counts.count(b);
  if (ca == 0 || cb == 0) {
    throw DataError("word id " + std::to_string(ca == 0 ? a : b) + " occurs in no window");
  }
  if (eps < 0) eps = 1.0 / n;
  const double pj = static_cast<double>(counts.joint(a, b)) / n + eps;
  const double pa = static_cast<double>(ca) / n;
  const double pb = static_cast<double>(cb) / n;
  const double denom = -std::log(pj);
  // joint mass saturated by the smoothing term: as associated as it gets
  if (!(denom > 0.0)) return 1.0;
  const double v = std::log(pj / (pa * pb)) / denom;
  return std::clamp(v, -1.0, 1.0);
}

double npmi_topic(const CooccurrenceCounts& counts, std::span<const std::size_t> topic, double eps) {
  if (topic.size() < 2) throw ConfigError("a topic needs at least 2 words");
  double acc = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < topic.size(); ++i) {
    for (std::size_t j = i + 1; j < topic.size(); ++j) {
      acc += npmi_pair(counts, topic[i], topic[j], eps);
      ++pairs;
    }
  }
  return acc / static_cast<double>(pairs);
}

double cv_from_npmi(const Matrix& npmi, double gamma) {
  const auto n = npmi.rows();
  if (n < 2 || npmi.cols() != n) throw ShapeError("cv needs a square NPMI matrix of at least 2 words");
  Matrix v(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double x = npmi(i, j);
      // sign-preserving power; identical to x^gamma for gamma = 1
      v(i, j) = gamma == 1.0 ? x : std::copysign(std::pow(std::abs(x), gamma), x);
    }
  }
  const RowVector total = v.colwise().sum();
  const double total_norm = total.norm();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ni = v.row(i).norm();
    if (ni == 0.0 || total_norm == 0.0) continue;
    acc += v.row(i).dot(total) / (ni * total_norm);
  }
  return acc / static_cast<double>(n);
}

double cv_topic(const CooccurrenceCounts& counts, std::span<const std::size_t> topic, double gamma, double eps) {
  if (topic.size() < 2) throw ConfigError("a topic needs at least 2 words");
  const auto n = static_cast<Eigen::Index>(topic.size());
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      m(i, j) = m(j, i) = npmi_pair(counts, topic[static_cast<std::size_t>(i)], topic[static_cast<std::size_t>(j)], eps);
    }
  }
  return cv_from_npmi(m, gamma);
}

OverlapReport topic_overlap(const TopicSet& a, const TopicSet& b) {
  const auto na = a.size();
  const auto nb = b.size();
  std::vector<std::vector<std::size_t>> shared(na, std::vector<std::size_t>(nb, 0));
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      for (const auto& w : a.words[i]) {
        if (std::find(b.words[j].begin(), b.words[j].end(), w) != b.words[j].end()) ++shared[i][j];
      }
    }
  }
  std::vector<bool> used_a(na, false), used_b(nb, false);
  OverlapReport rep;
  for (std::size_t round = 0; round < std::min(na, nb); ++round) {
    std::size_t bi = 0, bj = 0;
    bool found = false;
    for (std::size_t i = 0; i < na; ++i) {
      if (used_a[i]) continue;
      for (std::size_t j = 0; j < nb; ++j) {
        if (used_b[j]) continue;
        if (!found || shared[i][j] > shared[bi][bj]) {
          bi = i;
          bj = j;
          found = true;
        }
      }
    }
    used_a[bi] = used_b[bj] = true;
    TopicMatch m{bi, bj, {}};
    for (const auto& w : a.words[bi]) {
      if (std::find(b.words[bj].begin(), b.words[bj].end(), w) != b.words[bj].end()) m.shared.push_back(w);
    }
    rep.matches.push_back(std::move(m));
  }
  std::sort(rep.matches.begin(), rep.matches.end(), [](const auto& x, const auto& y) { return x.a < y.a; });
  for (std::size_t i = 0; i < na; ++i) {
    if (!used_a[i]) rep.unmatched_a.push_back(i);
  }
  for (std::size_t j = 0; j < nb; ++j) {
    if (!used_b[j]) rep.unmatched_b.push_back(j);
  }
  return rep;
}

void CoherenceConfig::validate() const {
  if (top_n < 2) throw ConfigError("top_n must be >= 2");
  if (npmi_window < 1 || cv_window < 1) throw ConfigError("coherence windows must be >= 1");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
}

void CoherenceReport::write_csv(std::ostream& out, bool header) const {
  const auto old = out.precision(10);
  if (header) out << "model,K,seed,topic_id,npmi,cv\n";
  for (const auto& t : topics) {
    out << model_tag << ',' << num_topics << ',' << seed << ',' << t.topic_id << ',' << t.npmi << ',' << t.cv << '\n';
  }
  out << model_tag << ',' << num_topics << ',' << seed << ",mean," << mean_npmi << ',' << mean_cv << '\n';
  out.precision(old);
}

void CoherenceReport::write_topics(std::ostream& out) const {
  for (const auto& t : topics) {
    out << t.topic_id;
    for (const auto& w : t.words) out << ' ' << w;
    out << '\n';
  }
}

CoherenceReport evaluate_coherence(const TopicSet& topics, const Corpus& corpus, const Vocabulary& vocab,
                                   const CoherenceConfig& cfg) {
  cfg.validate();
  if (topics.size() == 0) throw ConfigError("no topics to evaluate");
  CooccurrenceOptions opts;
  opts.words = topics.distinct_ids();
  opts.partition = cfg.partition;
  opts.threads = cfg.threads;
  const auto npmi_counts = count_cooccurrence(corpus, vocab, cfg.npmi_window, opts);
  const auto cv_counts = cfg.cv_window == cfg.npmi_window ? npmi_counts
                                                          : count_cooccurrence(corpus, vocab, cfg.cv_window, opts);
  if (npmi_counts.total_windows() == 0) throw DataError("reference corpus has no documents");

  CoherenceReport rep;
  rep.num_topics = static_cast<int>(topics.size());
  for (std::size_t k = 0; k < topics.size(); ++k) {
    TopicScore s;
    s.topic_id = k;
    s.words = topics.words[k];
    s.npmi = npmi_topic(npmi_counts, topics.ids[k]);
    s.cv = cv_topic(cv_counts, topics.ids[k], cfg.gamma);
    rep.mean_npmi += s.npmi;
    rep.mean_cv += s.cv;
    rep.topics.push_back(std::move(s));
  }
  rep.mean_npmi /= static_cast<double>(topics.size());
  rep.mean_cv /= static_cast<double>(topics.size());
  return rep;
}

}  // namespace wkd
