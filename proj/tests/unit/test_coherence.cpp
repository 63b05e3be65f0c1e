#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "synthetic.hpp"
#include "wkd/coherence.hpp"
#include "wkd/error.hpp"
#include "wkd/nn/rng.hpp"

using namespace wkd;

namespace {

constexpr std::size_t kOov = Vocabulary::npos;

// Every string of length 1..3 over {a, b, x}; x is out of vocabulary.
Corpus exhaustive_corpus() {
  std::string text;
  const char* letters[] = {"a", "b", "x"};
  for (int len = 1; len <= 3; ++len) {
    int total = 1;
    for (int i = 0; i < len; ++i) total *= 3;
    for (int code = 0; code < total; ++code) {
      int c = code;
      for (int i = 0; i < len; ++i, c /= 3) text += std::string(i ? " " : "") + letters[c % 3];
      text += "\ttrain\n";
    }
  }
  return parse_tsv(text);
}

Corpus random_corpus(std::uint64_t seed, int docs, int words) {
  nn::Rng rng(seed, "coherence-corpus");
  std::string text;
  for (int d = 0; d < docs; ++d) {
    const auto len = 1 + rng.below(25);
    for (std::uint64_t i = 0; i < len; ++i) {
      // skewed so that some pairs are frequent and some never meet
      const auto w = rng.below(static_cast<std::uint64_t>(words) + 2);
      text += (i ? " " : "") + (w >= static_cast<std::uint64_t>(words) ? std::string("oov") : "w" + std::to_string(w));
    }
    text += d % 7 == 6 ? "\ttest\n" : "\ttrain\n";
  }
  return parse_tsv(text);
}

wkd::testing::BruteWindows brute(const Corpus& c, const Vocabulary& v, int window, std::optional<Partition> part) {
  wkd::testing::BruteWindows b;
  for (const auto& d : c) {
    if (part && d.partition != *part) continue;
    std::vector<std::size_t> ids;
    for (const auto& t : d.tokens) ids.push_back(v.find(t));
    b.add(ids, window);
  }
  return b;
}

void compare_all(const Corpus& c, const Vocabulary& v, int window, std::optional<Partition> part) {
  CooccurrenceOptions opts;
  opts.partition = part;
  opts.threads = 1;
  const auto counts = count_cooccurrence(c, v, window, opts);
  const auto oracle = brute(c, v, window, part);
  ASSERT_EQ(counts.total_windows(), oracle.windows.size()) << "window " << window;
  const double n = static_cast<double>(oracle.windows.size());
  for (std::size_t a = 0; a < v.size(); ++a) {
    EXPECT_EQ(static_cast<double>(counts.count(a)), std::round(oracle.p(a) * n));
    for (std::size_t b = 0; b < v.size(); ++b) {
      EXPECT_EQ(static_cast<double>(counts.joint(a, b)), std::round(oracle.p(a, b) * n));
      if (counts.count(a) == 0 || counts.count(b) == 0) continue;
      const double got = npmi_pair(counts, a, b);
      EXPECT_NEAR(got, oracle.npmi(a, b), 1e-12);
      EXPECT_GE(got, -1.0);
      EXPECT_LE(got, 1.0);
    }
  }
  std::vector<std::size_t> topic;
  for (std::size_t a = 0; a < v.size() && topic.size() < 6; ++a)
    if (counts.count(a) > 0) topic.push_back(a);
  if (topic.size() >= 2) {
    EXPECT_NEAR(npmi_topic(counts, topic), oracle.npmi_topic(topic), 1e-12);
    EXPECT_NEAR(cv_topic(counts, topic), oracle.cv_topic(topic), 1e-12);
  }
}

}  // namespace

TEST(Cooccurrence, ExhaustiveCorpusMatchesEnumeration) {
  const auto c = exhaustive_corpus();
  ASSERT_EQ(c.size(), 39u);
  Vocabulary v({"a", "b"});
  for (int w : {1, 2, 3, 4, 10}) compare_all(c, v, w, std::nullopt);
}

TEST(Cooccurrence, RandomCorporaMatchEnumeration) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto c = random_corpus(seed, 50, 8);
    const auto v = build_vocab(c, 8);
    for (int w : {1, 2, 5, 10, 110}) {
      compare_all(c, v, w, std::nullopt);
      compare_all(c, v, w, Partition::train);
    }
  }
}

TEST(Cooccurrence, ThreadedCountsEqualSerial) {
  const auto c = random_corpus(9, 50, 8);
  const auto v = build_vocab(c, 8);
  CooccurrenceOptions one, many;
  one.threads = 1;
  many.threads = 4;
  many.words = one.words = {0, 2, 5};
  const auto a = count_cooccurrence(c, v, 4, one), b = count_cooccurrence(c, v, 4, many);
  EXPECT_EQ(a.total_windows(), b.total_windows());
  for (auto x : one.words)
    for (auto y : one.words) EXPECT_EQ(a.joint(x, y), b.joint(x, y));
  EXPECT_FALSE(a.tracks(1));
  EXPECT_THROW(a.count(1), ConfigError);
}

TEST(Cooccurrence, HandExamples) {
  Vocabulary v({"a", "b", "c"});
  {
    // a document shorter than the window is a single window
    CooccurrenceCounts cc(3, {0, 1, 2}, 10);
    const std::vector<std::size_t> doc{0, 1};
    cc.add_document(doc);
    EXPECT_EQ(cc.total_windows(), 1u);
    EXPECT_EQ(cc.joint(0, 1), 1u);
    // P(a,b) + eps = 2 saturates
    EXPECT_EQ(npmi_pair(cc, 0, 1), 1.0);
  }
  {
    CooccurrenceCounts cc(3, {0, 1, 2}, 2);
    const std::vector<std::size_t> d1{0, 1, 0}, d2{2, 2, 2};
    cc.add_document(d1);
    cc.add_document(d2);
    // windows {a,b} {b,a} {c} {c}
    EXPECT_EQ(cc.total_windows(), 4u);
    EXPECT_EQ(cc.count(0), 2u);
    EXPECT_EQ(cc.joint(0, 1), 2u);
    EXPECT_EQ(cc.joint(0, 2), 0u);
    // log((0 + 1/4) / (1/2 * 1/2)) = 0
    EXPECT_NEAR(npmi_pair(cc, 0, 2), 0.0, 1e-15);
    // raw value log(3) / -log(0.75) > 1 is clamped
    EXPECT_EQ(npmi_pair(cc, 0, 1), 1.0);
  }
  {
    // out-of-vocabulary tokens still occupy positions
    CooccurrenceCounts cc(3, {0, 1}, 2);
    const std::vector<std::size_t> doc{0, kOov, 1};
    cc.add_document(doc);
    EXPECT_EQ(cc.total_windows(), 2u);
    EXPECT_EQ(cc.joint(0, 1), 0u);
  }
}

TEST(Cooccurrence, ZeroCountWordIsAnError) {
  CooccurrenceCounts cc(3, {0, 1}, 2);
  const std::vector<std::size_t> doc{0, 0};
  cc.add_document(doc);
  EXPECT_THROW(npmi_pair(cc, 0, 1), DataError);
  EXPECT_THROW(CooccurrenceCounts(3, {0}, 0), ConfigError);
}

TEST(Cv, IdenticalWordsScoreOne) {
  Matrix m = Matrix::Constant(3, 3, 0.4);
  EXPECT_NEAR(cv_from_npmi(m), 1.0, 1e-15);
  EXPECT_EQ(cv_from_npmi(Matrix::Zero(3, 3)), 0.0);
  EXPECT_THROW(cv_from_npmi(Matrix::Zero(1, 1)), ShapeError);
}

TEST(Cv, GammaIsSignPreservingPower) {
  Matrix m(2, 2);
  m << 1.0, -0.5, -0.5, 1.0;
  Matrix p(2, 2);
  p << 1.0, -0.25, -0.25, 1.0;
  EXPECT_NEAR(cv_from_npmi(m, 2.0), cv_from_npmi(p, 1.0), 1e-15);
}

TEST(Topics, ExtractOrdersByWeightThenIndex) {
  Vocabulary v({"a", "b", "c", "d"});
  Matrix beta(2, 4);
  beta << 0.1, 0.5, 0.5, 0.2, 3.0, -1.0, 3.0, 3.0;
  const auto t = extract_topics(beta, v, 3);
  EXPECT_EQ(t.words[0], (std::vector<std::string>{"b", "c", "d"}));
  EXPECT_EQ(t.ids[1], (std::vector<std::size_t>{0, 2, 3}));
  EXPECT_EQ(t.distinct_ids(), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_THROW(extract_topics(beta, v, 5), ConfigError);
  EXPECT_THROW(extract_topics(beta, v, 0), ConfigError);
  EXPECT_THROW(extract_topics(beta, Vocabulary({"a"}), 1), ShapeError);
}

TEST(Topics, OverlapGreedyAlignment) {
  TopicSet a, b;
  a.words = {{"x", "y", "z"}, {"p", "q", "r"}, {"m", "n", "o"}};
  b.words = {{"q", "r", "s"}, {"x", "y", "q"}};
  a.ids = {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}};
  b.ids = {{4, 5, 9}, {0, 1, 4}};
  const auto r = topic_overlap(a, b);
  ASSERT_EQ(r.matches.size(), 2u);
  EXPECT_EQ(r.matches[0].a, 0u);
  EXPECT_EQ(r.matches[0].b, 1u);
  EXPECT_EQ(r.matches[0].shared, (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(r.matches[1].a, 1u);
  EXPECT_EQ(r.matches[1].b, 0u);
  EXPECT_EQ(r.unmatched_a, (std::vector<std::size_t>{2}));
  EXPECT_TRUE(r.unmatched_b.empty());
}

TEST(Evaluate, ScoresUseTrainPartitionAndBothWindows) {
  const auto c = random_corpus(3, 50, 8);
  const auto v = build_vocab(c, 8);
  Matrix beta = Matrix::Zero(2, 8);
  for (int j = 0; j < 8; ++j) {
    beta(0, j) = -j;
    beta(1, j) = j;
  }
  CoherenceConfig cfg;
  cfg.top_n = 4;
  cfg.npmi_window = 3;
  cfg.cv_window = 7;
  cfg.threads = 2;
  const auto topics = extract_topics(beta, v, 4);
  const auto rep = evaluate_coherence(topics, c, v, cfg);
  const auto bn = brute(c, v, 3, Partition::train), bc = brute(c, v, 7, Partition::train);
  double mean = 0;
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(rep.topics[k].npmi, bn.npmi_topic(topics.ids[k]), 1e-12);
    EXPECT_NEAR(rep.topics[k].cv, bc.cv_topic(topics.ids[k]), 1e-12);
    mean += rep.topics[k].npmi / 2;
  }
  EXPECT_NEAR(rep.mean_npmi, mean, 1e-15);

  std::ostringstream csv;
  auto named = rep;
  named.model_tag = "S";
  named.seed = 4;
  named.write_csv(csv);
  const auto text = csv.str();
  EXPECT_EQ(text.rfind("model,K,seed,topic_id,npmi,cv\nS,2,4,0,", 0), 0u);
  EXPECT_NE(text.find("\nS,2,4,mean,"), std::string::npos);
}

TEST(Evaluate, PlantedTopicsBeatShuffledOnes) {
  wkd::testing::SyntheticSpec spec;
  spec.docs = 200;
  const auto c = wkd::testing::synthetic_corpus(spec);
  const auto v = build_vocab(c, 200);
  // planted topic 0 is words w000..w009; a mixed topic takes one word per block
  TopicSet planted, mixed;
  planted.words.resize(1);
  planted.ids.resize(1);
  mixed.words.resize(1);
  mixed.ids.resize(1);
  for (int i = 0; i < 10; ++i) {
    char p[8], m[8];
    std::snprintf(p, sizeof p, "w%03d", i);
    std::snprintf(m, sizeof m, "w%03d", (i % 5) * 30 + i / 5);
    planted.words[0].push_back(p);
    planted.ids[0].push_back(v.find(p));
    mixed.words[0].push_back(m);
    mixed.ids[0].push_back(v.find(m));
  }
  CoherenceConfig cfg;
  const auto good = evaluate_coherence(planted, c, v, cfg), bad = evaluate_coherence(mixed, c, v, cfg);
  EXPECT_GT(good.mean_npmi, bad.mean_npmi + 0.1);
  EXPECT_GT(good.mean_cv, bad.mean_cv);
}
