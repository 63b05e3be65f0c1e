#pragma once

#include <cstdio>
#include <set>

#include "synthetic.hpp"
#include "wkd/distill.hpp"
#include "wkd/experiment.hpp"

namespace wkd::testing {

struct SmallData {
  Corpus corpus;
  Vocabulary vocab;
  TrainingSet data;
};

// Synthetic corpus with a full-size vocabulary and synthetic embeddings.
inline SmallData small_data(int docs, int vocab, int student_dim, int teacher_dim, std::uint64_t seed = 1,
                            int min_len = 10, int max_len = 20) {
  SyntheticSpec spec;
  spec.docs = docs;
  spec.vocab = vocab;
  spec.topics = 3;
  spec.background = vocab / 5;
  spec.min_len = min_len;
  spec.max_len = max_len;
  spec.seed = seed;
  SmallData out;
  // tiny corpora miss words; append each missing one to some document so the
  // vocabulary has exactly `vocab` entries
  auto docs_v = synthetic_corpus(spec).documents();
  std::set<std::string> seen;
  for (const auto& d : docs_v) seen.insert(d.tokens.begin(), d.tokens.end());
  for (int i = 0; i < vocab; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "w%03d", i);
    if (!seen.count(name)) docs_v[static_cast<std::size_t>(i % docs)].tokens.push_back(name);
  }
  out.corpus = Corpus(std::move(docs_v));
  out.vocab = build_vocab(out.corpus, static_cast<std::size_t>(vocab));
  out.data.counts = bow_counts(out.corpus, out.vocab);
  out.data.bow = l1_normalize_rows(out.data.counts);
  out.data.ctx = to_matrix(synth_embeddings(out.corpus, static_cast<std::size_t>(student_dim), seed));
  out.data.teacher_ctx = to_matrix(synth_embeddings(out.corpus, static_cast<std::size_t>(teacher_dim), seed + 100));
  return out;
}

inline ModelConfig tiny_config(Architecture arch, int k, int v, int ctx, std::vector<int> hidden = {8}) {
  ModelConfig c;
  c.architecture = arch;
  c.num_topics = k;
  c.vocab_size = v;
  c.ctx_dim = ctx;
  c.hidden_sizes = std::move(hidden);
  return c;
}

}  // namespace wkd::testing
