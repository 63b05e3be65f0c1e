// Acceptance checks: one PASS/FAIL/SKIP line per criterion, exit status 1 if
// any check fails.
//
//   wkd_acceptance [--only NAME]...
//
// The real-data check runs when WKD_REAL_DATA points at a directory holding
// 20ng.tsv, teacher.emb (768-d) and student.emb (384-d); otherwise it is
// skipped.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "synthetic.hpp"
#include "wkd/coherence.hpp"
#include "wkd/distill.hpp"
#include "wkd/error.hpp"
#include "wkd/experiment.hpp"

using namespace wkd;
using Clock = std::chrono::steady_clock;

namespace {

enum class Outcome { pass, fail, skip };

struct Result {
  Outcome outcome;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

Matrix random_matrix(int r, int c, nn::Rng& rng, double lo, double hi) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * rng.uniform();
  return m;
}

// ---------------------------------------------------------------------------

Result w2_oracle() {
  const auto t0 = Clock::now();
  double worst = 0;
  bool zero_ok = true;
  for (int k : {1, 5, 20, 100}) {
    nn::Rng rng(7, "w2-acceptance", static_cast<std::uint64_t>(k));
    for (int i = 0; i < 1000; ++i) {
      const Matrix mu = random_matrix(2, k, rng, -3, 3);
      const Matrix lv = random_matrix(2, k, rng, -4, 2);
      Eigen::MatrixXd c1 = Eigen::MatrixXd::Zero(k, k), c2 = c1;
      for (int j = 0; j < k; ++j) {
        c1(j, j) = std::exp(lv(0, j));
        c2(j, j) = std::exp(lv(1, j));
      }
      const RowVector m1 = mu.row(0), m2 = mu.row(1), l1 = lv.row(0), l2 = lv.row(1);
      const double diag = w2_squared_diag(m1, l1, m2, l2);
      const double full = w2_squared_full(m1.transpose(), c1, m2.transpose(), c2);
      worst = std::max(worst, std::fabs(diag - full));
      if (i % 100 == 0) {
        zero_ok = zero_ok && w2_squared_diag(m1, l1, m1, l1) == 0.0 &&
                  w2_squared_full(m1.transpose(), c1, m1.transpose(), c1) == 0.0;
      }
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = worst < 1e-8 && zero_ok && secs < 10;
  return {ok ? Outcome::pass : Outcome::fail, "max |diag - full| = " + fmt(worst, 3) + ", identical inputs " +
                                                  (zero_ok ? "exactly 0" : "NOT 0") + ", " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------------------

Result gradient_suite() {
  const auto t0 = Clock::now();
  testing::SyntheticSpec spec;
  spec.docs = 12;
  spec.vocab = 50;
  spec.topics = 3;
  spec.background = 10;
  spec.min_len = 8;
  spec.max_len = 20;
  const auto corpus = testing::synthetic_corpus(spec);
  const auto vocab = build_vocab(corpus, 50);
  const Matrix counts = bow_counts(corpus, vocab);
  const Matrix bow = l1_normalize_rows(counts);
  const Matrix sctx = to_matrix(synth_embeddings(corpus, 6, 1));
  const Matrix tctx = to_matrix(synth_embeddings(corpus, 12, 2));
  const int v = static_cast<int>(vocab.size());
  const int k = 5;
  const auto prior = laplace_prior(k, 1.0 / k);
  nn::Rng nrng(3, "noise");
  const Matrix noise = random_matrix(static_cast<int>(counts.rows()), k, nrng, -2, 2);

  double worst = 0;
  std::size_t groups = 0;
  std::set<std::string> names;

  auto vae_check = [&](TopicModel& m, const Matrix& ctx, bool with_kd, const FrozenTeacher* teacher) {
    Batch batch{counts, bow, ctx};
    FrozenTeacher::Outputs t_out;
    if (teacher) t_out = teacher->infer(bow, tctx);
    auto run = [&](bool grad) {
      nn::Rng drop(5, "dropout");
      TopicModel::ForwardOptions o;
      o.mode = nn::Mode::train;
      o.dropout_rng = &drop;
      o.noise = &noise;
      o.update_norm_stats = false;
      nn::Tape tape;
      auto vt = vae_terms(tape, m, batch, prior, o);
      nn::Var loss = vt.total;
      if (with_kd) {
        auto w2 = w2_squared_diag(t_out.mu, t_out.log_var, vt.outputs.mu, vt.outputs.log_var);
        auto ce = soft_ce(t_out.logits, vt.outputs.logits, 2.0);
        loss = 0.5 * vt.total + 0.5 * (w2 + 4.0 * ce);
      }
      if (grad) tape.backward(loss);
      return loss.scalar();
    };
    // one group at a time so the worst error is per parameter tensor
    for (auto* p : m.parameters()) {
      const auto r = testing::check_gradients({p}, [&] { return run(false); }, [&] { run(true); }, 1e-4, 60);
      worst = std::max(worst, r.worst);
      ++groups;
      names.insert(p->name);
    }
  };

  ModelConfig tc;
  tc.architecture = Architecture::combined;
  tc.num_topics = k;
  tc.vocab_size = v;
  tc.ctx_dim = 12;
  tc.hidden_sizes = {10, 8};
  TopicModel teacher(tc, 1);
  vae_check(teacher, tctx, false, nullptr);

  ModelConfig sc = tc;
  sc.architecture = Architecture::zeroshot;
  sc.ctx_dim = 6;
  sc.hidden_sizes = {10};
  TopicModel student(sc, 2);
  vae_check(student, sctx, false, nullptr);

  FrozenTeacher ft(TopicModel(tc, 3));
  TopicModel student2(sc, 4);
  vae_check(student2, sctx, true, &ft);

  const double secs = seconds_since(t0);
  const bool covers = names.count("ctx_projection.weight") && names.count("beta") && names.count("mu_head.weight") &&
                      names.count("log_var_head.bias") && names.count("hidden.0.weight");
  const bool ok = worst < 1e-3 && covers && secs < 60;
  return {ok ? Outcome::pass : Outcome::fail, "max relative error " + fmt(worst, 3) + " over " +
                                                  std::to_string(groups) + " parameter tensors (VAE teacher, VAE " +
                                                  "student, KD student), " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------------------

Result loss_identities() {
  testing::SyntheticSpec spec;
  spec.docs = 80;
  spec.vocab = 60;
  spec.topics = 3;
  spec.background = 10;
  spec.min_len = 10;
  spec.max_len = 20;
  const auto corpus = testing::synthetic_corpus(spec);
  const auto vocab = build_vocab(corpus, 60);
  TrainingSet data;
  data.counts = bow_counts(corpus, vocab);
  data.bow = l1_normalize_rows(data.counts);
  data.ctx = to_matrix(synth_embeddings(corpus, 8, 1));
  data.teacher_ctx = to_matrix(synth_embeddings(corpus, 16, 2));
  const int v = static_cast<int>(vocab.size());
  std::vector<std::string> broken;

  // value-level identities on random inputs
  nn::Rng rng(11, "identities");
  for (int trial = 0; trial < 200; ++trial) {
    GaussianPosterior t{random_matrix(4, 5, rng, -2, 2), random_matrix(4, 5, rng, -2, 2)};
    GaussianPosterior s{random_matrix(4, 5, rng, -2, 2), random_matrix(4, 5, rng, -2, 2)};
    const Matrix tl = random_matrix(4, 9, rng, -3, 3), sl = random_matrix(4, 9, rng, -3, 3);
    const double temp = 0.5 + 4 * rng.uniform(), alpha = rng.uniform();
    const auto kd = kd_loss(t, s, tl, sl, temp);
    if (kd.total != kd.w2 + temp * temp * kd.ce) broken.push_back("kd_total");
    LossBreakdown vae;
    vae.nll = 10 * rng.uniform();
    vae.kl = rng.uniform();
    vae.total_vae = vae.nll + vae.kl;
    if (total_student_loss(vae, kd.total, alpha) != (1 - alpha) * vae.total_vae + alpha * kd.total)
      broken.push_back("total");
  }
  ModelConfig sc;
  sc.num_topics = 4;
  sc.vocab_size = v;
  sc.ctx_dim = 8;
  sc.hidden_sizes = {16};
  {
    TopicModel m(sc, 1);
    nn::Rng nr(2, "noise");
    const Matrix noise = random_matrix(static_cast<int>(data.size()), 4, nr, -2, 2);
    const auto l = vae_loss(m, Batch{data.counts, data.bow, data.ctx}, laplace_prior(4, 0.25), noise);
    if (l.total_vae != l.nll + l.kl) broken.push_back("total_vae");
  }

  // alpha = 0 student follows the plain student bit for bit
  ModelConfig tc = sc;
  tc.architecture = Architecture::combined;
  tc.ctx_dim = 16;
  TopicModel tm(tc, 5);
  TrainConfig train;
  train.epochs = 20;
  train.batch_size = 16;
  train.seed = 5;
  TrainingSet tdata = data;
  tdata.ctx = data.teacher_ctx;
  train_vae(tm, tdata, train);
  FrozenTeacher teacher(std::move(tm));
  TopicModel plain(sc, 6), kd0(sc, 6);
  train.seed = 6;
  const auto h1 = train_vae(plain, data, train);
  KdConfig k0;
  k0.alpha = 0.0;
  const auto h2 = train_student_with_kd(teacher, kd0, data, train, k0);
  bool same_history = h1.size() == h2.size();
  for (std::size_t e = 0; same_history && e < h1.size(); ++e)
    same_history = h1[e].loss.nll == h2[e].loss.nll && h1[e].loss.kl == h2[e].loss.kl &&
                   h1[e].loss.total_vae == h2[e].loss.total_vae;
  if (plain.checksum() != kd0.checksum() || !same_history) broken.push_back("alpha=0 trajectory");

  if (broken.empty())
    return {Outcome::pass, "exact for total_vae, kd_total, total over 200 random draws; alpha=0 student checksum "
                           "identical after 20 epochs"};
  std::string s;
  for (const auto& b : broken) s += (s.empty() ? "" : ", ") + b;
  return {Outcome::fail, "violated: " + s};
}

// ---------------------------------------------------------------------------

Result coherence_oracles() {
  double worst = 0;
  bool in_range = true;
  std::size_t corpora = 0;
  auto check = [&](const Corpus& c, const Vocabulary& v, int window) {
    ++corpora;
    testing::BruteWindows b;
    for (const auto& d : c) {
      std::vector<std::size_t> ids;
      for (const auto& t : d.tokens) ids.push_back(v.find(t));
      b.add(ids, window);
    }
    CooccurrenceOptions opts;
    opts.threads = 1;
    const auto counts = count_cooccurrence(c, v, window, opts);
    const double n = static_cast<double>(b.windows.size());
    worst = std::max(worst, std::fabs(static_cast<double>(counts.total_windows()) - n));
    std::vector<std::size_t> live;
    for (std::size_t a = 0; a < v.size(); ++a) {
      worst = std::max(worst, std::fabs(static_cast<double>(counts.count(a)) / n - b.p(a)));
      if (counts.count(a) > 0) live.push_back(a);
      for (std::size_t x = 0; x < v.size(); ++x) {
        worst = std::max(worst, std::fabs(static_cast<double>(counts.joint(a, x)) / n - b.p(a, x)));
      }
    }
    for (auto a : live)
      for (auto x : live) {
        const double got = npmi_pair(counts, a, x);
        in_range = in_range && got >= -1.0 && got <= 1.0;
        worst = std::max(worst, std::fabs(got - b.npmi(a, x)));
      }
    if (live.size() >= 2) {
      worst = std::max(worst, std::fabs(npmi_topic(counts, live) - b.npmi_topic(live)));
      worst = std::max(worst, std::fabs(cv_topic(counts, live) - b.cv_topic(live)));
    }
  };

  // every string of length <= 3 over {a, b, x} (x out of vocabulary)
  {
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
    const auto corpus = parse_tsv(text);
    for (int w : {1, 2, 3, 10}) check(corpus, Vocabulary({"a", "b"}), w);
  }
  // random corpora of up to 50 documents
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    nn::Rng rng(seed, "acceptance-corpus");
    std::string text;
    const auto docs = 5 + rng.below(46);
    for (std::uint64_t d = 0; d < docs; ++d) {
      const auto len = 1 + rng.below(30);
      for (std::uint64_t i = 0; i < len; ++i) {
        const auto w = rng.below(10);
        text += (i ? " " : "") + (w >= 8 ? std::string("oov") : "w" + std::to_string(w));
      }
      text += "\ttrain\n";
    }
    const auto corpus = parse_tsv(text);
    const auto vocab = build_vocab(corpus, 8);
    for (int w : {2, 5, 10, 110}) check(corpus, vocab, w);
  }
  const bool ok = worst <= 1e-12 && in_range;
  return {ok ? Outcome::pass : Outcome::fail, "max deviation " + fmt(worst, 3) + " over " + std::to_string(corpora) +
                                                  " corpus/window pairs; NPMI " +
                                                  (in_range ? "within" : "OUTSIDE") + " [-1, 1]"};
}

// ---------------------------------------------------------------------------

Result compression_band() {
  bool ok = true;
  double lo = 1, hi = 0;
  for (const auto& p : teacher_depth_presets()) {
    const auto t = TopicModel::zeros(teacher_model_config(p.k, 2000, 768, p.depth)).count_parameters();
    const auto s = TopicModel::zeros(student_model_config(p.k, 2000, 384)).count_parameters();
    const double c = compression(t, s);
    lo = std::min(lo, c);
    hi = std::max(hi, c);
    ok = ok && c >= 0.35 && c <= 0.60;
  }
  return {ok ? Outcome::pass : Outcome::fail, "byte reduction " + fmt(100 * lo, 3) + "% to " + fmt(100 * hi, 3) +
                                                  "% over " + std::to_string(teacher_depth_presets().size()) +
                                                  " presets"};
}

// ---------------------------------------------------------------------------
// Synthetic distillation: 500 documents from 5 planted topics, V = 200,
// synthetic embeddings of width 64 (teacher) and 16 (student).

struct SyntheticSetup {
  int groups = 5;
  int min_len = 8;
  int max_len = 16;
  double doc_alpha = 0.5;
  int epochs = 100;
  double alpha = 0.5;
  double temperature = 2.0;
};

struct GroupResult {
  std::uint64_t seed = 0;
  double teacher = 0, s = 0, skd = 0, ce_only = 0, w2_only = 0;
};

struct SyntheticOutcome {
  std::vector<GroupResult> groups;
  double seconds_first_group = 0;
  double seconds = 0;
};

const SyntheticOutcome& synthetic_runs() {
  static SyntheticOutcome out = [] {
    const SyntheticSetup setup;
    SyntheticOutcome r;
    const auto t0 = Clock::now();
    for (int g = 0; g < setup.groups; ++g) {
      const std::uint64_t seed = 1000 * static_cast<std::uint64_t>(g + 1);
      testing::SyntheticSpec spec;
      spec.docs = 500;
      spec.topics = 5;
      spec.vocab = 200;
      spec.min_len = setup.min_len;
      spec.max_len = setup.max_len;
      spec.doc_alpha = setup.doc_alpha;
      spec.seed = seed;
      const auto corpus = testing::synthetic_corpus(spec);
      auto vocab = build_vocab(corpus, 200);
      const Matrix counts = bow_counts(corpus, vocab);
      const Matrix tctx = to_matrix(synth_embeddings(corpus, 64, seed));
      const Matrix sctx = to_matrix(synth_embeddings(corpus, 16, seed + 1));
      const auto ws = make_workspace("synthetic", corpus, std::move(vocab), counts, sctx, tctx);

      ExperimentConfig cfg;
      cfg.k = 5;
      cfg.vocab_size = 200;
      cfg.teacher_hidden = 1;
      cfg.epochs = setup.epochs;
      cfg.runs = 5;
      cfg.alpha = setup.alpha;
      cfg.temperature = setup.temperature;
      cfg.seed = seed;

      GroupResult gr;
      gr.seed = seed;
      TopicModel teacher = train_teacher(ws, cfg);
      gr.teacher = evaluate(teacher, ws, cfg, "T", seed).mean_npmi;
      const FrozenTeacher ft(std::move(teacher));
      auto median_of = [&](const ExperimentConfig& c, const FrozenTeacher* t) {
        return make_report(c.student_tag(), c.k, {}, train_students(ws, t, c)).median_npmi();
      };
      auto plain = cfg;
      plain.alpha = 0.0;
      gr.s = median_of(plain, nullptr);
      gr.skd = median_of(cfg, &ft);
      auto no2w = cfg;
      no2w.no_2w = true;
      gr.ce_only = median_of(no2w, &ft);
      auto noce = cfg;
      noce.no_ce = true;
      gr.w2_only = median_of(noce, &ft);
      r.groups.push_back(gr);
      if (g == 0) r.seconds_first_group = seconds_since(t0);
      std::cerr << "  group " << g + 1 << " (seed " << seed << "): T " << fmt(gr.teacher) << "  S " << fmt(gr.s)
                << "  SKD " << fmt(gr.skd) << "  CE-only " << fmt(gr.ce_only) << "  2W-only " << fmt(gr.w2_only)
                << '\n';
    }
    r.seconds = seconds_since(t0);
    return r;
  }();
  return out;
}

Result synthetic_efficacy() {
  const auto& r = synthetic_runs();
  const auto& g = r.groups.front();
  int wins = 0;
  for (const auto& x : r.groups) wins += x.skd > x.s;
  // S and SKD for one group: a third of the group's student runs plus the teacher
  const bool ok = g.skd > g.s && r.seconds_first_group < 600;
  return {ok ? Outcome::pass : Outcome::fail,
          "median NPMI over 5 runs: SKD " + fmt(g.skd) + " vs S " + fmt(g.s) + " (teacher " + fmt(g.teacher) +
              "); SKD > S in " + std::to_string(wins) + "/" + std::to_string(r.groups.size()) + " seed groups, " +
              fmt(r.seconds_first_group, 3) + " s for the first group"};
}

Result ablation_direction() {
  const auto& r = synthetic_runs();
  int held = 0;
  std::string per_group;
  for (const auto& g : r.groups) {
    const bool ok = g.skd >= g.ce_only && g.skd >= g.w2_only;
    held += ok;
    per_group += (per_group.empty() ? "" : " ") + std::string(ok ? "+" : "-");
  }
  const bool ok = held >= 4;
  return {ok ? Outcome::pass : Outcome::fail, "full >= both single-term variants in " + std::to_string(held) + "/" +
                                                  std::to_string(r.groups.size()) + " seed groups [" + per_group +
                                                  "], " + fmt(r.seconds, 3) + " s total"};
}

// ---------------------------------------------------------------------------

Result real_data() {
  const char* dir = std::getenv("WKD_REAL_DATA");
  if (!dir) return {Outcome::skip, "set WKD_REAL_DATA to a directory with 20ng.tsv, teacher.emb, student.emb"};
  namespace fs = std::filesystem;
  const fs::path root(dir);
  for (const char* f : {"20ng.tsv", "teacher.emb", "student.emb"})
    if (!fs::exists(root / f)) return {Outcome::skip, (root / f).string() + " not found"};

  ExperimentConfig cfg;
  cfg.dataset = root / "20ng.tsv";
  cfg.dataset_name = "20ng";
  cfg.k = 20;
  cfg.teacher_embeddings = (root / "teacher.emb").string();
  cfg.student_embeddings = (root / "student.emb").string();
  const auto corpus = load_tsv(cfg.dataset);
  auto vocab = build_vocab(corpus, static_cast<std::size_t>(cfg.vocab_size));
  const Matrix counts = bow_counts(corpus, vocab);
  const auto ws = make_workspace("20ng", corpus, std::move(vocab), counts, load_context(cfg.student_embeddings, corpus),
                                 load_context(cfg.teacher_embeddings, corpus));
  TopicModel teacher = train_teacher(ws, cfg);
  const double t = evaluate(teacher, ws, cfg, "T", cfg.seed).mean_npmi;
  const FrozenTeacher ft(std::move(teacher));
  auto plain = cfg;
  plain.alpha = 0;
  const double s = make_report("S", 20, {}, train_students(ws, nullptr, plain)).median_npmi();
  const double skd = make_report("SKD", 20, {}, train_students(ws, &ft, cfg)).median_npmi();
  return {skd > s ? Outcome::pass : Outcome::fail, "median NPMI T " + fmt(t) + ", S " + fmt(s) + ", SKD " +
                                                       fmt(skd) + " (published 0.125 / 0.106 / 0.132, not gated)"};
}

struct Check {
  const char* name;
  std::function<Result()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> only;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--only") only.insert(argv[++i]);

  const std::vector<Check> checks = {
      {"wasserstein_oracle", w2_oracle},
      {"gradient_suite", gradient_suite},
      {"loss_identities", loss_identities},
      {"coherence_oracles", coherence_oracles},
      {"compression_band", compression_band},
      {"synthetic_distillation", synthetic_efficacy},
      {"ablation_direction", ablation_direction},
      {"real_data_direction", real_data},
  };
  int failed = 0;
  for (const auto& c : checks) {
    if (!only.empty() && !only.count(c.name)) continue;
    Result r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {Outcome::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = r.outcome == Outcome::pass ? "PASS" : r.outcome == Outcome::fail ? "FAIL" : "SKIP";
    if (r.outcome == Outcome::fail) ++failed;
    std::cout << tag << "  " << c.name << ": " << r.detail << std::endl;
  }
  return failed ? 1 : 0;
}
