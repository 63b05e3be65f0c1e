#include "wkd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "binary_io.hpp"
#include "wkd/checkpoint.hpp"
#include "wkd/error.hpp"

namespace wkd {

namespace fs = std::filesystem;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string normalize_key(std::string k) {
  std::replace(k.begin(), k.end(), '-', '_');
  return lower(k);
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected an integer, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long x = std::stoull(v, &pos);
      if (pos == v.size()) return x;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  const auto l = lower(v);
  if (l == "1" || l == "true" || l == "yes" || l == "on") return true;
  if (l == "0" || l == "false" || l == "no" || l == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::string real_str(double d) {
  std::ostringstream s;
  s.precision(17);
  s << d;
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) { detail::write_file_atomic(path, text); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

Matrix select_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

// Writes checkpoint, vocabulary copy, loss history, coherence and topics
// into one directory.
void save_run(const fs::path& dir, const TopicModel& model, const CheckpointMeta& meta, const Vocabulary& vocab,
              const History& history, const CoherenceReport& report) {
  save_checkpoint(model, meta, dir);
  write_vocab(vocab, dir / "vocab.txt");
  std::ostringstream h, c, t;
  write_history_csv(history, h);
  report.write_csv(c);
  report.write_topics(t);
  write_text(dir / "history.csv", h.str());
  write_text(dir / "coherence.csv", c.str());
  write_text(dir / "topics.txt", t.str());
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> k{
      "dataset",     "dataset_name", "vocab_size", "teacher_embeddings", "student_embeddings", "k",
      "teacher_hidden", "hidden_width", "dropout", "alpha",          "temperature",        "epochs",
      "batch_size",  "runs",         "seed",       "lr",                 "out",                "teacher",
      "no_2w",       "no_ce",        "teacher_theta", "top_n",           "npmi_window",        "cv_window",
      "verbose"};
  return k;
}

ExperimentConfig ExperimentConfig::from_map(const std::map<std::string, std::string>& kv) {
  ExperimentConfig c;
  const auto& known = keys();
  for (const auto& [raw, v] : kv) {
    const auto key = normalize_key(raw);
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown setting '" + raw + "'");
    if (key == "dataset") c.dataset = v;
    else if (key == "dataset_name") c.dataset_name = v;
    else if (key == "vocab_size") c.vocab_size = static_cast<int>(parse_int(key, v));
    else if (key == "teacher_embeddings") c.teacher_embeddings = v;
    else if (key == "student_embeddings") c.student_embeddings = v;
    else if (key == "k") c.k = static_cast<int>(parse_int(key, v));
    else if (key == "teacher_hidden") c.teacher_hidden = static_cast<int>(parse_int(key, v));
    else if (key == "hidden_width") c.hidden_width = static_cast<int>(parse_int(key, v));
    else if (key == "dropout") c.dropout = parse_real(key, v);
    else if (key == "alpha") c.alpha = parse_real(key, v);
    else if (key == "temperature") c.temperature = parse_real(key, v);
    else if (key == "epochs") c.epochs = static_cast<int>(parse_int(key, v));
    else if (key == "batch_size") c.batch_size = static_cast<int>(parse_int(key, v));
    else if (key == "runs") c.runs = static_cast<int>(parse_int(key, v));
    else if (key == "seed") c.seed = parse_u64(key, v);
    else if (key == "lr") c.lr = parse_real(key, v);
    else if (key == "out") c.out = v;
    else if (key == "teacher") c.teacher = v;
    else if (key == "no_2w") c.no_2w = parse_bool(key, v);
    else if (key == "no_ce") c.no_ce = parse_bool(key, v);
    else if (key == "teacher_theta") {
      const auto l = lower(v);
      if (l == "own") c.teacher_theta = TeacherTheta::own;
      else if (l == "student") c.teacher_theta = TeacherTheta::student;
      else throw ConfigError("teacher_theta: expected 'own' or 'student', got '" + v + "'");
    } else if (key == "top_n") c.top_n = static_cast<int>(parse_int(key, v));
    else if (key == "npmi_window") c.npmi_window = static_cast<int>(parse_int(key, v));
    else if (key == "cv_window") c.cv_window = static_cast<int>(parse_int(key, v));
    else if (key == "verbose") c.verbose = parse_bool(key, v);
  }
  if (c.dataset_name.empty() && !c.dataset.empty()) c.dataset_name = c.dataset.stem().string();
  return c;
}

std::map<std::string, std::string> ExperimentConfig::to_map() const {
  return {{"dataset", dataset.string()},
          {"dataset_name", dataset_name},
          {"vocab_size", std::to_string(vocab_size)},
          {"teacher_embeddings", teacher_embeddings},
          {"student_embeddings", student_embeddings},
          {"k", std::to_string(k)},
          {"teacher_hidden", std::to_string(teacher_hidden)},
          {"hidden_width", std::to_string(hidden_width)},
          {"dropout", real_str(dropout)},
          {"alpha", real_str(alpha)},
          {"temperature", real_str(temperature)},
          {"epochs", std::to_string(epochs)},
          {"batch_size", std::to_string(batch_size)},
          {"runs", std::to_string(runs)},
          {"seed", std::to_string(seed)},
          {"lr", real_str(lr)},
          {"out", out.string()},
          {"teacher", teacher.string()},
          {"no_2w", no_2w ? "true" : "false"},
          {"no_ce", no_ce ? "true" : "false"},
          {"teacher_theta", teacher_theta == TeacherTheta::own ? "own" : "student"},
          {"top_n", std::to_string(top_n)},
          {"npmi_window", std::to_string(npmi_window)},
          {"cv_window", std::to_string(cv_window)},
          {"verbose", verbose ? "true" : "false"}};
}

void ExperimentConfig::validate() const {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (runs < 1) throw ConfigError("runs must be >= 1");
  if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
  if (teacher_hidden < 0) throw ConfigError("teacher_hidden must be >= 0");
  if (hidden_width < 1) throw ConfigError("hidden_width must be >= 1");
  if (top_n < 2) throw ConfigError("top_n must be >= 2");
  kd().validate();
  train(seed).validate();
  coherence().validate();
}

std::string ExperimentConfig::student_tag() const {
  if (alpha == 0.0) return "S";
  std::string tag = "SKD";
  if (no_2w) tag += "-no2w";
  if (no_ce) tag += "-noce";
  return tag;
}

int ExperimentConfig::resolved_teacher_depth() const {
  if (teacher_hidden > 0) return teacher_hidden;
  if (auto d = teacher_depth_preset(dataset_name, k)) return *d;
  throw ConfigError("no bundled teacher depth for dataset '" + dataset_name + "' with K=" + std::to_string(k) +
                    "; set teacher_hidden");
}

KdConfig ExperimentConfig::kd() const {
  KdConfig c;
  c.alpha = alpha;
  c.temperature = temperature;
  c.use_2w = !no_2w;
  c.use_ce = !no_ce;
  c.teacher_theta = teacher_theta;
  return c;
}

TrainConfig ExperimentConfig::train(std::uint64_t run_seed) const {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch_size;
  c.seed = run_seed;
  c.adam.lr = lr;
  return c;
}

CoherenceConfig ExperimentConfig::coherence() const {
  CoherenceConfig c;
  c.top_n = top_n;
  c.npmi_window = npmi_window;
  c.cv_window = cv_window;
  return c;
}

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  std::map<std::string, std::string> out;
  try {
    for (const auto& [k, v] : parse_key_values(detail::read_file(path), path.string())) out[normalize_key(k)] = v;
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return out;
}

const std::vector<DepthPreset>& teacher_depth_presets() {
  static const std::vector<DepthPreset> p{{"20ng", 20, 1}, {"20ng", 50, 1}, {"20ng", 100, 5}, {"m10", 10, 4},
                                          {"m10", 20, 5},  {"m10", 50, 2},  {"m10", 100, 3}};
  return p;
}

std::string canonical_dataset(std::string_view name) {
  auto l = lower(name);
  std::string compact;
  for (char c : l) {
    if (std::isalnum(static_cast<unsigned char>(c))) compact += c;
  }
  if (compact == "20ng" || compact == "20newsgroups" || compact == "20newsgroup") return "20ng";
  if (compact == "m10") return "m10";
  return l;
}

std::optional<int> teacher_depth_preset(std::string_view dataset, int k) {
  const auto name = canonical_dataset(dataset);
  for (const auto& p : teacher_depth_presets()) {
    if (p.dataset == name && p.k == k) return p.depth;
  }
  return std::nullopt;
}

ModelConfig teacher_model_config(int k, int vocab_size, int ctx_dim, int depth, int width, double dropout) {
  ModelConfig c;
  c.architecture = Architecture::combined;
  c.num_topics = k;
  c.vocab_size = vocab_size;
  c.ctx_dim = ctx_dim;
  c.hidden_sizes.assign(static_cast<std::size_t>(depth), width);
  c.dropout = dropout;
  c.validate();
  return c;
}

ModelConfig student_model_config(int k, int vocab_size, int ctx_dim, int width, double dropout) {
  ModelConfig c;
  c.architecture = Architecture::zeroshot;
  c.num_topics = k;
  c.vocab_size = vocab_size;
  c.ctx_dim = ctx_dim;
  c.hidden_sizes = {width};
  c.ctx_adapter = true;
  c.dropout = dropout;
  c.validate();
  return c;
}

double compression(const ParameterCount& teacher, const ParameterCount& student) {
  if (teacher.bytes() <= 0) throw ConfigError("teacher has no parameters");
  return 1.0 - static_cast<double>(student.bytes()) / static_cast<double>(teacher.bytes());
}

unsigned thread_budget() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("WKD_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
  }
  return hw;
}

// ---------------------------------------------------------------------------
// data
// ---------------------------------------------------------------------------

Matrix bow_counts(const Corpus& corpus, const Vocabulary& vocab) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(corpus.size()), static_cast<Eigen::Index>(vocab.size()));
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (auto id : token_ids(corpus[i], vocab)) m(static_cast<Eigen::Index>(i), id) += 1.0;
  }
  return m;
}

Matrix l1_normalize_rows(const Matrix& counts) {
  Matrix out = counts;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double s = out.row(r).sum();
    if (s > 0) out.row(r) /= s;
  }
  return out;
}

Matrix to_matrix(const EmbeddingMatrix& emb) {
  Matrix m(static_cast<Eigen::Index>(emb.n_docs()), static_cast<Eigen::Index>(emb.dim()));
  for (std::size_t i = 0; i < emb.data().size(); ++i) m.data()[i] = emb.data()[i];
  return m;
}

Matrix load_context(const std::string& spec, const Corpus& corpus) {
  if (spec.empty()) throw ConfigError("no embeddings given");
  if (spec.rfind("synth:", 0) == 0) {
    std::istringstream in(spec.substr(6));
    std::string dim_s, seed_s;
    std::getline(in, dim_s, ':');
    std::getline(in, seed_s);
    const auto dim = parse_int("embeddings", dim_s);
    if (dim < 1) throw ConfigError("synthetic embedding dimension must be >= 1");
    const std::uint64_t seed = seed_s.empty() ? 0 : parse_u64("embeddings", seed_s);
    return to_matrix(synth_embeddings(corpus, static_cast<std::size_t>(dim), seed));
  }
  if (!fs::exists(spec)) throw ConfigError("embeddings file not found: " + spec);
  const auto emb = read_embeddings(spec);
  if (emb.n_docs() != corpus.size()) {
    throw DataError(spec + ": " + std::to_string(emb.n_docs()) + " embedding rows for " +
                    std::to_string(corpus.size()) + " documents");
  }
  return to_matrix(emb);
}

Workspace make_workspace(std::string name, Corpus corpus, Vocabulary vocab, const Matrix& counts,
                         const Matrix& student_ctx, const Matrix& teacher_ctx) {
  const auto n = static_cast<Eigen::Index>(corpus.size());
  if (counts.rows() != n || counts.cols() != static_cast<Eigen::Index>(vocab.size())) {
    throw DataError("BoW matrix is " + std::to_string(counts.rows()) + "x" + std::to_string(counts.cols()) +
                    ", expected " + std::to_string(n) + "x" + std::to_string(vocab.size()));
  }
  for (const Matrix* m : {&student_ctx, &teacher_ctx}) {
    if (m->size() > 0 && m->rows() != n) throw DataError("embedding rows do not match the corpus");
  }
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].partition == Partition::train) rows.push_back(static_cast<Eigen::Index>(i));
  }
  if (rows.size() < 2) throw DataError("need at least 2 training documents");

  Workspace ws;
  ws.dataset_name = std::move(name);
  ws.data.counts = select_rows(counts, rows);
  ws.data.bow = l1_normalize_rows(ws.data.counts);
  if (student_ctx.size() > 0) ws.data.ctx = select_rows(student_ctx, rows);
  if (teacher_ctx.size() > 0) ws.data.teacher_ctx = select_rows(teacher_ctx, rows);
  ws.corpus = std::move(corpus);
  ws.vocab = std::move(vocab);
  return ws;
}

Workspace load_workspace(const ExperimentConfig& cfg, bool student_ctx, bool teacher_ctx) {
  if (cfg.dataset.empty()) throw ConfigError("no dataset given");
  if (!fs::exists(cfg.dataset)) throw ConfigError("dataset not found: " + cfg.dataset.string());
  Corpus corpus = load_tsv(cfg.dataset);
  const auto vocab_path = cfg.out / "vocab.txt";
  const auto bow_path = cfg.out / "bow.tns";
  if (!fs::exists(vocab_path) || !fs::exists(bow_path)) {
    throw ConfigError("no prepared data in " + cfg.out.string() + "; run `wkd prepare` first");
  }
  Vocabulary vocab = read_vocab(vocab_path);
  const Matrix counts = read_tensor(bow_path);
  const Matrix s = student_ctx ? load_context(cfg.student_embeddings, corpus) : Matrix();
  const Matrix t = teacher_ctx ? load_context(cfg.teacher_embeddings, corpus) : Matrix();
  return make_workspace(cfg.dataset_name, std::move(corpus), std::move(vocab), counts, s, t);
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

TopicModel train_teacher(const Workspace& ws, const ExperimentConfig& cfg, History* history) {
  if (ws.data.teacher_ctx.size() == 0) throw ConfigError("teacher embeddings are required");
  const auto mc = teacher_model_config(cfg.k, static_cast<int>(ws.vocab.size()),
                                       static_cast<int>(ws.data.teacher_ctx.cols()), cfg.resolved_teacher_depth(),
                                       cfg.hidden_width, cfg.dropout);
  TopicModel model(mc, cfg.seed);
  TrainingSet data{ws.data.counts, ws.data.bow, ws.data.teacher_ctx, {}};
  EpochCallback cb;
  if (cfg.verbose) {
    cb = [](const EpochRecord& r) {
      std::ostringstream s;
      s << "teacher epoch " << r.epoch << " loss " << r.loss.total_vae << '\n';
      std::cerr << s.str();
    };
  }
  auto h = train_vae(model, data, cfg.train(cfg.seed), cb);
  if (history) *history = std::move(h);
  return model;
}

CoherenceReport evaluate(const TopicModel& model, const Workspace& ws, const ExperimentConfig& cfg,
                         const std::string& tag, std::uint64_t seed) {
  auto cc = cfg.coherence();
  cc.threads = 1;
  auto rep = evaluate_coherence(extract_topics(model, ws.vocab, cfg.top_n), ws.corpus, ws.vocab, cc);
  rep.model_tag = tag;
  rep.dataset = ws.dataset_name;
  rep.seed = seed;
  return rep;
}

std::vector<RunResult> train_students(const Workspace& ws, const FrozenTeacher* teacher, const ExperimentConfig& cfg) {
  cfg.validate();
  if (ws.data.ctx.size() == 0) throw ConfigError("student embeddings are required");
  if (teacher != nullptr && ws.data.teacher_ctx.size() == 0) throw ConfigError("teacher embeddings are required");
  const auto mc = student_model_config(cfg.k, static_cast<int>(ws.vocab.size()), static_cast<int>(ws.data.ctx.cols()),
                                       cfg.hidden_width, cfg.dropout);
  const auto tag = cfg.student_tag();
  const auto n = static_cast<std::size_t>(cfg.runs);

  std::vector<std::optional<RunResult>> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const std::uint64_t seed = cfg.seed + i;
        TopicModel model(mc, seed);
        EpochCallback cb;
        if (cfg.verbose) {
          cb = [&, i](const EpochRecord& r) {
            std::ostringstream s;
            s << tag << " run " << i << " epoch " << r.epoch << " loss "
              << r.loss.total_student.value_or(r.loss.total_vae) << '\n';
            std::cerr << s.str();
          };
        }
        History h = teacher ? train_student_with_kd(*teacher, model, ws.data, cfg.train(seed), cfg.kd(), cb)
                            : train_vae(model, ws.data, cfg.train(seed), cb);
        auto rep = evaluate(model, ws, cfg, tag, seed);
        results[i].emplace(RunResult{static_cast<int>(i), seed, tag, std::move(model), std::move(h), std::move(rep)});
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned threads = std::min<unsigned>(thread_budget(), static_cast<unsigned>(n));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<RunResult> out;
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

double median(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median of no values");
  std::sort(v.begin(), v.end());
  const auto m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double RunReport::median_npmi() const {
  std::vector<double> v;
  for (const auto& r : rows) v.push_back(r.npmi);
  return median(v);
}

double RunReport::median_cv() const {
  std::vector<double> v;
  for (const auto& r : rows) v.push_back(r.cv);
  return median(v);
}

void RunReport::write_csv(std::ostream& out) const {
  const auto old = out.precision(10);
  out << "model,K,run,seed,npmi,cv,params,bytes\n";
  for (const auto& r : rows) {
    out << model << ',' << k << ',' << r.run << ',' << r.seed << ',' << r.npmi << ',' << r.cv << ',' << params << ','
        << bytes << '\n';
  }
  out << model << ',' << k << ",median,," << median_npmi() << ',' << median_cv() << ',' << params << ',' << bytes
      << '\n';
  out.precision(old);
}

RunReport RunReport::read_csv(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("report not found: " + path.string());
  std::istringstream in(detail::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("model,K,run,seed,npmi,cv,params,bytes", 0) != 0) {
    throw DataError(path.string() + ": not a run report");
  }
  RunReport rep;
  bool first = true;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 8 fields");
    const auto where = path.string() + ":" + std::to_string(line_no);
    try {
      if (first) {
        rep.model = f[0];
        rep.k = std::stoi(f[1]);
        rep.params = std::stoll(f[6]);
        rep.bytes = std::stoll(f[7]);
        first = false;
      } else if (f[0] != rep.model || std::stoi(f[1]) != rep.k) {
        throw DataError(where + ": mixed models in one report");
      }
      if (f[2] == "median") continue;
      rep.rows.push_back({std::stoi(f[2]), std::stoull(f[3]), std::stod(f[4]), std::stod(f[5])});
    } catch (const DataError&) {
      throw;
    } catch (const std::exception&) {
      throw DataError(where + ": malformed field");
    }
  }
  if (rep.rows.empty()) throw DataError(path.string() + ": report has no runs");
  return rep;
}

RunReport make_report(const std::string& model, int k, const ParameterCount& params,
                      const std::vector<RunResult>& runs) {
  RunReport rep;
  rep.model = model;
  rep.k = k;
  rep.params = params.total();
  rep.bytes = params.bytes();
  for (const auto& r : runs) rep.rows.push_back({r.run, r.seed, r.coherence.mean_npmi, r.coherence.mean_cv});
  return rep;
}

void write_history_csv(const History& h, std::ostream& out) {
  const auto old = out.precision(10);
  out << "epoch,nll,kl,total_vae,kd_2w,kd_ce,kd_total,total\n";
  auto opt = [](const std::optional<double>& v) { return v ? real_str(*v) : std::string(); };
  for (const auto& r : h) {
    out << r.epoch << ',' << r.loss.nll << ',' << r.loss.kl << ',' << r.loss.total_vae << ',' << opt(r.loss.kd_2w) << ','
        << opt(r.loss.kd_ce) << ',' << opt(r.loss.kd_total) << ',' << r.loss.total_student.value_or(r.loss.total_vae)
        << '\n';
  }
  out.precision(old);
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

void cmd_prepare(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.dataset.empty()) throw ConfigError("no dataset given");
  if (!fs::exists(cfg.dataset)) throw ConfigError("dataset not found: " + cfg.dataset.string());
  if (cfg.vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
  const Corpus corpus = load_tsv(cfg.dataset);
  const Vocabulary vocab = build_vocab(corpus, static_cast<std::size_t>(cfg.vocab_size));
  ensure_dir(cfg.out);
  std::ostringstream v;
  for (const auto& w : vocab.words()) v << w << '\n';
  write_text(cfg.out / "vocab.txt", v.str());
  write_tensor(bow_counts(corpus, vocab), cfg.out / "bow.tns");
  log << "prepared " << corpus.size() << " documents (" << corpus.count(Partition::train) << " train), vocabulary "
      << vocab.size() << " -> " << cfg.out.string() << '\n';
}

void cmd_train_teacher(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto ws = load_workspace(cfg, false, true);
  History history;
  TopicModel teacher = train_teacher(ws, cfg, &history);
  auto rep = evaluate(teacher, ws, cfg, "T", cfg.seed);

  CheckpointMeta meta;
  meta.model_tag = "T";
  meta.seed = cfg.seed;
  meta.vocab_fingerprint = ws.vocab.fingerprint();
  meta.extra = {{"dataset", ws.dataset_name},
                {"embeddings", cfg.teacher_embeddings},
                {"epochs", std::to_string(cfg.epochs)},
                {"batch_size", std::to_string(cfg.batch_size)},
                {"lr", real_str(cfg.lr)}};
  const auto dir = cfg.teacher_dir();
  save_run(dir, teacher, meta, ws.vocab, history, rep);

  RunResult single{0, cfg.seed, "T", std::move(teacher), std::move(history), rep};
  const auto report = make_report("T", cfg.k, single.model.count_parameters(), {single});
  std::ostringstream csv;
  report.write_csv(csv);
  write_text(cfg.out / ("T_K" + std::to_string(cfg.k) + "_report.csv"), csv.str());
  log << "T K=" << cfg.k << " H=" << cfg.resolved_teacher_depth() << " npmi=" << rep.mean_npmi
      << " cv=" << rep.mean_cv << " -> " << dir.string() << '\n';
}

void cmd_distill(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const bool use_teacher = cfg.alpha > 0.0;
  const auto ws = load_workspace(cfg, true, use_teacher);
  std::optional<FrozenTeacher> teacher;
  if (use_teacher) {
    auto ck = load_checkpoint(cfg.teacher_dir());
    if (ck.meta.vocab_fingerprint != ws.vocab.fingerprint()) {
      throw ConfigError("teacher checkpoint was trained on a different vocabulary");
    }
    if (ck.model.num_topics() != cfg.k) {
      throw ConfigError("teacher has K=" + std::to_string(ck.model.num_topics()) + ", config asks for K=" +
                        std::to_string(cfg.k));
    }
    if (ck.model.ctx_dim() != ws.data.teacher_ctx.cols()) {
      throw ConfigError("teacher expects " + std::to_string(ck.model.ctx_dim()) + "-d embeddings, got " +
                        std::to_string(ws.data.teacher_ctx.cols()));
    }
    teacher.emplace(std::move(ck.model));
  }
  auto runs = train_students(ws, teacher ? &*teacher : nullptr, cfg);

  const auto tag = cfg.student_tag();
  const auto base = cfg.out / (tag + "_K" + std::to_string(cfg.k));
  for (const auto& r : runs) {
    CheckpointMeta meta;
    meta.model_tag = tag;
    meta.seed = r.seed;
    meta.vocab_fingerprint = ws.vocab.fingerprint();
    meta.extra = {{"dataset", ws.dataset_name},
                  {"embeddings", cfg.student_embeddings},
                  {"alpha", real_str(cfg.alpha)},
                  {"temperature", real_str(cfg.temperature)},
                  {"use_2w", cfg.no_2w ? "0" : "1"},
                  {"use_ce", cfg.no_ce ? "0" : "1"},
                  {"epochs", std::to_string(cfg.epochs)},
                  {"batch_size", std::to_string(cfg.batch_size)}};
    if (teacher) meta.extra["teacher_checksum"] = std::to_string(teacher->checksum());
    save_run(base / ("run" + std::to_string(r.run)), r.model, meta, ws.vocab, r.history, r.coherence);
  }
  const auto report = make_report(tag, cfg.k, runs.front().model.count_parameters(), runs);
  std::ostringstream csv;
  report.write_csv(csv);
  write_text(cfg.out / (tag + "_K" + std::to_string(cfg.k) + "_report.csv"), csv.str());
  log << tag << " K=" << cfg.k << " runs=" << runs.size() << " median npmi=" << report.median_npmi()
      << " cv=" << report.median_cv() << " -> " << base.string() << '\n';
}

CoherenceReport cmd_eval(const fs::path& checkpoint, const ExperimentConfig& cfg,
                         const std::optional<fs::path>& vocab_path) {
  if (cfg.dataset.empty()) throw ConfigError("no dataset given");
  if (!fs::exists(cfg.dataset)) throw ConfigError("dataset not found: " + cfg.dataset.string());
  auto ck = load_checkpoint(checkpoint);
  const auto vpath = vocab_path ? *vocab_path : checkpoint / "vocab.txt";
  if (!fs::exists(vpath)) throw ConfigError("vocabulary not found: " + vpath.string());
  Vocabulary vocab = read_vocab(vpath);
  if (vocab.fingerprint() != ck.meta.vocab_fingerprint || static_cast<int>(vocab.size()) != ck.model.vocab_size()) {
    throw ConfigError("vocabulary " + vpath.string() + " does not match the checkpoint");
  }
  Corpus corpus = load_tsv(cfg.dataset);
  auto cc = cfg.coherence();
  auto rep = evaluate_coherence(extract_topics(ck.model, vocab, cfg.top_n), corpus, vocab, cc);
  rep.model_tag = ck.meta.model_tag;
  rep.seed = ck.meta.seed;
  rep.dataset = cfg.dataset_name;
  return rep;
}

void cmd_compare(const std::vector<fs::path>& paths, std::ostream& out, std::ostream& warn) {
  if (paths.size() < 2) throw ConfigError("need >= 2 reports");
  std::vector<RunReport> reports;
  for (const auto& p : paths) reports.push_back(RunReport::read_csv(p));

  std::set<int> ks;
  std::set<std::string> models;
  for (const auto& r : reports) {
    ks.insert(r.k);
    models.insert(r.model);
  }
  for (const auto& m : models) {
    for (int k : ks) {
      const bool has = std::any_of(reports.begin(), reports.end(), [&](const auto& r) { return r.model == m && r.k == k; });
      if (!has) warn << "warning: no " << m << " report for K=" << k << '\n';
    }
  }

  out << std::left << std::setw(14) << "model" << std::setw(6) << "K" << std::setw(6) << "runs" << std::setw(12)
      << "npmi" << std::setw(12) << "cv" << std::setw(12) << "params" << std::setw(12) << "bytes" << std::setw(14)
      << "reduction" << std::setw(12) << "d_npmi" << "d_cv" << '\n';
  out << std::fixed;
  for (int k : ks) {
    const RunReport* first = nullptr;
    const RunReport* t = nullptr;
    for (const auto& r : reports) {
      if (r.k != k) continue;
      if (!first) first = &r;
      if (r.model == "T" && !t) t = &r;
    }
    const RunReport* base = t ? t : first;
    for (const auto& r : reports) {
      if (r.k != k) continue;
      std::string reduction = "-";
      if (t && t->bytes > 0) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(1)
          << 100.0 * (1.0 - static_cast<double>(r.bytes) / static_cast<double>(t->bytes)) << '%';
        reduction = s.str();
      }
      out << std::setw(14) << r.model << std::setw(6) << r.k << std::setw(6) << r.rows.size() << std::setprecision(4)
          << std::setw(12) << r.median_npmi() << std::setw(12) << r.median_cv() << std::setw(12) << r.params
          << std::setw(12) << r.bytes << std::setw(14) << reduction << std::showpos << std::setw(12)
          << r.median_npmi() - base->median_npmi() << r.median_cv() - base->median_cv() << std::noshowpos << '\n';
    }
  }
  out.unsetf(std::ios::fixed);
}

void cmd_params(const std::string& dataset, int k, int vocab_size, int teacher_dim, int student_dim,
                std::ostream& out) {
  std::vector<DepthPreset> rows;
  if (dataset.empty()) {
    rows = teacher_depth_presets();
  } else {
    const auto d = teacher_depth_preset(dataset, k);
    if (!d) throw ConfigError("no bundled preset for dataset '" + dataset + "' with K=" + std::to_string(k));
    rows.push_back({canonical_dataset(dataset), k, *d});
  }
  out << "dataset,K,H,teacher_params,teacher_bytes,student_params,student_bytes,reduction_pct\n";
  for (const auto& p : rows) {
    const auto t = TopicModel::zeros(teacher_model_config(p.k, vocab_size, teacher_dim, p.depth)).count_parameters();
    const auto s = TopicModel::zeros(student_model_config(p.k, vocab_size, student_dim)).count_parameters();
    std::ostringstream pct;
    pct << std::fixed << std::setprecision(2) << 100.0 * compression(t, s);
    out << p.dataset << ',' << p.k << ',' << p.depth << ',' << t.total() << ',' << t.bytes() << ',' << s.total() << ','
        << s.bytes() << ',' << pct.str() << '\n';
  }
}

}  // namespace wkd
