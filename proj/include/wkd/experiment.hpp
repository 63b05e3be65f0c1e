#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "wkd/coherence.hpp"
#include "wkd/corpus.hpp"
#include "wkd/distill.hpp"
#include "wkd/embedstore.hpp"
#include "wkd/topicvae.hpp"

namespace wkd {

/// Every field has a flat key of the same name (see keys()). Config files
/// and command-line flags both go through from_map().
struct ExperimentConfig {
  std::filesystem::path dataset;
  std::string dataset_name;  ///< preset lookup; defaults to the dataset file stem
  int vocab_size = 2000;
  /// Path to an EMBv1 file, or `synth:<dim>[:<seed>]`.
  std::string teacher_embeddings;
  std::string student_embeddings;
  int k = 20;
  int teacher_hidden = 0;  ///< 0 selects the bundled preset for (dataset, K)
  int hidden_width = 100;
  double dropout = 0.2;
  double alpha = 0.5;
  double temperature = 2.0;
  int epochs = 100;
  int batch_size = 64;
  int runs = 5;
  std::uint64_t seed = 0;
  double lr = 2e-3;
  std::filesystem::path out = "wkd-out";
  std::filesystem::path teacher;  ///< checkpoint; defaults to <out>/teacher
  bool no_2w = false;
  bool no_ce = false;
  TeacherTheta teacher_theta = TeacherTheta::own;
  int top_n = 10;
  int npmi_window = 10;
  int cv_window = 110;
  bool verbose = false;

  static const std::vector<std::string>& keys();
  /// Applies `kv` on top of the defaults. Unknown keys or unparsable values
  /// throw ConfigError.
  static ExperimentConfig from_map(const std::map<std::string, std::string>& kv);
  std::map<std::string, std::string> to_map() const;
  void validate() const;

  std::filesystem::path teacher_dir() const { return teacher.empty() ? out / "teacher" : teacher; }
  /// "S" when alpha = 0, otherwise "SKD" with ablation suffixes.
  std::string student_tag() const;
  int resolved_teacher_depth() const;
  KdConfig kd() const;
  TrainConfig train(std::uint64_t run_seed) const;
  CoherenceConfig coherence() const;
};

/// Flat key=value file; keys may use '-' or '_'.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

struct DepthPreset {
  std::string dataset;
  int k;
  int depth;
};
const std::vector<DepthPreset>& teacher_depth_presets();
/// Canonical preset name ("20ng", "m10") or the lowercased input.
std::string canonical_dataset(std::string_view name);
std::optional<int> teacher_depth_preset(std::string_view dataset, int k);

ModelConfig teacher_model_config(int k, int vocab_size, int ctx_dim, int depth, int width = 100, double dropout = 0.2);
ModelConfig student_model_config(int k, int vocab_size, int ctx_dim, int width = 100, double dropout = 0.2);

/// 1 - student_bytes / teacher_bytes.
double compression(const ParameterCount& teacher, const ParameterCount& student);

/// Caps parallel runs: WKD_THREADS if set and positive, else hardware
/// concurrency.
unsigned thread_budget();

/// Corpus, vocabulary and row-aligned model inputs for the train partition.
struct Workspace {
  std::string dataset_name;
  Corpus corpus;
  Vocabulary vocab;
  TrainingSet data;  ///< train-partition rows
};

/// counts (all documents x V) from the corpus.
Matrix bow_counts(const Corpus& corpus, const Vocabulary& vocab);
/// Row-wise L1 normalisation; zero rows stay zero.
Matrix l1_normalize_rows(const Matrix& counts);
Matrix to_matrix(const EmbeddingMatrix& emb);
/// Reads an EMBv1 path or builds `synth:<dim>[:<seed>]` embeddings.
Matrix load_context(const std::string& spec, const Corpus& corpus);

/// In-memory workspace; context matrices cover every corpus document.
Workspace make_workspace(std::string name, Corpus corpus, Vocabulary vocab, const Matrix& counts,
                         const Matrix& student_ctx, const Matrix& teacher_ctx);
/// From files: the dataset TSV plus the prepare cache in <out>. Only the
/// requested embedding sets are loaded.
Workspace load_workspace(const ExperimentConfig& cfg, bool student_ctx, bool teacher_ctx);

struct RunResult {
  int run = 0;
  std::uint64_t seed = 0;
  std::string tag;
  TopicModel model;
  History history;
  CoherenceReport coherence;
};

TopicModel train_teacher(const Workspace& ws, const ExperimentConfig& cfg, History* history = nullptr);
/// `cfg.runs` students with seeds seed + i, run in parallel up to
/// thread_budget(). A null teacher (or alpha = 0) trains plain students.
std::vector<RunResult> train_students(const Workspace& ws, const FrozenTeacher* teacher, const ExperimentConfig& cfg);
CoherenceReport evaluate(const TopicModel& model, const Workspace& ws, const ExperimentConfig& cfg,
                         const std::string& tag, std::uint64_t seed);

double median(std::vector<double> values);

struct RunRow {
  int run = 0;
  std::uint64_t seed = 0;
  double npmi = 0.0;
  double cv = 0.0;
};

/// Per-run coherence of one model family at one K, with medians.
struct RunReport {
  std::string model;
  int k = 0;
  std::int64_t params = 0;
  std::int64_t bytes = 0;
  std::vector<RunRow> rows;

  double median_npmi() const;
  double median_cv() const;
  /// `model,K,run,seed,npmi,cv,params,bytes`; the last row has run "median".
  void write_csv(std::ostream& out) const;
  /// Medians are recomputed from the per-run rows.
  static RunReport read_csv(const std::filesystem::path& path);
};

RunReport make_report(const std::string& model, int k, const ParameterCount& params,
                      const std::vector<RunResult>& runs);

void write_history_csv(const History& h, std::ostream& out);

// Subcommands. Each returns after writing its outputs; errors propagate as
// ConfigError / DataError / NumericError.
void cmd_prepare(const ExperimentConfig& cfg, std::ostream& log);
void cmd_train_teacher(const ExperimentConfig& cfg, std::ostream& log);
void cmd_distill(const ExperimentConfig& cfg, std::ostream& log);
CoherenceReport cmd_eval(const std::filesystem::path& checkpoint, const ExperimentConfig& cfg,
                         const std::optional<std::filesystem::path>& vocab_path);
/// Aligned comparison table; warnings (e.g. unmatched K) go to `warn`.
void cmd_compare(const std::vector<std::filesystem::path>& reports, std::ostream& out, std::ostream& warn);
/// Parameter and byte counts of teacher and student for one preset or, if
/// dataset is empty, all bundled presets.
void cmd_params(const std::string& dataset, int k, int vocab_size, int teacher_dim, int student_dim,
                std::ostream& out);

}  // namespace wkd
