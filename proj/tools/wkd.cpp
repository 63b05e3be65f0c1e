// wkd: prepare data, train a teacher, distil students, evaluate and compare.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wkd/error.hpp"
#include "wkd/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

bool is_flag(const std::string& key) { return key == "no_2w" || key == "no_ce" || key == "verbose"; }

std::string flag_name(std::string key) {
  for (auto& c : key) {
    if (c == '_') c = '-';
  }
  return "--" + key;
}

// Experiment settings shared by several subcommands: every config key is
// also a flag, and flags given on the command line win over the file.
struct Settings {
  std::string config;
  std::map<std::string, std::string> text;
  std::map<std::string, bool> flags;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App* app, const std::vector<std::string>& skip = {}) {
    app->add_option("--config", config, "flat key=value settings file");
    for (const auto& key : wkd::ExperimentConfig::keys()) {
      if (std::find(skip.begin(), skip.end(), key) != skip.end()) continue;
      CLI::Option* opt = nullptr;
      if (is_flag(key)) {
        opt = app->add_flag(flag_name(key), flags[key]);
      } else {
        opt = app->add_option(flag_name(key), text[key]);
      }
      options.emplace_back(key, opt);
    }
  }

  wkd::ExperimentConfig resolve() const {
    std::map<std::string, std::string> kv;
    if (!config.empty()) kv = wkd::read_config_file(config);
    for (const auto& [key, opt] : options) {
      if (opt->count() == 0) continue;
      kv[key] = is_flag(key) ? (flags.at(key) ? "true" : "false") : text.at(key);
    }
    return wkd::ExperimentConfig::from_map(kv);
  }
};

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw wkd::DataError("cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wasserstein knowledge distillation for neural topic models"};
  app.require_subcommand(1);
  // a repeated option overrides the earlier one
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Settings prepare_s, teacher_s, distill_s, eval_s;
  auto* prepare = app.add_subcommand("prepare", "build the vocabulary and BoW cache");
  prepare_s.attach(prepare);
  auto* train_teacher = app.add_subcommand("train-teacher", "train the contextual teacher once");
  teacher_s.attach(train_teacher);
  auto* distill = app.add_subcommand("distill", "train students against the frozen teacher");
  distill_s.attach(distill);

  auto* eval = app.add_subcommand("eval", "coherence of one checkpoint");
  std::string checkpoint, vocab_path, eval_out;
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval->add_option("--vocab", vocab_path, "vocabulary file (default: the checkpoint's copy)");
  eval->add_option("--out", eval_out, "CSV output file (default: stdout)");
  eval_s.attach(eval, {"out"});

  auto* compare = app.add_subcommand("compare", "align run reports");
  std::vector<std::string> reports;
  std::string compare_out;
  compare->add_option("reports", reports, "run report CSV files")->required();
  compare->add_option("--out", compare_out, "output file (default: stdout)");

  auto* params = app.add_subcommand("params", "parameter counts and compression of the bundled presets");
  std::string params_dataset;
  int params_k = 20, params_v = 2000, params_tdim = 768, params_sdim = 384;
  params->add_option("--dataset-name", params_dataset, "preset dataset (default: all presets)");
  params->add_option("--k", params_k, "topics");
  params->add_option("--vocab-size", params_v, "vocabulary size");
  params->add_option("--teacher-dim", params_tdim, "teacher embedding width");
  params->add_option("--student-dim", params_sdim, "student embedding width");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (prepare->parsed()) {
      wkd::cmd_prepare(prepare_s.resolve(), std::cerr);
    } else if (train_teacher->parsed()) {
      wkd::cmd_train_teacher(teacher_s.resolve(), std::cerr);
    } else if (distill->parsed()) {
      wkd::cmd_distill(distill_s.resolve(), std::cerr);
    } else if (eval->parsed()) {
      const auto cfg = eval_s.resolve();
      std::optional<std::filesystem::path> vp;
      if (!vocab_path.empty()) vp = vocab_path;
      const auto rep = wkd::cmd_eval(checkpoint, cfg, vp);
      std::ostringstream csv;
      rep.write_csv(csv);
      write_or_print(eval_out, csv.str());
    } else if (compare->parsed()) {
      std::vector<std::filesystem::path> paths(reports.begin(), reports.end());
      std::ostringstream table;
      wkd::cmd_compare(paths, table, std::cerr);
      write_or_print(compare_out, table.str());
    } else if (params->parsed()) {
      std::ostringstream csv;
      wkd::cmd_params(params_dataset, params_k, params_v, params_tdim, params_sdim, csv);
      std::cout << csv.str();
    }
  } catch (const wkd::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const wkd::ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const wkd::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const wkd::NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}
