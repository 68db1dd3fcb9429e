#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dfkd/config.hpp"
#include "dfkd/dataset.hpp"
#include "dfkd/distill.hpp"
#include "dfkd/metrics.hpp"
#include "dfkd/teacher.hpp"

namespace dfkd::harness {

// Everything a distillation run needs, assembled from one config.
struct RunSetup {
  Dataset dataset;
  nn::Network teacher;
  TeacherMeta teacher_meta;
  nn::Network student;
  nn::Network generator;
  gen::GeneratorSpec gen_spec;
  distill::DistillConfig dcfg;
  std::filesystem::path out_dir;
  int eval_chunk = 1000;
  int difficulty_bins = 20;
  int stability_window_start = 10;
};

RunSetup build_run_setup(const Config& cfg);

distill::EvalData make_eval_data(nn::Network& teacher, const Dataset& data,
                                 int chunk);

struct RunSummary {
  std::filesystem::path dir;
  int epochs_run = 0;
  int best_epoch = -1;
  double best_acc1 = 0.0;
  double agree1_at_best = 0.0;
  double loyalty_at_best = 0.0;
  double peak_agree1 = 0.0;
  double peak_loyalty = 0.0;
  double stab_mean = 0.0;
  double stab_var = 0.0;
  int stability_window_start = 0;
};

// Execute (or, with resume, continue) the full N-epoch distillation run
// described by the config. Writes the per-epoch CSV, per-epoch difficulty
// histograms, last/best checkpoints and the final summary into out_dir.
// stop_after_epochs truncates the loop after that many total epochs, leaving
// the directory exactly as a killed run would (used to exercise resume).
RunSummary run_distill(const Config& cfg, bool resume = false,
                       std::optional<int> stop_after_epochs = std::nullopt);

// Rebuild a finished run's networks and load the requested checkpoint
// ("best" or "last"); used by the evaluate / export-plots commands.
struct LoadedRun {
  RunSetup setup;
  std::vector<distill::EpochReport> reports;
  int epoch_next = 0;
};
LoadedRun load_run(const std::filesystem::path& run_dir,
                   const std::string& which_checkpoint);

// CSV helpers (epoch log schema:
// epoch,acc1,agree1,loyalty_mean,lambda,alpha_adv,mean_weight,
// mean_difficulty,gen_adv,gen_bn,gen_oh,kd_weighted).
void write_epochs_csv(const std::filesystem::path& path,
                      const std::vector<distill::EpochReport>& reports);
std::vector<distill::EpochReport> read_epochs_csv(
    const std::filesystem::path& path);

void write_histogram_csv(const std::filesystem::path& path,
                         const metrics::Histogram& hist);

void write_summary_csv(const std::filesystem::path& path, const RunSummary& s);
RunSummary read_summary_csv(const std::filesystem::path& path);

RunSummary summarize(const std::vector<distill::EpochReport>& reports,
                     int window_start, const std::filesystem::path& dir);

// Deterministic double formatting used in every CSV (round-trip exact).
std::string format_double(double v);

}  // namespace dfkd::harness
