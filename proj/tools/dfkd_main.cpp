// Command-line front end: teacher pretraining, data-free distillation runs,
// hyperparameter sweeps, evaluation and plot-data export.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dfkd/config.hpp"
#include "dfkd/errors.hpp"
#include "dfkd/models.hpp"
#include "dfkd/run.hpp"
#include "dfkd/sweep.hpp"
#include "dfkd/teacher.hpp"
#include "dfkd/version.hpp"

namespace fs = std::filesystem;
using namespace dfkd;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, CommonOpts* opts) {
  cmd->add_option("-c,--config", opts->config_path, "flat key=value config file");
  cmd->add_option("--set", opts->overrides,
                  "override a config key (key=value, repeatable)");
}

harness::Config load_config(const CommonOpts& opts) {
  harness::Config cfg = opts.config_path.empty()
                            ? harness::Config()
                            : harness::Config::from_file(opts.config_path);
  for (const auto& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw argument_error("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

int train_teacher_cmd(const CommonOpts& opts, double epochs_override,
                      const std::string& out_override) {
  harness::Config cfg = load_config(opts);
  const auto data = harness::load_dataset(cfg.get_string("dataset", "mnist"),
                                          cfg.get_string("data_dir", "data"));
  harness::TeacherTrainConfig tcfg;
  tcfg.epochs = epochs_override >= 0.0 ? epochs_override
                                       : cfg.get_double("teacher.epochs", 6.0);
  tcfg.batch_size = cfg.get_int("teacher.batch_size", 128);
  tcfg.lr = cfg.get_double("teacher.lr", 1e-3);
  tcfg.seed = cfg.get_u64("seed", 0);

  const std::string arch = cfg.get_string("teacher.arch", "cnn_t");
  nn::Network net =
      harness::build_classifier(arch, data.shape, data.classes, tcfg.seed);
  std::printf("training %s on %s: %ld params, %.2f epochs\n", arch.c_str(),
              data.id.c_str(), net.param_count(), tcfg.epochs);
  const auto report = harness::train_teacher(net, data, tcfg);
  for (std::size_t e = 0; e < report.epoch_acc.size(); ++e)
    std::printf("  epoch %zu: test acc1 %.4f\n", e, report.epoch_acc[e]);
  std::printf("scratch accuracy: %.4f (%ld steps)\n", report.final_acc1,
              report.steps_run);

  const std::string out = !out_override.empty()
                              ? out_override
                              : cfg.get_string("teacher.checkpoint");
  harness::TeacherMeta meta{arch, data.id, data.shape, data.classes,
                            report.final_acc1, tcfg.epochs};
  harness::save_teacher(out, net, meta);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int distill_cmd(const CommonOpts& opts, bool resume) {
  const harness::Config cfg = load_config(opts);
  const auto summary = harness::run_distill(cfg, resume);
  std::printf(
      "run complete: %d epochs, best acc1 %.4f at epoch %d "
      "(agree1 %.4f, loyalty %.4f), stability mean %.4f var %.6g\n",
      summary.epochs_run, summary.best_acc1, summary.best_epoch,
      summary.agree1_at_best, summary.loyalty_at_best, summary.stab_mean,
      summary.stab_var);
  return 0;
}

int sweep_cmd(const CommonOpts& opts, const std::vector<std::string>& grids,
              const std::string& out_dir) {
  harness::Config cfg = load_config(opts);
  std::vector<harness::GridAxis> axes;
  for (const auto& g : grids) axes.push_back(harness::parse_grid_axis(g));
  const fs::path root = out_dir.empty()
                            ? fs::path(cfg.get_string("out_dir")) / "sweep"
                            : fs::path(out_dir);
  const auto result = harness::run_sweep(cfg, axes, root);
  std::size_t ok = 0;
  for (const auto& r : result.rows) ok += r.ok ? 1 : 0;
  std::printf("sweep finished: %zu/%zu points ok, summary at %s\n", ok,
              result.rows.size(), (root / "sweep_summary.csv").c_str());
  return 0;
}

int evaluate_cmd(const std::string& run_dir, const std::string& which,
                 const std::string& loyalty_csv) {
  auto loaded = harness::load_run(run_dir, which);
  auto& setup = loaded.setup;
  const auto eval =
      harness::make_eval_data(setup.teacher, setup.dataset, setup.eval_chunk);
  distill::Trainer trainer(&setup.teacher, &setup.student, &setup.generator,
                           setup.gen_spec, setup.dcfg);
  // trainer state was already loaded by load_run via its own Trainer; the
  // student network object is shared, so evaluating through a fresh batch
  // of logits is enough here.
  const auto batch = trainer.evaluate(eval);
  const auto loyalty = metrics::probability_loyalty(batch);
  std::printf("checkpoint: %s (epoch_next %d)\n", which.c_str(), loaded.epoch_next);
  std::printf("teacher scratch acc1: %.4f\n", setup.teacher_meta.acc1);
  std::printf("acc1:    %.4f\n", metrics::top1_accuracy(batch));
  std::printf("agree1:  %.4f\n", metrics::top1_agreement(batch));
  std::printf("loyalty: %.4f\n", loyalty.mean);
  if (!loyalty_csv.empty()) {
    const auto hist = metrics::difficulty_histogram(
        Vec::Ones(loyalty.per_sample.size()) - loyalty.per_sample, 40);
    harness::write_histogram_csv(loyalty_csv, hist);
    std::printf("wrote %s\n", loyalty_csv.c_str());
  }
  return 0;
}

void write_pgm(const fs::path& path, const Mat& column, nn::Shape shape) {
  std::ofstream os(path, std::ios::binary);
  if (shape.c == 1) {
    os << "P5\n" << shape.w << " " << shape.h << "\n255\n";
  } else {
    os << "P6\n" << shape.w << " " << shape.h << "\n255\n";
  }
  for (int h = 0; h < shape.h; ++h) {
    for (int w = 0; w < shape.w; ++w) {
      for (int c = 0; c < shape.c; ++c) {
        const double v = column((c * shape.h + h) * shape.w + w, 0);
        const int byte = std::clamp(static_cast<int>(v * 255.0 + 0.5), 0, 255);
        os.put(static_cast<char>(byte));
      }
    }
  }
}

int export_plots_cmd(const std::string& run_dir, const std::string& out_dir,
                     int dump_samples) {
  auto loaded = harness::load_run(run_dir, "best");
  auto& setup = loaded.setup;
  const fs::path out = out_dir.empty() ? fs::path(run_dir) / "plots" : fs::path(out_dir);
  fs::create_directories(out);

  // Loyalty distribution of the best student over the test split.
  const auto eval =
      harness::make_eval_data(setup.teacher, setup.dataset, setup.eval_chunk);
  distill::Trainer trainer(&setup.teacher, &setup.student, &setup.generator,
                           setup.gen_spec, setup.dcfg);
  const auto batch = trainer.evaluate(eval);
  const auto loyalty = metrics::probability_loyalty(batch);
  metrics::Histogram lh;
  {
    // fixed [0,1] loyalty axis, 40 bins
    const int bins = 40;
    lh.edges.resize(bins + 1);
    for (int i = 0; i <= bins; ++i) lh.edges[i] = static_cast<double>(i) / bins;
    lh.counts.assign(bins, 0);
    for (Eigen::Index i = 0; i < loyalty.per_sample.size(); ++i) {
      int bin = static_cast<int>(loyalty.per_sample[i] * bins);
      bin = std::clamp(bin, 0, bins - 1);
      ++lh.counts[static_cast<std::size_t>(bin)];
    }
  }
  harness::write_histogram_csv(out / "loyalty_hist.csv", lh);

  // Difficulty histograms across epochs, concatenated for plotting.
  {
    std::ofstream os(out / "difficulty_all.csv");
    os << "epoch,bin_left,bin_right,count\n";
    for (int t = 0;; ++t) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d.csv", t);
      const fs::path p = fs::path(run_dir) / "difficulty" / name;
      if (!fs::exists(p)) break;
      std::ifstream is(p);
      std::string line;
      std::getline(is, line);  // header
      while (std::getline(is, line))
        if (!line.empty()) os << t << ',' << line << '\n';
    }
  }

  // Raw generated samples from the best generator.
  if (dump_samples > 0) {
    Rng z_rng(setup.dcfg.seed, 0xD0);
    const Mat z = z_rng.normal_mat(setup.gen_spec.latent_dim, dump_samples);
    const Mat x = gen::synthesize(setup.generator, setup.gen_spec, z);
    for (int i = 0; i < dump_samples; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "sample_%03d.%s", i,
                    setup.gen_spec.output_shape.c == 1 ? "pgm" : "ppm");
      write_pgm(out / name, x.col(i), setup.gen_spec.output_shape);
    }
  }
  std::printf("plot data written to %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"data-free knowledge distillation with a self-paced curriculum"};
  app.set_version_flag("--version", std::string(kGitRevision));
  app.require_subcommand(1);

  CommonOpts teacher_opts;
  double teacher_epochs = -1.0;
  std::string teacher_out;
  auto* tt = app.add_subcommand("train-teacher",
                                "train a teacher from scratch on real data");
  add_common(tt, &teacher_opts);
  tt->add_option("--epochs", teacher_epochs, "override teacher.epochs");
  tt->add_option("--out", teacher_out, "override teacher.checkpoint");

  CommonOpts noisy_opts;
  double truncation = -1.0;
  std::string noisy_out;
  auto* nt = app.add_subcommand(
      "make-noisy-teacher",
      "build an under-trained teacher by truncating the schedule");
  add_common(nt, &noisy_opts);
  nt->add_option("--truncation-epochs", truncation,
                 "epochs to train before stopping (may be fractional)")
      ->required();
  nt->add_option("--out", noisy_out, "override teacher.checkpoint")->required();

  CommonOpts distill_opts;
  bool resume = false;
  auto* dc = app.add_subcommand("distill", "run curriculum distillation");
  add_common(dc, &distill_opts);
  dc->add_flag("--resume", resume, "continue from the last checkpoint");

  CommonOpts sweep_opts;
  std::vector<std::string> grids;
  std::string sweep_out;
  auto* sw = app.add_subcommand("sweep", "grid search over config keys");
  add_common(sw, &sweep_opts);
  sw->add_option("--grid", grids, "axis spec key=v1,v2,... (repeatable)")
      ->required();
  sw->add_option("--out-dir", sweep_out, "sweep output root");

  std::string eval_run, eval_which = "best", eval_loyalty;
  auto* ev = app.add_subcommand("evaluate", "evaluate a run checkpoint");
  ev->add_option("--run", eval_run, "run directory")->required();
  ev->add_option("--checkpoint", eval_which, "best|last");
  ev->add_option("--export-loyalty", eval_loyalty,
                 "write a (1-loyalty) histogram CSV here");

  std::string plots_run, plots_out;
  int dump_samples = 0;
  auto* ep = app.add_subcommand("export-plots",
                                "write loyalty/difficulty plot CSVs");
  ep->add_option("--run", plots_run, "run directory")->required();
  ep->add_option("--out", plots_out, "output directory (default RUN/plots)");
  ep->add_option("--dump-samples", dump_samples,
                 "also dump N generated samples as PGM/PPM");

  CLI11_PARSE(app, argc, argv);

  try {
    if (tt->parsed()) return train_teacher_cmd(teacher_opts, teacher_epochs, teacher_out);
    if (nt->parsed()) {
      CommonOpts opts = noisy_opts;
      return train_teacher_cmd(opts, truncation, noisy_out);
    }
    if (dc->parsed()) return distill_cmd(distill_opts, resume);
    if (sw->parsed()) return sweep_cmd(sweep_opts, grids, sweep_out);
    if (ev->parsed()) return evaluate_cmd(eval_run, eval_which, eval_loyalty);
    if (ep->parsed()) return export_plots_cmd(plots_run, plots_out, dump_samples);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
