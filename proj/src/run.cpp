#include "dfkd/run.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dfkd/errors.hpp"
#include "dfkd/models.hpp"
#include "dfkd/version.hpp"

namespace dfkd::harness {
namespace {

namespace fs = std::filesystem;

void write_report_row(std::ostream& os, const distill::EpochReport& r) {
  os << r.epoch << ',' << format_double(r.acc1) << ',' << format_double(r.agree1)
     << ',' << format_double(r.loyalty_mean) << ',' << format_double(r.lambda_t)
     << ',' << format_double(r.alpha_adv_t) << ',' << format_double(r.mean_weight)
     << ',' << format_double(r.mean_difficulty) << ','
     << format_double(r.gen_loss.adv) << ',' << format_double(r.gen_loss.bn)
     << ',' << format_double(r.gen_loss.oh) << ','
     << format_double(r.weighted_kd_loss) << '\n';
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

constexpr char kEpochHeader[] =
    "epoch,acc1,agree1,loyalty_mean,lambda,alpha_adv,mean_weight,"
    "mean_difficulty,gen_adv,gen_bn,gen_oh,kd_weighted";

// ------------------------------------------------------------- checkpoints

struct CkptHeader {
  std::uint64_t config_hash = 0;
  std::int32_t epoch_next = 0;
  std::int32_t best_epoch = -1;
  double best_acc1 = 0.0;
};

void save_checkpoint(const fs::path& path, const CkptHeader& hdr,
                     const std::vector<distill::EpochReport>& reports,
                     const distill::Trainer& trainer) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw setup_error("cannot write checkpoint " + tmp.string());
    nn::write_tag(os, "run-ckpt-v1");
    os.write(reinterpret_cast<const char*>(&hdr), sizeof(hdr));
    const std::uint32_t n = static_cast<std::uint32_t>(reports.size());
    os.write(reinterpret_cast<const char*>(&n), sizeof(n));
    for (const auto& r : reports)
      os.write(reinterpret_cast<const char*>(&r), sizeof(r));
    trainer.save_state(os);
    if (!os) throw setup_error("short write on checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

void load_checkpoint(const fs::path& path, std::uint64_t expected_hash,
                     CkptHeader* hdr, std::vector<distill::EpochReport>* reports,
                     distill::Trainer* trainer) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw setup_error("checkpoint not found: " + path.string());
  nn::expect_tag(is, "run-ckpt-v1");
  is.read(reinterpret_cast<char*>(hdr), sizeof(*hdr));
  if (!is) throw data_error("checkpoint header truncated: " + path.string());
  if (expected_hash != 0 && hdr->config_hash != expected_hash)
    throw setup_error("checkpoint " + path.string() +
                      " was produced by a different config");
  std::uint32_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof(n));
  reports->resize(n);
  for (auto& r : *reports) is.read(reinterpret_cast<char*>(&r), sizeof(r));
  trainer->load_state(is);
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

RunSetup build_run_setup(const Config& cfg) {
  RunSetup s;
  s.out_dir = cfg.get_string("out_dir");
  s.eval_chunk = cfg.get_int("eval.chunk", 1000);
  s.difficulty_bins = cfg.get_int("eval.difficulty_bins", 20);
  s.stability_window_start = cfg.get_int("eval.stability_window_start", 10);

  s.dataset = load_dataset(cfg.get_string("dataset", "mnist"),
                           cfg.get_string("data_dir", "data"));

  s.teacher = load_teacher(cfg.get_string("teacher.checkpoint"), &s.teacher_meta);
  if (s.teacher_meta.dataset != s.dataset.id)
    throw setup_error("teacher was trained on '" + s.teacher_meta.dataset +
                      "' but the run uses '" + s.dataset.id + "'");
  if (s.teacher_meta.classes != s.dataset.classes ||
      !(s.teacher_meta.input == s.dataset.shape))
    throw setup_error("teacher checkpoint geometry does not match the dataset");

  const std::uint64_t seed = cfg.get_u64("seed", 0);
  s.student = build_classifier(cfg.get_string("student.arch", "cnn_s"),
                               s.dataset.shape, s.dataset.classes, seed);

  s.gen_spec.latent_dim = cfg.get_int("gen.latent_dim", 64);
  s.gen_spec.output_shape = s.dataset.shape;
  s.gen_spec.architecture = cfg.get_string("gen.arch", "upconv3");
  s.gen_spec.seed = seed;
  s.generator = gen::build_generator(s.gen_spec);

  distill::DistillConfig& d = s.dcfg;
  d.temperature = cfg.get_double("kd.T", 4.0);
  d.total_epochs = cfg.get_int("kd.epochs", 50);
  d.batch_size = cfg.get_int("kd.batch_size", 256);
  // gen.steps_per_epoch is an accepted alias for kd.gen_steps.
  d.gen_steps = cfg.get_int("kd.gen_steps", cfg.get_int("gen.steps_per_epoch", 15));
  d.student_steps = cfg.get_int("kd.student_steps", 15);
  d.strategy = spl::strategy_from_string(cfg.get_string("spl.strategy", "log"));
  d.lambda_schedule = spl::LambdaSchedule(cfg.get_double("spl.lambda0", 2.0),
                                          cfg.get_double("spl.rate", 0.05));
  d.adv_schedule = sched::AdvSchedule(
      cfg.get_double("adv.alpha", 0.1), cfg.get_double("adv.k_begin", 0.2),
      cfg.get_double("adv.k_end", 0.75), d.total_epochs,
      cfg.get_double("adv.lambda_final", 0.1 * 0.75 * d.total_epochs));
  d.gen_coef.alpha_bn = cfg.get_double("gen.alpha_bn", 1.0);
  d.gen_coef.alpha_oh = cfg.get_double("gen.alpha_oh", 1.0);
  d.gen_coef.divergence =
      losses::divergence_from_string(cfg.get_string("gen.divergence", "js"));
  d.gen_coef.temperature = cfg.get_double("gen.temperature", 1.0);
  d.gen_lr = cfg.get_double("gen.lr", 1e-3);
  d.student_lr = cfg.get_double("student.lr", 1e-3);
  d.seed = seed;

  const std::string mode = cfg.get_string("mode", "curriculum");
  if (mode == "curriculum") {
    d.curriculum = true;
  } else if (mode == "vanilla") {
    d.curriculum = false;
    d.fixed_alpha_adv = cfg.get_double("adv.fixed_alpha", 0.0);
  } else {
    throw argument_error("mode must be curriculum|vanilla, got '" + mode + "'");
  }
  d.validate();

  for (const auto& w : sched::validate_schedule(d.adv_schedule))
    std::cerr << "[schedule warning] " << w.message << "\n";
  return s;
}

distill::EvalData make_eval_data(nn::Network& teacher, const Dataset& data,
                                 int chunk) {
  distill::EvalData eval;
  const int total = data.count(Split::Test);
  eval.labels.resize(total);
  eval.teacher_logits.resize(data.classes, total);
  for (int start = 0; start < total; start += chunk) {
    const int n = std::min(chunk, total - start);
    eval.x_chunks.push_back(data.image_range(Split::Test, start, n));
    eval.teacher_logits.middleCols(start, n) =
        teacher.forward(eval.x_chunks.back(), nn::Mode::Eval);
    eval.labels.segment(start, n) = data.label_range(Split::Test, start, n);
  }
  return eval;
}

RunSummary summarize(const std::vector<distill::EpochReport>& reports,
                     int window_start, const fs::path& dir) {
  RunSummary s;
  s.dir = dir;
  s.epochs_run = static_cast<int>(reports.size());
  s.stability_window_start = window_start;
  for (const auto& r : reports) {
    if (r.acc1 > s.best_acc1 || s.best_epoch < 0) {
      s.best_acc1 = r.acc1;
      s.best_epoch = r.epoch;
      s.agree1_at_best = r.agree1;
      s.loyalty_at_best = r.loyalty_mean;
    }
    s.peak_agree1 = std::max(s.peak_agree1, r.agree1);
    s.peak_loyalty = std::max(s.peak_loyalty, r.loyalty_mean);
  }
  if (!reports.empty() && window_start < static_cast<int>(reports.size())) {
    std::vector<double> acc;
    acc.reserve(reports.size());
    for (const auto& r : reports) acc.push_back(r.acc1);
    const auto st = metrics::stability_stats(acc, window_start);
    s.stab_mean = st.mean;
    s.stab_var = st.variance;
  }
  return s;
}

RunSummary run_distill(const Config& cfg, bool resume,
                       std::optional<int> stop_after_epochs) {
  RunSetup setup = build_run_setup(cfg);
  const fs::path dir = setup.out_dir;
  fs::create_directories(dir);
  fs::create_directories(dir / "difficulty");

  const fs::path snapshot = dir / "config.cfg";
  if (fs::exists(snapshot)) {
    if (Config::from_file(snapshot).hash() != cfg.hash()) {
      throw setup_error("run directory " + dir.string() +
                        " holds a different config; refusing to mix runs");
    }
  } else {
    cfg.save(snapshot);
  }
  {
    std::ofstream v(dir / "VERSION");
    v << "revision = " << kGitRevision << "\n"
      << "config_hash = " << cfg.hash() << "\n";
  }

  distill::Trainer trainer(&setup.teacher, &setup.student, &setup.generator,
                           setup.gen_spec, setup.dcfg);
  std::vector<distill::EpochReport> reports;
  CkptHeader hdr;
  hdr.config_hash = cfg.hash();

  const fs::path last_ckpt = dir / "last.ckpt";
  const fs::path best_ckpt = dir / "best.ckpt";
  if (fs::exists(last_ckpt)) {
    if (!resume)
      throw setup_error("run directory " + dir.string() +
                        " already contains checkpoints; pass resume to continue");
    load_checkpoint(last_ckpt, cfg.hash(), &hdr, &reports, &trainer);
  }

  const distill::EvalData eval =
      make_eval_data(setup.teacher, setup.dataset, setup.eval_chunk);

  const int stop = stop_after_epochs
                       ? std::min(*stop_after_epochs, setup.dcfg.total_epochs)
                       : setup.dcfg.total_epochs;
  for (int t = hdr.epoch_next; t < stop; ++t) {
    distill::EpochReport report;
    try {
      report = trainer.train_epoch(t, eval);
    } catch (const training_diverged&) {
      save_checkpoint(dir / "crash.ckpt", hdr, reports, trainer);
      throw;
    }
    reports.push_back(report);
    write_epochs_csv(dir / "epochs.csv", reports);
    char hist_name[32];
    std::snprintf(hist_name, sizeof(hist_name), "epoch_%04d.csv", t);
    write_histogram_csv(
        dir / "difficulty" / hist_name,
        metrics::difficulty_histogram(trainer.last_epoch_difficulties(),
                                      setup.difficulty_bins));

    hdr.epoch_next = t + 1;
    if (report.acc1 > hdr.best_acc1 || hdr.best_epoch < 0) {
      hdr.best_acc1 = report.acc1;
      hdr.best_epoch = t;
      save_checkpoint(best_ckpt, hdr, reports, trainer);
    }
    save_checkpoint(last_ckpt, hdr, reports, trainer);
  }

  RunSummary summary = summarize(reports, setup.stability_window_start, dir);
  if (hdr.epoch_next >= setup.dcfg.total_epochs)
    write_summary_csv(dir / "summary.csv", summary);
  return summary;
}

LoadedRun load_run(const fs::path& run_dir, const std::string& which) {
  const Config cfg = Config::from_file(run_dir / "config.cfg");
  LoadedRun lr{build_run_setup(cfg), {}, 0};
  distill::Trainer trainer(&lr.setup.teacher, &lr.setup.student,
                           &lr.setup.generator, lr.setup.gen_spec,
                           lr.setup.dcfg);
  CkptHeader hdr;
  load_checkpoint(run_dir / (which + ".ckpt"), cfg.hash(), &hdr, &lr.reports,
                  &trainer);
  lr.epoch_next = hdr.epoch_next;
  return lr;
}

// ------------------------------------------------------------------ CSV I/O

void write_epochs_csv(const fs::path& path,
                      const std::vector<distill::EpochReport>& reports) {
  std::ofstream os(path);
  if (!os) throw setup_error("cannot write " + path.string());
  os << kEpochHeader << '\n';
  for (const auto& r : reports) write_report_row(os, r);
}

std::vector<distill::EpochReport> read_epochs_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw setup_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kEpochHeader)
    throw data_error(path.string() + ": unexpected epoch CSV header");
  std::vector<distill::EpochReport> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 12) throw data_error(path.string() + ": malformed row");
    distill::EpochReport r;
    r.epoch = std::stoi(f[0]);
    r.acc1 = std::stod(f[1]);
    r.agree1 = std::stod(f[2]);
    r.loyalty_mean = std::stod(f[3]);
    r.lambda_t = std::stod(f[4]);
    r.alpha_adv_t = std::stod(f[5]);
    r.mean_weight = std::stod(f[6]);
    r.mean_difficulty = std::stod(f[7]);
    r.gen_loss.adv = std::stod(f[8]);
    r.gen_loss.bn = std::stod(f[9]);
    r.gen_loss.oh = std::stod(f[10]);
    r.weighted_kd_loss = std::stod(f[11]);
    out.push_back(r);
  }
  return out;
}

void write_histogram_csv(const fs::path& path, const metrics::Histogram& hist) {
  std::ofstream os(path);
  if (!os) throw setup_error("cannot write " + path.string());
  os << "bin_left,bin_right,count\n";
  for (std::size_t i = 0; i < hist.counts.size(); ++i)
    os << format_double(hist.edges[static_cast<Eigen::Index>(i)]) << ','
       << format_double(hist.edges[static_cast<Eigen::Index>(i) + 1]) << ','
       << hist.counts[i] << '\n';
}

void write_summary_csv(const fs::path& path, const RunSummary& s) {
  std::ofstream os(path);
  if (!os) throw setup_error("cannot write " + path.string());
  os << "epochs_run,best_epoch,best_acc1,agree1_at_best,loyalty_at_best,"
        "peak_agree1,peak_loyalty,stab_mean,stab_var,stability_window_start\n";
  os << s.epochs_run << ',' << s.best_epoch << ',' << format_double(s.best_acc1)
     << ',' << format_double(s.agree1_at_best) << ','
     << format_double(s.loyalty_at_best) << ',' << format_double(s.peak_agree1)
     << ',' << format_double(s.peak_loyalty) << ',' << format_double(s.stab_mean)
     << ',' << format_double(s.stab_var) << ',' << s.stability_window_start
     << '\n';
}

RunSummary read_summary_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw setup_error("cannot read " + path.string());
  std::string line;
  std::getline(is, line);  // header
  if (!std::getline(is, line))
    throw data_error(path.string() + ": missing summary row");
  const auto f = split_csv_line(line);
  if (f.size() != 10) throw data_error(path.string() + ": malformed summary");
  RunSummary s;
  s.dir = path.parent_path();
  s.epochs_run = std::stoi(f[0]);
  s.best_epoch = std::stoi(f[1]);
  s.best_acc1 = std::stod(f[2]);
  s.agree1_at_best = std::stod(f[3]);
  s.loyalty_at_best = std::stod(f[4]);
  s.peak_agree1 = std::stod(f[5]);
  s.peak_loyalty = std::stod(f[6]);
  s.stab_mean = std::stod(f[7]);
  s.stab_var = std::stod(f[8]);
  s.stability_window_start = std::stoi(f[9]);
  return s;
}

}  // namespace dfkd::harness
