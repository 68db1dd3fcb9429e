#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dfkd/config.hpp"
#include "dfkd/dataset.hpp"
#include "dfkd/errors.hpp"
#include "dfkd/models.hpp"
#include "dfkd/run.hpp"
#include "dfkd/sweep.hpp"
#include "dfkd/teacher.hpp"
#include "testutil.hpp"

using namespace dfkd;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
  const fs::path dir = fs::path(DFKD_TEST_TMP) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_be32(std::ofstream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

// Store a synthetic dataset in IDX form so harness paths run on real files.
void write_idx_dataset(const harness::Dataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  const auto images = [&](const fs::path& p, const std::vector<std::uint8_t>& px,
                          int n) {
    std::ofstream os(p, std::ios::binary);
    write_be32(os, 2051);
    write_be32(os, n);
    write_be32(os, data.shape.h);
    write_be32(os, data.shape.w);
    os.write(reinterpret_cast<const char*>(px.data()),
             static_cast<std::streamsize>(px.size()));
  };
  const auto labels = [&](const fs::path& p, const std::vector<int>& ls) {
    std::ofstream os(p, std::ios::binary);
    write_be32(os, 2049);
    write_be32(os, static_cast<std::uint32_t>(ls.size()));
    for (int l : ls) os.put(static_cast<char>(l));
  };
  images(dir / "train-images-idx3-ubyte", data.train_pixels,
         static_cast<int>(data.train_labels.size()));
  labels(dir / "train-labels-idx1-ubyte", data.train_labels);
  images(dir / "t10k-images-idx3-ubyte", data.test_pixels,
         static_cast<int>(data.test_labels.size()));
  labels(dir / "t10k-labels-idx1-ubyte", data.test_labels);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config: parsing, fractions, overrides, hash") {
  const auto cfg = harness::Config::from_string(
      "# comment line\n"
      "dataset = mnist\n"
      "adv.k_begin = 1/3   # trailing comment\n"
      "kd.epochs = 50\n"
      "spl.lambda0 = 2.2\n"
      "flag = true\n");
  CHECK(cfg.get_string("dataset") == "mnist");
  CHECK(cfg.get_double("adv.k_begin") == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(cfg.get_int("kd.epochs") == 50);
  CHECK(cfg.get_double("spl.lambda0") == 2.2);
  CHECK(cfg.get_bool("flag", false));
  CHECK(cfg.get_int("missing", 7) == 7);
  CHECK_THROWS_AS(cfg.get_string("missing"), argument_error);
  CHECK_THROWS_AS(harness::Config::from_string("novalue\n"), argument_error);
  CHECK_THROWS_AS(harness::parse_real("abc"), argument_error);

  harness::Config copy = cfg;
  CHECK(copy.hash() == cfg.hash());
  copy.set("kd.epochs", "51");
  CHECK(copy.hash() != cfg.hash());

  // canonical round trip
  const auto again = harness::Config::from_string(cfg.canonical());
  CHECK(again.hash() == cfg.hash());
}

TEST_CASE("idx round trip and dataset access") {
  const auto dir = tmp_dir("idx");
  const auto data = testutil::synthetic_dataset(64, 32);
  write_idx_dataset(data, dir / "mnist");

  const auto loaded = harness::load_dataset("mnist", dir);
  CHECK(loaded.shape == data.shape);
  CHECK(loaded.count(harness::Split::Train) == 64);
  CHECK(loaded.count(harness::Split::Test) == 32);
  CHECK(loaded.train_labels == data.train_labels);

  const Mat batch = loaded.image_range(harness::Split::Train, 0, 4);
  CHECK(batch.rows() == data.shape.flat());
  CHECK(batch.cols() == 4);
  CHECK(batch.maxCoeff() <= 1.0);
  CHECK(batch.minCoeff() >= 0.0);
  // pixel values divide by 255 exactly
  CHECK(batch(0, 0) == data.train_pixels[0] / 255.0);

  CHECK_THROWS_AS(harness::load_dataset("mnist", dir / "nowhere"), setup_error);
  CHECK_THROWS_AS(harness::load_dataset("bogus", dir), argument_error);
}

TEST_CASE("classifier zoo parameter budgets") {
  nn::Network t = harness::build_classifier("cnn_t", {1, 28, 28}, 10, 0);
  nn::Network s = harness::build_classifier("cnn_s", {1, 28, 28}, 10, 0);
  CHECK(t.param_count() > 250000);
  CHECK(t.param_count() < 350000);
  CHECK(s.param_count() > 60000);
  CHECK(s.param_count() < 100000);
  CHECK(t.batch_norms().size() == 4);
  CHECK_THROWS_AS(harness::build_classifier("mlp", {1, 28, 28}, 10, 0),
                  argument_error);
  // 32x32x3 variants build and forward
  nn::Network c = harness::build_classifier("cnn_t", {3, 32, 32}, 10, 0);
  Rng rng(1, 1);
  CHECK(c.forward(rng.normal_mat(3 * 32 * 32, 2), nn::Mode::Train).rows() == 10);
}

TEST_CASE("teacher training: determinism, truncation prefix, chance level") {
  const auto data = testutil::synthetic_dataset(512, 128);

  harness::TeacherTrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 64;
  cfg.seed = 5;

  nn::Network a = harness::build_classifier("cnn_s", data.shape, 3, 5);
  const auto ra = harness::train_teacher(a, data, cfg);
  CHECK(ra.steps_run == 16);
  CHECK(ra.epoch_acc.size() == 2);
  CHECK(ra.final_acc1 > 0.8);  // synthetic blobs are easy

  nn::Network b = harness::build_classifier("cnn_s", data.shape, 3, 5);
  const auto rb = harness::train_teacher(b, data, cfg);
  CHECK(ra.final_acc1 == rb.final_acc1);  // fixed seed, fixed result

  // truncated training is a prefix: 1.5 epochs = 12 steps
  harness::TeacherTrainConfig half = cfg;
  half.epochs = 1.5;
  nn::Network c = harness::build_classifier("cnn_s", data.shape, 3, 5);
  const auto rc = harness::train_teacher(c, data, half);
  CHECK(rc.steps_run == 12);

  // zero epochs: untrained output near chance
  harness::TeacherTrainConfig zero = cfg;
  zero.epochs = 0.0;
  nn::Network d = harness::build_classifier("cnn_s", data.shape, 3, 5);
  const auto rd = harness::train_teacher(d, data, zero);
  CHECK(rd.steps_run == 0);
  CHECK(rd.final_acc1 < 0.7);
}

TEST_CASE("teacher checkpoint round trip") {
  const auto dir = tmp_dir("teacher");
  const auto data = testutil::synthetic_dataset(128, 64);
  nn::Network net = harness::build_classifier("cnn_s", data.shape, 3, 7);
  harness::TeacherTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  harness::train_teacher(net, data, cfg);

  harness::TeacherMeta meta{"cnn_s", "synthetic", data.shape, 3, 0.9, 1.0};
  harness::save_teacher(dir / "t.ckpt", net, meta);

  harness::TeacherMeta loaded_meta;
  nn::Network loaded = harness::load_teacher(dir / "t.ckpt", &loaded_meta);
  CHECK(loaded_meta.arch == "cnn_s");
  CHECK(loaded_meta.dataset == "synthetic");
  CHECK(loaded_meta.acc1 == 0.9);

  Rng rng(2, 1);
  const Mat x = rng.normal_mat(data.shape.flat(), 3);
  CHECK((net.forward(x, nn::Mode::Eval) - loaded.forward(x, nn::Mode::Eval))
            .norm() == 0.0);

  CHECK_THROWS_AS(harness::load_teacher(dir / "absent.ckpt", nullptr), setup_error);
}

TEST_CASE("run_distill: artifacts, determinism, kill-resume") {
  const auto dir = tmp_dir("run");
  const auto data = testutil::synthetic_dataset(256, 96);
  write_idx_dataset(data, dir / "data" / "mnist");

  // teacher checkpoint
  nn::Network teacher = harness::build_classifier("cnn_s", data.shape, 3, 11);
  harness::TeacherTrainConfig tcfg;
  tcfg.epochs = 2;
  tcfg.batch_size = 32;
  tcfg.seed = 11;
  const auto treport = harness::train_teacher(teacher, data, tcfg);
  harness::save_teacher(dir / "teacher.ckpt", teacher,
                        {"cnn_s", "mnist", data.shape, 3, treport.final_acc1, 2.0});

  harness::Config cfg;
  cfg.set("dataset", "mnist");
  cfg.set("data_dir", (dir / "data").string());
  cfg.set("teacher.checkpoint", (dir / "teacher.ckpt").string());
  cfg.set("out_dir", (dir / "runA").string());
  cfg.set("seed", "3");
  cfg.set("kd.epochs", "4");
  cfg.set("kd.batch_size", "16");
  cfg.set("kd.gen_steps", "2");
  cfg.set("kd.student_steps", "2");
  cfg.set("gen.latent_dim", "12");
  cfg.set("spl.lambda0", "2.0");
  cfg.set("spl.rate", "0.1");
  cfg.set("adv.alpha", "0.05");
  cfg.set("adv.k_begin", "1/4");
  cfg.set("adv.k_end", "3/4");
  cfg.set("adv.lambda_final", "0.15");
  cfg.set("eval.chunk", "48");
  cfg.set("eval.stability_window_start", "1");

  const auto summary = harness::run_distill(cfg);
  CHECK(summary.epochs_run == 4);
  CHECK(fs::exists(dir / "runA" / "epochs.csv"));
  CHECK(fs::exists(dir / "runA" / "config.cfg"));
  CHECK(fs::exists(dir / "runA" / "VERSION"));
  CHECK(fs::exists(dir / "runA" / "best.ckpt"));
  CHECK(fs::exists(dir / "runA" / "last.ckpt"));
  CHECK(fs::exists(dir / "runA" / "summary.csv"));
  CHECK(fs::exists(dir / "runA" / "difficulty" / "epoch_0003.csv"));

  const auto reports = harness::read_epochs_csv(dir / "runA" / "epochs.csv");
  REQUIRE(reports.size() == 4);
  for (int t = 0; t < 4; ++t) CHECK(reports[t].epoch == t);
  // lambda and alpha recorded non-decreasing
  for (int t = 1; t < 4; ++t) {
    CHECK(reports[t].lambda_t >= reports[t - 1].lambda_t);
  }
  const auto back = harness::read_summary_csv(dir / "runA" / "summary.csv");
  CHECK(back.best_acc1 == summary.best_acc1);
  CHECK(back.best_epoch == summary.best_epoch);

  // rerunning without resume refuses to clobber
  CHECK_THROWS_AS(harness::run_distill(cfg), setup_error);

  // identical config into a fresh dir gives a byte-identical epoch log
  harness::Config cfg2 = cfg;
  cfg2.set("out_dir", (dir / "runB").string());
  harness::run_distill(cfg2);
  // the out_dir key differs inside config.cfg but the CSV must match
  CHECK(slurp(dir / "runA" / "epochs.csv") == slurp(dir / "runB" / "epochs.csv"));

  // kill after 2 epochs, then resume: same bytes as the uninterrupted run
  harness::Config cfg3 = cfg;
  cfg3.set("out_dir", (dir / "runC").string());
  harness::run_distill(cfg3, false, 2);
  CHECK_FALSE(fs::exists(dir / "runC" / "summary.csv"));
  harness::run_distill(cfg3, true);
  CHECK(slurp(dir / "runA" / "epochs.csv") == slurp(dir / "runC" / "epochs.csv"));
  CHECK(slurp(dir / "runA" / "summary.csv") == slurp(dir / "runC" / "summary.csv"));

  // load_run restores the best checkpoint state
  const auto loaded = harness::load_run(dir / "runA", "best");
  CHECK(loaded.reports.size() >= 1);

  // config-hash mismatch on resume is rejected
  harness::Config cfg4 = cfg;
  cfg4.set("spl.lambda0", "99");
  CHECK_THROWS_AS(harness::run_distill(cfg4, true), setup_error);
}

TEST_CASE("sweep: grid parsing, cartesian product, failure isolation") {
  const auto axis = harness::parse_grid_axis("spl.lambda0=2,2.2,2.5");
  CHECK(axis.key == "spl.lambda0");
  REQUIRE(axis.values.size() == 3);
  CHECK(axis.values[1] == "2.2");
  CHECK_THROWS_AS(harness::parse_grid_axis("nokey"), argument_error);

  const auto dir = tmp_dir("sweep");
  const auto data = testutil::synthetic_dataset(128, 48);
  write_idx_dataset(data, dir / "data" / "mnist");
  nn::Network teacher = harness::build_classifier("cnn_s", data.shape, 3, 21);
  harness::TeacherTrainConfig tcfg;
  tcfg.epochs = 1;
  tcfg.batch_size = 32;
  harness::train_teacher(teacher, data, tcfg);
  harness::save_teacher(dir / "teacher.ckpt", teacher,
                        {"cnn_s", "mnist", data.shape, 3, 0.9, 1.0});

  harness::Config base;
  base.set("dataset", "mnist");
  base.set("data_dir", (dir / "data").string());
  base.set("teacher.checkpoint", (dir / "teacher.ckpt").string());
  base.set("out_dir", (dir / "ignored").string());
  base.set("kd.epochs", "2");
  base.set("kd.batch_size", "12");
  base.set("kd.gen_steps", "1");
  base.set("kd.student_steps", "1");
  base.set("gen.latent_dim", "8");
  base.set("adv.lambda_final", "1.0");
  base.set("spl.lambda0", "2.0");
  base.set("spl.strategy", "log");
  base.set("eval.chunk", "48");
  base.set("eval.stability_window_start", "0");

  // unknown grid key rejected up front
  CHECK_THROWS_AS(
      harness::run_sweep(base, {harness::parse_grid_axis("spl.lambda=1,2")},
                         dir / "s0"),
      argument_error);

  // 2x2 grid, one value invalid: failure recorded, sweep continues
  const auto result = harness::run_sweep(
      base,
      {harness::parse_grid_axis("spl.lambda0=2.0,-1"),
       harness::parse_grid_axis("spl.strategy=hard,log")},
      dir / "s1");
  REQUIRE(result.rows.size() == 4);
  int ok = 0, failed = 0;
  for (const auto& row : result.rows) (row.ok ? ok : failed)++;
  CHECK(ok == 2);
  CHECK(failed == 2);
  CHECK(fs::exists(dir / "s1" / "sweep_summary.csv"));
  CHECK(fs::exists(dir / "s1" / "point_000" / "epochs.csv"));

  // single-point sweep equals a direct run
  harness::Config single = base;
  single.set("out_dir", (dir / "direct").string());
  const auto direct = harness::run_distill(single);
  const auto one = harness::run_sweep(
      base, {harness::parse_grid_axis("spl.lambda0=2.0")}, dir / "s2");
  REQUIRE(one.rows.size() == 1);
  CHECK(one.rows[0].ok);
  CHECK(one.rows[0].summary.best_acc1 == direct.best_acc1);
}
