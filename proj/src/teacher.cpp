#include "dfkd/teacher.hpp"

#include <cmath>
#include <fstream>

#include "dfkd/errors.hpp"
#include "dfkd/losses.hpp"
#include "dfkd/metrics.hpp"
#include "dfkd/models.hpp"
#include "dfkd/rng.hpp"

namespace dfkd::harness {

double evaluate_classifier(nn::Network& net, const Dataset& data, int chunk) {
  const int total = data.count(Split::Test);
  long hits = 0;
  for (int start = 0; start < total; start += chunk) {
    const int n = std::min(chunk, total - start);
    const Mat x = data.image_range(Split::Test, start, n);
    const Mat logits = net.forward(x, nn::Mode::Eval);
    const IVec pred = losses::col_argmax(logits);
    const IVec labels = data.label_range(Split::Test, start, n);
    for (int i = 0; i < n; ++i)
      if (pred[i] == labels[i]) ++hits;
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / total;
}

TeacherReport train_teacher(nn::Network& net, const Dataset& data,
                            const TeacherTrainConfig& cfg) {
  if (cfg.epochs < 0.0) throw argument_error("train_teacher: epochs must be >= 0");
  if (cfg.batch_size < 1)
    throw argument_error("train_teacher: batch_size must be >= 1");

  const int train_count = data.count(Split::Train);
  const int steps_per_epoch = train_count / cfg.batch_size;
  if (steps_per_epoch < 1 && cfg.epochs > 0.0)
    throw argument_error("train_teacher: batch larger than the training split");
  const long total_steps =
      static_cast<long>(std::floor(cfg.epochs * steps_per_epoch));

  Rng rng(cfg.seed, /*stream=*/0x7EAC);
  nn::Adam opt(net.params(), cfg.lr);
  std::vector<int> order(train_count);
  for (int i = 0; i < train_count; ++i) order[i] = i;

  TeacherReport report;
  double epoch_loss = 0.0;
  std::vector<int> batch_idx(cfg.batch_size);
  for (long step = 0; step < total_steps; ++step) {
    const long pos_in_epoch = step % steps_per_epoch;
    if (pos_in_epoch == 0) {
      rng.shuffle(order);
      epoch_loss = 0.0;
    }
    for (int i = 0; i < cfg.batch_size; ++i)
      batch_idx[i] = order[pos_in_epoch * cfg.batch_size + i];
    const Mat x = data.images(Split::Train, batch_idx);
    IVec y(cfg.batch_size);
    for (int i = 0; i < cfg.batch_size; ++i)
      y[i] = data.train_labels[batch_idx[i]];

    const Mat logits = net.forward(x, nn::Mode::Train);
    const auto ce = losses::cross_entropy(logits, y);
    if (!std::isfinite(ce.value))
      throw training_diverged("teacher CE is non-finite",
                              static_cast<int>(step / steps_per_epoch), step);
    epoch_loss += ce.value;
    net.zero_grad();
    net.backward(ce.d_logits, true);
    opt.step();

    if (pos_in_epoch == steps_per_epoch - 1) {
      report.epoch_acc.push_back(evaluate_classifier(net, data));
      report.final_train_loss = epoch_loss / steps_per_epoch;
    }
  }
  report.steps_run = total_steps;
  report.final_acc1 = evaluate_classifier(net, data);
  return report;
}

void save_teacher(const std::filesystem::path& path, nn::Network& net,
                  const TeacherMeta& meta) {
  std::filesystem::create_directories(path.parent_path().empty()
                                          ? "."
                                          : path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw setup_error("cannot write teacher checkpoint " + path.string());
  nn::write_tag(os, "teacher-v1");
  nn::write_tag(os, meta.arch);
  nn::write_tag(os, meta.dataset);
  const std::int32_t dims[4] = {meta.input.c, meta.input.h, meta.input.w,
                                meta.classes};
  os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  os.write(reinterpret_cast<const char*>(&meta.acc1), sizeof(meta.acc1));
  os.write(reinterpret_cast<const char*>(&meta.epochs_trained),
           sizeof(meta.epochs_trained));
  net.save(os);
}

nn::Network load_teacher(const std::filesystem::path& path, TeacherMeta* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw setup_error("teacher checkpoint not found: " + path.string() +
                      " (run the train-teacher command first)");
  nn::expect_tag(is, "teacher-v1");

  TeacherMeta m;
  {
    // tags were written with write_tag; reuse expect machinery manually
    auto read_tag = [&is]() {
      std::uint32_t len = 0;
      is.read(reinterpret_cast<char*>(&len), sizeof(len));
      if (!is || len > 256) throw data_error("teacher checkpoint: corrupt tag");
      std::string s(len, '\0');
      is.read(s.data(), len);
      return s;
    };
    m.arch = read_tag();
    m.dataset = read_tag();
  }
  std::int32_t dims[4] = {0, 0, 0, 0};
  is.read(reinterpret_cast<char*>(dims), sizeof(dims));
  m.input = {dims[0], dims[1], dims[2]};
  m.classes = dims[3];
  is.read(reinterpret_cast<char*>(&m.acc1), sizeof(m.acc1));
  is.read(reinterpret_cast<char*>(&m.epochs_trained), sizeof(m.epochs_trained));
  if (!is) throw data_error("teacher checkpoint: truncated header");

  nn::Network net = build_classifier(m.arch, m.input, m.classes, /*seed=*/0);
  net.load(is);
  if (meta) *meta = m;
  return net;
}

}  // namespace dfkd::harness
