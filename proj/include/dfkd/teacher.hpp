#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfkd/dataset.hpp"
#include "dfkd/nn.hpp"

namespace dfkd::harness {

struct TeacherTrainConfig {
  double epochs = 6.0;  // fractional values truncate the final epoch
  int batch_size = 128;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct TeacherReport {
  double final_acc1 = 0.0;        // scratch test accuracy of the checkpoint
  double final_train_loss = 0.0;  // mean CE over the last trained epoch
  long steps_run = 0;
  std::vector<double> epoch_acc;  // test accuracy after each full epoch
};

// Supervised cross-entropy training from scratch. A truncated schedule
// (epochs below the convergence budget) is how noisy teachers are built; the
// step sequence for a truncated run is a prefix of the full run's.
TeacherReport train_teacher(nn::Network& net, const Dataset& data,
                            const TeacherTrainConfig& cfg);

// Test-split top-1 accuracy, evaluated in chunks.
double evaluate_classifier(nn::Network& net, const Dataset& data,
                           int chunk = 1000);

// Teacher checkpoint: architecture + dataset metadata + parameters + the
// scratch accuracy recorded at save time.
struct TeacherMeta {
  std::string arch;
  std::string dataset;
  nn::Shape input{};
  int classes = 0;
  double acc1 = 0.0;
  double epochs_trained = 0.0;
};

void save_teacher(const std::filesystem::path& path, nn::Network& net,
                  const TeacherMeta& meta);
nn::Network load_teacher(const std::filesystem::path& path, TeacherMeta* meta);

}  // namespace dfkd::harness
