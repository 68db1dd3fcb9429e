#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfkd/nn.hpp"
#include "dfkd/types.hpp"

namespace dfkd::harness {

enum class Split { Train, Test };

// Image classification data kept as raw bytes; batches materialize to
// doubles in [0, 1] on demand.
struct Dataset {
  std::string id;
  nn::Shape shape;
  int classes = 0;
  std::vector<std::uint8_t> train_pixels;
  std::vector<int> train_labels;
  std::vector<std::uint8_t> test_pixels;
  std::vector<int> test_labels;

  int count(Split split) const;
  Mat images(Split split, const std::vector<int>& indices) const;
  Mat image_range(Split split, int start, int n) const;
  IVec label_range(Split split, int start, int n) const;
};

// ids: "mnist", "fashion_mnist" (IDX files), "cifar10_subset" (first 5000
// train / 1000 test images of the CIFAR-10 binary batches). Throws
// setup_error with fetch instructions when files are absent.
Dataset load_dataset(const std::string& id, const std::filesystem::path& data_dir);

// Raw IDX readers (big-endian headers).
std::vector<std::uint8_t> read_idx_images(const std::filesystem::path& path,
                                          int* rows, int* cols);
std::vector<int> read_idx_labels(const std::filesystem::path& path);

}  // namespace dfkd::harness
