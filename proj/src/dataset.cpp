#include "dfkd/dataset.hpp"

#include <algorithm>
#include <fstream>

#include "dfkd/errors.hpp"

namespace dfkd::harness {
namespace {

std::uint32_t read_be32(std::istream& in) {
  std::uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

[[noreturn]] void missing_dataset(const std::string& id,
                                  const std::filesystem::path& dir) {
  throw setup_error(
      "dataset '" + id + "' not found under " + dir.string() +
      ".\nFetch it first, e.g.:\n"
      "  scripts/fetch_mnist.sh <data_dir>      # mnist (and fashion_mnist when available)\n"
      "For cifar10_subset, place the CIFAR-10 binary files data_batch_1.bin and\n"
      "test_batch.bin under <data_dir>/cifar10/ (from the official cifar-10-binary\n"
      "archive).");
}

Dataset load_idx_pair(const std::string& id, const std::filesystem::path& dir) {
  const auto img_train = dir / "train-images-idx3-ubyte";
  const auto lbl_train = dir / "train-labels-idx1-ubyte";
  const auto img_test = dir / "t10k-images-idx3-ubyte";
  const auto lbl_test = dir / "t10k-labels-idx1-ubyte";
  for (const auto& p : {img_train, lbl_train, img_test, lbl_test})
    if (!std::filesystem::exists(p)) missing_dataset(id, dir);

  Dataset d;
  d.id = id;
  int rows = 0, cols = 0;
  d.train_pixels = read_idx_images(img_train, &rows, &cols);
  d.train_labels = read_idx_labels(lbl_train);
  int rows2 = 0, cols2 = 0;
  d.test_pixels = read_idx_images(img_test, &rows2, &cols2);
  d.test_labels = read_idx_labels(lbl_test);
  if (rows != rows2 || cols != cols2)
    throw data_error(id + ": train/test image sizes differ");
  d.shape = {1, rows, cols};
  int max_label = 0;
  for (int l : d.train_labels) max_label = std::max(max_label, l);
  for (int l : d.test_labels) max_label = std::max(max_label, l);
  d.classes = max_label + 1;
  if (d.train_pixels.size() != d.train_labels.size() * std::size_t(rows * cols) ||
      d.test_pixels.size() != d.test_labels.size() * std::size_t(rows * cols))
    throw data_error(id + ": image/label counts disagree");
  return d;
}

Dataset load_cifar_subset(const std::filesystem::path& dir) {
  const auto train_bin = dir / "data_batch_1.bin";
  const auto test_bin = dir / "test_batch.bin";
  if (!std::filesystem::exists(train_bin) || !std::filesystem::exists(test_bin))
    missing_dataset("cifar10_subset", dir);

  constexpr int kTrain = 5000, kTest = 1000, kPixels = 3 * 32 * 32;
  auto read_some = [&](const std::filesystem::path& p, int n,
                       std::vector<std::uint8_t>& pixels,
                       std::vector<int>& labels) {
    std::ifstream in(p, std::ios::binary);
    pixels.resize(std::size_t(n) * kPixels);
    labels.resize(n);
    for (int i = 0; i < n; ++i) {
      char label = 0;
      in.read(&label, 1);
      in.read(reinterpret_cast<char*>(pixels.data() + std::size_t(i) * kPixels),
              kPixels);
      labels[i] = static_cast<int>(static_cast<unsigned char>(label));
    }
    if (!in) throw data_error("cifar10_subset: truncated file " + p.string());
  };

  Dataset d;
  d.id = "cifar10_subset";
  d.shape = {3, 32, 32};
  d.classes = 10;
  read_some(train_bin, kTrain, d.train_pixels, d.train_labels);
  read_some(test_bin, kTest, d.test_pixels, d.test_labels);
  return d;
}

}  // namespace

std::vector<std::uint8_t> read_idx_images(const std::filesystem::path& path,
                                          int* rows, int* cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw setup_error("cannot open " + path.string());
  if (read_be32(in) != 2051)
    throw data_error(path.string() + ": bad IDX image magic");
  const std::uint32_t n = read_be32(in);
  *rows = static_cast<int>(read_be32(in));
  *cols = static_cast<int>(read_be32(in));
  std::vector<std::uint8_t> pixels(std::size_t(n) * *rows * *cols);
  in.read(reinterpret_cast<char*>(pixels.data()),
          static_cast<std::streamsize>(pixels.size()));
  if (!in) throw data_error(path.string() + ": truncated IDX image file");
  return pixels;
}

std::vector<int> read_idx_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw setup_error("cannot open " + path.string());
  if (read_be32(in) != 2049)
    throw data_error(path.string() + ": bad IDX label magic");
  const std::uint32_t n = read_be32(in);
  std::vector<std::uint8_t> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), n);
  if (!in) throw data_error(path.string() + ": truncated IDX label file");
  return {raw.begin(), raw.end()};
}

int Dataset::count(Split split) const {
  return static_cast<int>(split == Split::Train ? train_labels.size()
                                                : test_labels.size());
}

Mat Dataset::images(Split split, const std::vector<int>& indices) const {
  const auto& pixels = split == Split::Train ? train_pixels : test_pixels;
  const int dim = shape.flat();
  Mat out(dim, static_cast<Eigen::Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const std::size_t base = std::size_t(indices[j]) * dim;
    if (base + dim > pixels.size())
      throw argument_error("Dataset::images: index out of range");
    for (int i = 0; i < dim; ++i)
      out(i, static_cast<Eigen::Index>(j)) = pixels[base + i] / 255.0;
  }
  return out;
}

Mat Dataset::image_range(Split split, int start, int n) const {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = start + i;
  return images(split, idx);
}

IVec Dataset::label_range(Split split, int start, int n) const {
  const auto& labels = split == Split::Train ? train_labels : test_labels;
  if (start < 0 || start + n > static_cast<int>(labels.size()))
    throw argument_error("Dataset::label_range: out of range");
  IVec out(n);
  for (int i = 0; i < n; ++i) out[i] = labels[start + i];
  return out;
}

Dataset load_dataset(const std::string& id,
                     const std::filesystem::path& data_dir) {
  if (id == "mnist") return load_idx_pair(id, data_dir / "mnist");
  if (id == "fashion_mnist")
    return load_idx_pair(id, data_dir / "fashion_mnist");
  if (id == "cifar10_subset") return load_cifar_subset(data_dir / "cifar10");
  throw argument_error("unknown dataset id '" + id +
                       "' (expected mnist|fashion_mnist|cifar10_subset)");
}

}  // namespace dfkd::harness
