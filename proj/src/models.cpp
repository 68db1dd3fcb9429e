#include "dfkd/models.hpp"

#include "dfkd/errors.hpp"

namespace dfkd::harness {

nn::Network build_classifier(const std::string& arch, nn::Shape input,
                             int classes, std::uint64_t seed) {
  if (input.h % 4 != 0 || input.w % 4 != 0)
    throw argument_error("build_classifier: input H/W must be divisible by 4");
  Rng rng(seed, /*stream=*/0xC1A55);

  nn::Network net(input);
  auto conv_block = [&](int channels, bool pool) {
    net.emplace<nn::Conv2d>(channels, 3, 1, 1, rng);
    net.emplace<nn::BatchNorm>();
    net.emplace<nn::ReLU>();
    if (pool) net.emplace<nn::MaxPool2>();
  };
  auto dense_block = [&](int features) {
    net.emplace<nn::Dense>(features, rng);
    net.emplace<nn::BatchNorm>();
    net.emplace<nn::ReLU>();
  };

  if (arch == "cnn_t") {
    conv_block(16, true);
    conv_block(32, true);
    conv_block(32, false);
    dense_block(176);
    net.emplace<nn::Dense>(classes, rng);
  } else if (arch == "cnn_s") {
    conv_block(8, true);
    conv_block(16, true);
    dense_block(96);
    net.emplace<nn::Dense>(classes, rng);
  } else {
    throw argument_error("unknown classifier architecture '" + arch + "'");
  }
  return net;
}

}  // namespace dfkd::harness
