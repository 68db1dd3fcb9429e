#pragma once

#include <cstdint>
#include <string>

#include "dfkd/nn.hpp"

namespace dfkd::harness {

// Classifier zoo. Both nets end in raw logits; every block carries a
// batch-norm layer (the statistics-alignment loss needs at least one).
//   cnn_t  teacher-sized  (~290K params on 1x28x28 input)
//   cnn_s  student-sized  (~78K params on 1x28x28 input)
// Input H and W must be divisible by 4.
nn::Network build_classifier(const std::string& arch, nn::Shape input,
                             int classes, std::uint64_t seed);

}  // namespace dfkd::harness
