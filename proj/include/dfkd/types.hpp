#pragma once

#include <Eigen/Core>

namespace dfkd {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using IVec = Eigen::VectorXi;

// Floor used inside every log() on probability-like quantities.
inline constexpr double kLogFloor = 1e-12;

}  // namespace dfkd
