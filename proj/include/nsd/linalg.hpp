#pragma once

#include <Eigen/Dense>

namespace nsd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

}  // namespace nsd
