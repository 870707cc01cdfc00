// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

namespace semrec {

using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace semrec
